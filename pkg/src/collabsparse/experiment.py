"""Experiment configuration, lambda cross-validation and accuracy runs.

A run evaluates every (SNR, sensor set, method) combination on the test
samples of a dataset and writes ``results.csv``. The dataset is either read
from a dataset directory or generated from a synthetic configuration, once
per entry of an optional SNR sweep.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .admm import max_gram_eigen, solve, solve_many
from .classify import ClassDecision, class_residuals, majority_vote_baseline, write_decisions
from .core import MultiSensorObservation, SolverConfig, StructuredDictionary, Variant
from .dataset import Dataset, LabeledSample, load_dataset
from .errors import ConfigError, DatasetIOError, NumericalError
from .kernels import KernelSpec, build_gram, kernel_class_residuals, solve_kernel, solve_kernel_many
from .synth import PRESETS, SynthConfig, make_dataset

CONFIG_VERSION = 1
BATCH = 64

LINEAR_METHODS = tuple(v.value for v in Variant)
KERNEL_METHODS = {"KerJSR": Variant.JSR, "KerGJSR+L": Variant.GJSR_L}
VOTE_METHOD = "MV"
METHODS = LINEAR_METHODS + tuple(KERNEL_METHODS) + (VOTE_METHOD,)

DEFAULT_GRIDS = {
    "lambda_L": (0.5, 1.0, 2.0, 4.0, 8.0, 16.0),
    "lambda_G": (0.0, 0.25, 0.5, 1.0, 2.0),
    "lambda_E": (0.05, 0.1, 0.2, 0.4),
}
DEFAULT_LAMBDAS = {"lambda_L": 8.0, "lambda_G": 1.0, "lambda_E": 0.1}
LAMBDA_NAMES = ("lambda_L", "lambda_G", "lambda_E")
SOLVER_FIELDS = ("mu", "max_iters", "tol_feas", "tol_change", "theta_safety")
SNR_SWEEP = (15.0, 9.0, 3.0, 0.0, -6.0, -12.0)


def method_variant(method: str) -> Variant | None:
    if method in KERNEL_METHODS:
        return KERNEL_METHODS[method]
    if method == VOTE_METHOD:
        return Variant.JSR
    return Variant(method)


def method_lambdas(method: str) -> tuple[str, ...]:
    """The regularization weights a method actually uses."""
    v = method_variant(method)
    names = []
    if v.uses_lowrank:
        names.append("lambda_L")
    if v.uses_group:
        names.append("lambda_G")
    if v.uses_sparse_err:
        names.append("lambda_E")
    return tuple(names)


def sensor_set_label(sensors: Sequence[int]) -> str:
    """1-based range label, e.g. ``[0, 1, 4, 5, 6] -> "S1-2,5-7"``."""
    idx = sorted(int(s) + 1 for s in sensors)
    parts = []
    for _, grp in itertools.groupby(enumerate(idx), key=lambda p: p[1] - p[0]):
        run = [v for _, v in grp]
        parts.append(str(run[0]) if len(run) == 1 else f"{run[0]}-{run[-1]}")
    return "S" + ",".join(parts)


@dataclass(frozen=True)
class ExperimentConfig:
    """What to run. ``lambdas`` maps weight names to values, optionally per method
    (``{"GJSR+L": {"lambda_L": 8, "lambda_G": 1}}``); a string is read as the
    path of a ``selected.json`` written by cross-validation."""

    dataset: str | None = None
    synth: SynthConfig | None = None
    snr_sweep: tuple[float, ...] = ()
    variants: tuple[str, ...] = ("JSR", "JSR+L", "GJSR+L")
    kernel: KernelSpec | None = None
    sensor_sets: tuple[tuple[int, ...], ...] = ()
    grids: dict = field(default_factory=lambda: dict(DEFAULT_GRIDS))
    lambdas: dict = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    cv_folds: int = 2
    solver: dict = field(default_factory=dict)
    normalize_observations: bool = True
    save_decisions: bool = False
    trace_sample: int = 0
    out: str | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.dataset is None) == (self.synth is None):
            raise ConfigError("exactly one of 'dataset' and 'synth' must be given")
        if self.snr_sweep and self.synth is None:
            raise ConfigError("'snr_sweep' needs a 'synth' data source")
        if not self.variants:
            raise ConfigError("'variants' is empty")
        for v in self.variants:
            if v not in METHODS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {list(METHODS)}")
        for s in self.sensor_sets:
            if not s:
                raise ConfigError("empty sensor set")
            if len(set(s)) != len(s) or min(s) < 0:
                raise ConfigError(f"invalid sensor set {list(s)}")
        for name, grid in self.grids.items():
            if name not in LAMBDA_NAMES:
                raise ConfigError(f"unknown grid {name!r}")
            if any(not (isinstance(g, (int, float)) and math.isfinite(g)) for g in grid):
                raise ConfigError(f"grid {name} has non-finite entries")
        if int(self.cv_folds) < 2:
            raise ConfigError("cv_folds must be >= 2")
        unknown = set(self.solver) - set(SOLVER_FIELDS)
        if unknown:
            raise ConfigError(f"unknown solver field(s): {', '.join(sorted(unknown))}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def lambdas_for(self, method: str) -> dict:
        table = self.lambdas
        if isinstance(table, str):
            table = read_selection(table)
        out = dict(DEFAULT_LAMBDAS)
        out.update({k: v for k, v in table.items() if k in LAMBDA_NAMES})
        if isinstance(table.get(method), dict):
            out.update(table[method])
        return out

    def solver_config(self, method: str, **lambdas) -> SolverConfig:
        lam = self.lambdas_for(method)
        lam.update(lambdas)
        return SolverConfig(variant=method_variant(method), **lam, **self.solver)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["synth"] = None if self.synth is None else self.synth.to_dict()
        d["kernel"] = None if self.kernel is None else dataclasses.asdict(self.kernel)
        return {"version": CONFIG_VERSION, **d}


def _as_tuple(value, name, conv=float):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"field '{name}' must be a list")
    return tuple(conv(v) for v in value)


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("experiment config must be a JSON object")
    d = dict(d)
    version = d.pop("version", None)
    if version != CONFIG_VERSION:
        raise ConfigError(f"field 'version': expected {CONFIG_VERSION}, got {version!r}")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    try:
        if d.get("synth") is not None:
            s = d["synth"]
            d["synth"] = PRESETS[s] if isinstance(s, str) else SynthConfig.from_dict(s)
        if d.get("kernel") is not None:
            d["kernel"] = KernelSpec(**d["kernel"])
        if "snr_sweep" in d:
            d["snr_sweep"] = _as_tuple(d["snr_sweep"], "snr_sweep")
        if "variants" in d:
            d["variants"] = _as_tuple(d["variants"], "variants", str)
        if "sensor_sets" in d:
            d["sensor_sets"] = tuple(_as_tuple(s, "sensor_sets", int)
                                     for s in _as_tuple(d["sensor_sets"], "sensor_sets", list))
        if "grids" in d:
            d["grids"] = {k: _as_tuple(v, f"grids.{k}") for k, v in d["grids"].items()}
        return ExperimentConfig(**d)
    except KeyError as exc:
        raise ConfigError(f"field 'synth': unknown preset {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid field value: {exc}") from None


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_config(path) -> ExperimentConfig:
    return config_from_dict(load_json(path))


def read_selection(path) -> dict:
    sel = load_json(path)
    if not isinstance(sel, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return sel


def experiment_preset(name: str = "exp1", seed: int = 0) -> ExperimentConfig:
    """Interference sweep on a synthetic preset at the ``lambda_G = 1, lambda_L = 8`` operating point."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return ExperimentConfig(synth=PRESETS[name], snr_sweep=SNR_SWEEP, seed=seed,
                            variants=("JSR", "JSR+L", "GJSR+L"))


# --- data -------------------------------------------------------------------

def _datasets(cfg: ExperimentConfig):
    """Yield ``(snr_or_None, Dataset)`` pairs."""
    if cfg.dataset is not None:
        yield None, load_dataset(cfg.dataset)
        return
    base = cfg.synth.replace(seed=int(cfg.seed))
    for snr in (cfg.snr_sweep or (base.snr_db,)):
        yield float(snr), make_dataset(base.replace(snr_db=float(snr)))


def _training_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset)
    # training data is clean, so the SNR does not matter here
    return make_dataset(cfg.synth.replace(seed=int(cfg.seed), test_per_class=1))


def _sensor_sets(cfg: ExperimentConfig, ds: Dataset) -> list[tuple[int, ...]]:
    sets = cfg.sensor_sets or (tuple(range(ds.n_sensors)),)
    for s in sets:
        if max(s) >= ds.n_sensors:
            raise ConfigError(f"sensor set {sensor_set_label(s)} exceeds the {ds.n_sensors} sensors")
    return [tuple(s) for s in sets]


def _observations(samples: Sequence[LabeledSample], sensors, normalize: bool):
    obs = [s.observation(sensors) for s in samples]
    return [o.normalized() for o in obs] if normalize else obs


# --- evaluation -------------------------------------------------------------

def _decide_batch(method: str, dictionary: StructuredDictionary, obs: list[MultiSensorObservation],
                  solver_cfg: SolverConfig, kernel: KernelSpec | None, sigma: float | None):
    """Decisions (or NumericalError instances) for one batch of observations."""
    if method == VOTE_METHOD:
        out = []
        for o in obs:
            try:
                out.append(majority_vote_baseline(dictionary, o, solver_cfg))
            except NumericalError as exc:
                out.append(exc)
        return out
    if method in KERNEL_METHODS:
        grams = build_gram(dictionary, obs, kernel or KernelSpec())
        decs = solve_kernel_many(grams, solver_cfg, errors="return")
        return [d if isinstance(d, Exception)
                else ClassDecision.from_residuals(kernel_class_residuals(g, d))
                for g, d in zip(grams, decs)]
    decs = solve_many(dictionary, obs, solver_cfg, sigma_max=sigma, batch_size=BATCH, errors="return")
    return [d if isinstance(d, Exception)
            else ClassDecision.from_residuals(class_residuals(dictionary, o, d))
            for o, d in zip(obs, decs)]


def _decide_task(args):
    return _decide_batch(*args)


def evaluate(method: str, dictionary: StructuredDictionary, obs: list[MultiSensorObservation],
             solver_cfg: SolverConfig, kernel: KernelSpec | None = None,
             pool: ProcessPoolExecutor | None = None) -> list:
    """Decide every observation. Batches are fixed, so results do not depend on ``pool``."""
    sigma = max_gram_eigen(dictionary) if method in LINEAR_METHODS else None
    tasks = [(method, dictionary, obs[i:i + BATCH], solver_cfg, kernel, sigma)
             for i in range(0, len(obs), BATCH)]
    results = pool.map(_decide_task, tasks) if pool is not None else map(_decide_task, tasks)
    return [d for batch in results for d in batch]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


RESULT_COLUMNS = ("snr_db", "sensor_set", "variant", "class", "samples", "failed",
                  "evaluated", "correct", "accuracy")


def _tally(snr, set_label, method, classes, labels, decisions) -> list[dict]:
    rows = []
    groups = [(str(c), [i for i, l in enumerate(labels) if l == k]) for k, c in enumerate(classes)]
    groups.append(("all", list(range(len(labels)))))
    for name, members in groups:
        failed = sum(isinstance(decisions[i], Exception) for i in members)
        correct = sum(not isinstance(decisions[i], Exception) and decisions[i].label == labels[i]
                      for i in members)
        evaluated = len(members) - failed
        rows.append({"snr_db": "" if snr is None else f"{snr:g}", "sensor_set": set_label,
                     "variant": method, "class": name, "samples": len(members), "failed": failed,
                     "evaluated": evaluated, "correct": correct,
                     "accuracy": _fmt(correct / evaluated) if evaluated else "nan"})
    return rows


def _row_key(row, method_order, class_order):
    snr = row["snr_db"]
    return (snr == "", -float(snr) if snr else 0.0, row["sensor_set"],
            method_order.get(row["variant"], len(method_order)),
            class_order.get(row["class"], len(class_order)))


def results_csv(rows: list[dict]) -> str:
    methods = {m: i for i, m in enumerate(METHODS)}
    classes = {}
    for r in rows:
        if r["class"] != "all":
            classes.setdefault(r["class"], len(classes))
    classes["all"] = len(classes)
    rows = sorted(rows, key=lambda r: _row_key(r, methods, classes))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _make_pool(jobs: int):
    return ProcessPoolExecutor(max_workers=jobs) if jobs and jobs > 1 else None


def cmd_run(cfg: ExperimentConfig, out=None, jobs: int = 1) -> Path:
    """Accuracy of every (SNR, sensor set, method); writes ``results.csv`` under ``out``."""
    out = Path(out or cfg.out or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {out}: {exc}") from exc
    rows = []
    pool = _make_pool(jobs)
    try:
        for snr, ds in _datasets(cfg):
            labels = [s.label for s in ds.test]
            for sensors in _sensor_sets(cfg, ds):
                label = sensor_set_label(sensors)
                dictionary = ds.dictionary(sensors)
                obs = _observations(ds.test, sensors, cfg.normalize_observations)
                for method in cfg.variants:
                    decisions = evaluate(method, dictionary, obs, cfg.solver_config(method),
                                         cfg.kernel, pool)
                    rows += _tally(snr, label, method, ds.classes, labels, decisions)
                    if cfg.save_decisions:
                        tag = f"{'' if snr is None else f'{snr:g}dB_'}{label}_{method}"
                        write_decisions(out / f"decisions_{tag}.csv",
                                        [(s.sample_id, s.label, d) for s, d in zip(ds.test, decisions)
                                         if not isinstance(d, Exception)], len(ds.classes))
    finally:
        if pool is not None:
            pool.shutdown()
    path = out / "results.csv"
    path.write_text(results_csv(rows), encoding="utf-8")
    return path


# --- cross-validation ---------------------------------------------------------

def fold_assignment(labels: Sequence[int], folds: int, seed: int) -> np.ndarray:
    """Stratified fold index per sample, from a seeded permutation within each class."""
    labels = np.asarray(labels)
    fold = np.empty(labels.size, dtype=int)
    rng = np.random.default_rng([int(seed), 7])
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        fold[idx[rng.permutation(idx.size)]] = np.arange(idx.size) % folds
    return fold


def lambda_grid(cfg: ExperimentConfig, method: str) -> list[dict]:
    names = method_lambdas(method)
    grids = []
    for n in names:
        g = cfg.grids.get(n, DEFAULT_GRIDS[n])
        if len(g) == 0:
            raise ConfigError(f"grid {n} is empty but {method} uses it")
        grids.append(sorted(float(v) for v in g))
    return [dict(zip(names, point)) for point in itertools.product(*grids)]


def select_point(points: list[dict], scores: Sequence[float]) -> dict:
    """Highest score; ties go to the lexicographically smallest ``(lambda_L, lambda_G, lambda_E)``."""
    best = max(scores)
    tied = [p for p, s in zip(points, scores) if s == best]
    return min(tied, key=lambda p: tuple(p.get(n, 0.0) for n in LAMBDA_NAMES))


def cmd_cv(cfg: ExperimentConfig, out=None, jobs: int = 1) -> dict:
    """Grid search of the weights of every method by k-fold CV on the training samples.

    Writes ``cv.csv`` (every grid point and fold) and ``selected.json``.
    """
    out = Path(out or cfg.out or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {out}: {exc}") from exc
    ds = _training_dataset(cfg)
    sensors = _sensor_sets(cfg, ds)[0]
    k = int(cfg.cv_folds)
    fold = fold_assignment([s.label for s in ds.train], k, cfg.seed)
    for f in range(k):
        held = {s.label for s, g in zip(ds.train, fold) if g != f}
        if len(held) < len(ds.classes):
            raise ConfigError(f"fold {f + 1}: a class has no remaining training samples")
    splits = []
    for f in range(k):
        train = [s for s, g in zip(ds.train, fold) if g != f]
        val = [s for s, g in zip(ds.train, fold) if g == f]
        splits.append((ds.dictionary(sensors, samples=train),
                       _observations(val, sensors, cfg.normalize_observations),
                       [s.label for s in val]))
    lines = [["variant", *LAMBDA_NAMES, *(f"fold_{f + 1}" for f in range(k)), "mean_accuracy"]]
    selected = {}
    pool = _make_pool(jobs)
    try:
        for method in cfg.variants:
            points = lambda_grid(cfg, method)
            scores = []
            for p in points:
                accs = []
                for dictionary, obs, labels in splits:
                    dec = evaluate(method, dictionary, obs, cfg.solver_config(method, **p),
                                   cfg.kernel, pool)
                    ok = [not isinstance(d, Exception) and d.label == l for d, l in zip(dec, labels)]
                    accs.append(sum(ok) / len(ok))
                scores.append(sum(accs) / k)
                lines.append([method, *(f"{p[n]:g}" if n in p else "" for n in LAMBDA_NAMES),
                              *(_fmt(a) for a in accs), _fmt(scores[-1])])
            selected[method] = select_point(points, scores)
    finally:
        if pool is not None:
            pool.shutdown()
    with open(out / "cv.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(lines)
    (out / "selected.json").write_text(json.dumps(selected, indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return selected


# --- single-solve trace -------------------------------------------------------

def cmd_trace(cfg: ExperimentConfig, out=None) -> Path:
    """Convergence trace (``trace.csv``) of one test sample under the first solver method."""
    out = Path(out or cfg.out or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {out}: {exc}") from exc
    method = next((m for m in cfg.variants if m != VOTE_METHOD), None)
    if method is None:
        raise ConfigError("no solver method among 'variants' to trace")
    snr, ds = next(iter(_datasets(cfg.replace(snr_sweep=cfg.snr_sweep[:1]))))
    if not 0 <= cfg.trace_sample < len(ds.test):
        raise ConfigError(f"trace_sample {cfg.trace_sample} out of range (0..{len(ds.test) - 1})")
    sensors = _sensor_sets(cfg, ds)[0]
    dictionary = ds.dictionary(sensors)
    obs = _observations([ds.test[cfg.trace_sample]], sensors, cfg.normalize_observations)[0]
    solver_cfg = cfg.solver_config(method)
    if method in KERNEL_METHODS:
        dec = solve_kernel(build_gram(dictionary, obs, cfg.kernel or KernelSpec()), solver_cfg)
    else:
        dec = solve(dictionary, obs, solver_cfg)
    path = out / "trace.csv"
    dec.trace.to_csv(path)
    return path


def read_results(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
