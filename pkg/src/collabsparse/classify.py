"""Minimal-residual classification and the per-sensor majority-vote baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .admm import solve
from .core import (Decomposition, MultiSensorObservation, SolverConfig, StructuredDictionary,
                   Variant, validate_pair)
from .errors import ConfigError
from .kernels import GramSystem, kernel_class_residuals


@dataclass(frozen=True)
class ClassDecision:
    """Winning class index, per-class residuals, and runner-up minus winner."""

    label: int
    residuals: tuple[float, ...]
    margin: float

    @classmethod
    def from_residuals(cls, residuals) -> "ClassDecision":
        r = np.asarray(residuals, dtype=float)
        label = int(np.argmin(r))  # first minimum: lowest index wins ties
        rest = np.delete(r, label)
        margin = float(rest.min() - r[label]) if rest.size else 0.0
        return cls(label, tuple(float(v) for v in r), margin)


def class_residuals(dictionary: StructuredDictionary, obs: MultiSensorObservation,
                    dec: Decomposition) -> np.ndarray:
    """``sum_m ||Y^m - D^m_c A^m_c - L^m - E^m||_F^2`` for every class ``c``.

    The recovered ``L`` and ``E`` carry no class index, so the full matrices
    are removed for every class.
    """
    Y = obs.data
    corr = dec.corruption_stacked()
    if corr is not None:
        Y = Y - corr
    A = dec.coeffs.stacked()
    offs = dictionary.class_offsets
    out = np.empty(dictionary.C)
    for c in range(dictionary.C):
        s = slice(offs[c], offs[c + 1])
        R = Y - dictionary.atoms[:, :, s] @ A[:, s, :]
        out[c] = float(np.sum(R * R))
    return out


def _check_decomposition(dec: Decomposition, variant) -> Variant:
    v = Variant(variant)
    if (dec.lowrank is not None) != v.uses_lowrank or (dec.sparse_err is not None) != v.uses_sparse_err:
        raise ConfigError(f"decomposition does not match variant {v.value}")
    return v


def classify_linear(dictionary: StructuredDictionary, obs: MultiSensorObservation,
                    dec: Decomposition, variant) -> ClassDecision:
    validate_pair(dictionary, obs)
    _check_decomposition(dec, variant)
    return ClassDecision.from_residuals(class_residuals(dictionary, obs, dec))


def classify_kernel(gram: GramSystem, dec: Decomposition, variant=Variant.JSR) -> ClassDecision:
    _check_decomposition(dec, variant)
    return ClassDecision.from_residuals(kernel_class_residuals(gram, dec))


def majority_vote_baseline(dictionary: StructuredDictionary, obs: MultiSensorObservation,
                           cfg: SolverConfig | None = None) -> ClassDecision:
    """Classify every sensor on its own with JSR and return the most frequent label.

    The reported residual of a class is the number of sensors that did not
    vote for it, so the usual argmin and lowest-index tie rule apply.
    """
    validate_pair(dictionary, obs)
    cfg = (cfg or SolverConfig()).replace(variant=Variant.JSR)
    votes = np.zeros(dictionary.C, dtype=int)
    for m in range(dictionary.M):
        d_m, y_m = dictionary.select_sensors([m]), obs.select_sensors([m])
        votes[classify_linear(d_m, y_m, solve(d_m, y_m, cfg), Variant.JSR).label] += 1
    return ClassDecision.from_residuals(dictionary.M - votes)


def write_decisions(path, rows: Iterable[tuple[str, int | None, ClassDecision]], n_classes: int) -> None:
    """CSV with one row per test sample: id, true label, prediction, residuals, margin."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "true_label", "predicted"]
                   + [f"residual_{c}" for c in range(n_classes)] + ["margin"])
        for sample_id, truth, d in rows:
            w.writerow([sample_id, "" if truth is None else truth, d.label]
                       + [f"{r:.17g}" for r in d.residuals] + [f"{d.margin:.17g}"])
