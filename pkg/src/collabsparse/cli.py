"""Command-line front end: ``gen``, ``cv``, ``run`` and ``trace``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import CollabSparseError, ConfigError, DatasetIOError, NumericalError
from .experiment import (cmd_cv, cmd_run, cmd_trace, experiment_preset, load_config, load_json,
                         read_results)
from .synth import PRESETS, SynthConfig, make_dataset

log = logging.getLogger("collabsparse")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collabsparse",
                                description="Multi-sensor joint sparse classification experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, text in (("gen", "generate a synthetic dataset"),
                       ("cv", "cross-validate regularization weights"),
                       ("run", "evaluate methods and write results.csv"),
                       ("trace", "write the convergence trace of one solve")):
        s = sub.add_parser(verb, help=text)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="JSON configuration file")
        src.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--seed", type=_seed, help="override the configured seed")
        if verb != "gen":
            s.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


def _synth_config(args) -> SynthConfig:
    if args.preset:
        cfg = PRESETS[args.preset]
    else:
        raw = load_json(args.config)
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        cfg = SynthConfig.from_dict(raw)
    return cfg if args.seed is None else cfg.replace(seed=args.seed)


def _experiment_config(args):
    cfg = experiment_preset(args.preset) if args.preset else load_config(args.config)
    return cfg if args.seed is None else cfg.replace(seed=args.seed)


def _dispatch(args) -> None:
    if args.verb == "gen":
        if args.out is None:
            raise ConfigError("gen needs --out")
        cfg = _synth_config(args)
        ds = make_dataset(cfg, args.out)
        print(f"wrote {len(ds.train)} train / {len(ds.test)} test samples "
              f"(C={len(ds.classes)}, M={ds.n_sensors}, N={ds.n_features}, T={ds.segments}) to {args.out}")
        return
    cfg = _experiment_config(args)
    if args.verb == "cv":
        selected = cmd_cv(cfg, args.out, args.jobs)
        print(json.dumps(selected, sort_keys=True))
    elif args.verb == "run":
        path = cmd_run(cfg, args.out, args.jobs)
        for row in read_results(path):
            if row["class"] == "all":
                print(f"{row['snr_db'] or '-':>6} {row['sensor_set']:<12} {row['variant']:<10} "
                      f"{row['accuracy']} ({row['failed']} failed)")
        print(f"wrote {path}")
    else:
        print(f"wrote {cmd_trace(cfg, args.out)}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except (CollabSparseError, OSError) as exc:
        code = exc.exit_code if isinstance(exc, CollabSparseError) else DatasetIOError.exit_code
        print(f"error: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
