"""Labeled multi-sensor feature datasets and their on-disk directory format.

A dataset directory holds ``manifest.json`` plus one CSV per sample and
sensor. Each CSV has ``N`` lines (one feature per line); with ``T > 1``
segments a line carries ``T`` comma-separated values. Values are written with
17 significant digits, so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import MultiSensorObservation, StructuredDictionary, build_dictionary
from .errors import ConfigError, DatasetIOError, DimensionError

FORMAT_NAME = "collabsparse-dataset"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LabeledSample:
    """One event seen by every sensor: ``features`` has shape ``(M, N, T)``."""

    sample_id: str
    label: int
    features: np.ndarray

    def observation(self, sensors: Sequence[int] | None = None) -> MultiSensorObservation:
        data = self.features if sensors is None else self.features[list(sensors)]
        return MultiSensorObservation(data)


@dataclass
class Dataset:
    """Train and test samples over a common class list and sensor layout."""

    classes: tuple[Any, ...]
    n_sensors: int
    n_features: int
    segments: int
    train: list[LabeledSample]
    test: list[LabeledSample]
    sample_rate: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.n_sensors, self.n_features, self.segments)
        for s in (*self.train, *self.test):
            if s.features.shape != shape:
                raise DimensionError(f"sample {s.sample_id}: shape {s.features.shape}, expected {shape}")
            if not 0 <= s.label < len(self.classes):
                raise ConfigError(f"sample {s.sample_id}: label {s.label} out of range")

    @property
    def sensor_ids(self) -> list[int]:
        return list(range(self.n_sensors))

    def dictionary(self, sensors: Sequence[int] | None = None, samples=None,
                   normalize: bool = True) -> StructuredDictionary:
        """Structured dictionary whose atoms are the segments of the training samples."""
        samples = self.train if samples is None else samples
        sensors = self.sensor_ids if sensors is None else list(sensors)
        if not sensors:
            raise ConfigError("empty sensor set")
        per_class = []
        for c in range(len(self.classes)):
            members = [s for s in samples if s.label == c]
            if not members:
                raise ConfigError(f"class {self.classes[c]!r} has no training samples")
            per_class.append([np.hstack([s.features[m] for s in members]) for m in sensors])
        return build_dictionary(per_class, class_labels=self.classes, normalize=normalize)


def _fmt_row(values) -> str:
    return ",".join(f"{v:.17g}" for v in values)


def write_dataset(ds: Dataset, path) -> Path:
    """Write ``ds`` as a dataset directory (created if needed)."""
    root = Path(path)
    entries = []
    try:
        for split, samples in (("train", ds.train), ("test", ds.test)):
            (root / split).mkdir(parents=True, exist_ok=True)
            for s in samples:
                files = []
                for m in range(ds.n_sensors):
                    rel = f"{split}/{s.sample_id}_s{m + 1}.csv"
                    text = "".join(_fmt_row(row) + "\n" for row in s.features[m])
                    (root / rel).write_text(text, encoding="utf-8")
                    files.append(rel)
                entries.append({"id": s.sample_id, "split": split, "label": int(s.label), "files": files})
        manifest = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "classes": list(ds.classes),
            "sensors": [f"s{m + 1}" for m in range(ds.n_sensors)],
            "n_features": ds.n_features,
            "segments": ds.segments,
            "sample_rate": ds.sample_rate,
            "meta": ds.meta,
            "samples": entries,
        }
        (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write dataset to {root}: {exc}") from exc
    return root


def _read_matrix(path: Path, n: int, t: int) -> np.ndarray:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    try:
        rows = [[float(v) for v in line.split(",")] for line in lines if line.strip()]
    except ValueError as exc:
        raise DatasetIOError(f"{path}: {exc}") from exc
    mat = np.array(rows, dtype=float)
    if mat.shape != (n, t):
        raise DatasetIOError(f"{path}: expected {n} rows of {t} values, got shape {mat.shape}")
    return mat


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by :func:`write_dataset`."""
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetIOError(f"cannot read manifest in {root}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"{root / 'manifest.json'}: line {exc.lineno}: {exc.msg}") from exc
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise DatasetIOError(f"{root}: unsupported manifest format/version")
    try:
        n, t = int(manifest["n_features"]), int(manifest["segments"])
        m = len(manifest["sensors"])
        split = {"train": [], "test": []}
        for e in manifest["samples"]:
            if len(e["files"]) != m:
                raise DatasetIOError(f"sample {e['id']}: {len(e['files'])} files for {m} sensors")
            feats = np.stack([_read_matrix(root / f, n, t) for f in e["files"]])
            split[e["split"]].append(LabeledSample(e["id"], int(e["label"]), feats))
        return Dataset(tuple(manifest["classes"]), m, n, t, split["train"], split["test"],
                       sample_rate=manifest.get("sample_rate"), meta=manifest.get("meta", {}))
    except KeyError as exc:
        raise DatasetIOError(f"{root}: manifest missing field {exc}") from exc
