"""Event detection, overlapping segmentation and power-cepstrum features."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetIOError

DEFAULT_WINDOW = 4096
SPECTRAL_FLOOR = 1e-12


@dataclass(frozen=True)
class SegmentPlan:
    """``count`` segments of ``segment_len`` samples, consecutive ones overlapping
    by ``overlap_fraction``."""

    segment_len: int
    count: int = 1
    overlap_fraction: float = 0.75

    def __post_init__(self):
        if self.segment_len < 1 or self.count < 1:
            raise ConfigError("segment_len and count must be >= 1")
        if not 0 <= self.overlap_fraction < 1:
            raise ConfigError(f"overlap_fraction must lie in [0, 1), got {self.overlap_fraction}")

    @property
    def hop(self) -> int:
        return max(1, int(round(self.segment_len * (1.0 - self.overlap_fraction))))

    @property
    def span(self) -> int:
        return self.segment_len + (self.count - 1) * self.hop

    def starts(self, center: int) -> np.ndarray:
        """Segment start indices, placed symmetrically around ``center``."""
        first = int(center) - self.span // 2
        return first + self.hop * np.arange(self.count)


def detect_event(signal, window: int = DEFAULT_WINDOW) -> int:
    """Center of the rectangular window with the largest short-time energy.

    Windows advance by ``window // 4``; ties go to the earliest window.
    """
    x = np.asarray(signal, dtype=float).ravel()
    if window < 1 or x.size < window:
        raise ConfigError(f"signal of length {x.size} is shorter than the window ({window})")
    hop = max(1, window // 4)
    frames = np.lib.stride_tricks.sliding_window_view(x * x, window)[::hop]
    energy = frames.sum(axis=1)
    return int(np.argmax(energy)) * hop + window // 2


def segment(signal, center: int, plan: SegmentPlan) -> list[np.ndarray]:
    """Cut ``plan.count`` overlapping segments around ``center``.

    Segments reaching past either end of the signal are completed by mirror
    reflection of the signal, so every segment has full length.
    """
    x = np.asarray(signal, dtype=float).ravel()
    if x.size < 2:
        raise ConfigError("signal must have at least two samples")
    starts = plan.starts(center)
    lo = max(0, -int(starts[0]))
    hi = max(0, int(starts[-1]) + plan.segment_len - x.size)
    padded = np.pad(x, (lo, hi), mode="reflect") if lo or hi else x
    return [padded[s + lo:s + lo + plan.segment_len].copy() for s in starts]


def power_cepstrum(segment, keep: int) -> np.ndarray:
    """Power cepstrum ``|IFFT(log10 |FFT(y)|^2)|^2``, coefficients ``1..keep``.

    The power spectrum is floored at ``1e-12`` times its maximum before the
    logarithm. Coefficient 0 is discarded.
    """
    y = np.asarray(segment, dtype=float).ravel()
    if keep < 1 or keep + 1 > y.size:
        raise ConfigError(f"cannot keep {keep} coefficients of a length-{y.size} segment")
    spec = np.abs(np.fft.fft(y)) ** 2
    peak = spec.max()
    if not peak > 0:
        raise ConfigError("all-zero segment has no cepstrum")
    logspec = np.log10(np.maximum(spec, SPECTRAL_FLOOR * peak))
    ceps = np.abs(np.fft.ifft(logspec)) ** 2
    return ceps[1:keep + 1]


def segment_features(signal, plan: SegmentPlan, keep: int, center: int | None = None,
                     window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Detect (unless ``center`` is given), segment and featurize: an ``N x T`` matrix."""
    x = np.asarray(signal, dtype=float).ravel()
    if center is None:
        center = detect_event(x, min(window, x.size))
    return np.column_stack([power_cepstrum(s, keep) for s in segment(x, center, plan)])


def read_signal(path) -> np.ndarray:
    """Read a raw signal: single-column CSV, or binary float64 LE with a uint64 length header."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".csv", ".txt"):
            return np.loadtxt(path, delimiter=",", ndmin=1, dtype=float)
        raw = path.read_bytes()
    except (OSError, ValueError) as exc:
        raise DatasetIOError(f"cannot read signal {path}: {exc}") from exc
    if len(raw) < 8:
        raise DatasetIOError(f"{path}: missing length header")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * n:
        raise DatasetIOError(f"{path}: header says {n} samples, file holds {(len(raw) - 8) / 8:g}")
    return np.frombuffer(raw[8:], dtype="<f8").astype(float)


def write_signal(path, signal) -> None:
    x = np.asarray(signal, dtype="<f8").ravel()
    path = Path(path)
    if path.suffix.lower() in (".csv", ".txt"):
        path.write_text("".join(f"{v:.17g}\n" for v in x), encoding="utf-8")
    else:
        path.write_bytes(struct.pack("<Q", x.size) + x.tobytes())
