"""Synthetic multi-sensor event data with shared interference.

Each class has a template of three exponentially damped sinusoids. Every
sensor sees a jittered copy of its class template. Test samples are corrupted
by one interference waveform added identically to all sensors (so the stacked
interference has rank one) at a prescribed signal-to-interference ratio, plus
independent white noise whose power is a fixed fraction of the interference
power. Training samples are left clean.

Randomness is keyed on ``(seed, stream, class, sensor, split, index)`` so any
single sample can be regenerated on its own.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, LabeledSample, write_dataset
from .errors import ConfigError, DatasetIOError
from .features import SegmentPlan, power_cepstrum, segment

SAMPLE_RATE = 1001.6
INTERFERENCE_KINDS = ("tone", "chirp", "noise_band")
MAX_XCORR = 0.5

# template band and tone fundamental range, as fractions of the Nyquist frequency
_TEMPLATE_BAND = (0.08, 0.9)
_TONE_BAND = (0.04, 0.12)
_HARMONICS = 5
_FREQ_JITTER = 0.02
_GAIN_JITTER = 0.2

_TEMPLATES, _EVENT, _CORRUPT = 1, 2, 3
_SPLITS = {"train": 0, "test": 1}
CONFIG_VERSION = 1


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``segment_len`` defaults to ``signal_len``. With ``segments > 1`` the
    features are ``segments`` overlapping cepstra cut around the middle of
    each record. ``noise_floor_db`` is the level of the white self-noise of
    every sensor relative to the event, present in training and test data.
    ``damping`` is the decay rate of the template sinusoids in 1/s.
    """

    classes: int = 4
    sensors: int = 4
    train_per_class: int = 20
    test_per_class: int = 25
    signal_len: int = 1024
    snr_db: float = 0.0
    awgn_ratio: float = 0.1
    interference_kind: str = "tone"
    seed: int = 0
    n_features: int = 50
    segments: int = 1
    segment_len: int | None = None
    overlap: float = 0.75
    sample_rate: float = SAMPLE_RATE
    damping: float = 8.0
    noise_floor_db: float = -20.0

    def __post_init__(self):
        for name in ("classes", "sensors", "train_per_class", "test_per_class", "segments"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.signal_len < 16:
            raise ConfigError("signal_len must be >= 16")
        if not self.awgn_ratio >= 0:
            raise ConfigError(f"awgn_ratio must be >= 0, got {self.awgn_ratio}")
        if self.interference_kind not in INTERFERENCE_KINDS:
            raise ConfigError(f"interference_kind must be one of {INTERFERENCE_KINDS}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if math.isnan(self.snr_db):
            raise ConfigError("snr_db is NaN")
        if not (self.sample_rate > 0 and self.damping >= 0):
            raise ConfigError("sample_rate must be > 0 and damping >= 0")
        if self.seg_len < self.n_features + 1:
            raise ConfigError(f"segment_len {self.seg_len} too short for {self.n_features} features")
        SegmentPlan(self.seg_len, self.segments, self.overlap)

    @property
    def seg_len(self) -> int:
        return int(self.segment_len or self.signal_len)

    @property
    def plan(self) -> SegmentPlan:
        return SegmentPlan(self.seg_len, self.segments, self.overlap)

    def replace(self, **changes) -> "SynthConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {"version": CONFIG_VERSION, **dataclasses.asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported synth config version {version}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown synth config field(s): {', '.join(unknown)}")
        return cls(**d)


PRESETS = {
    # four classes, four sensors, one 50-coefficient cepstrum per sensor
    "exp1": SynthConfig(),
    # nine sensors, ten 500-coefficient cepstra of 30000-sample segments (75% overlap)
    "exp2": SynthConfig(classes=2, sensors=9, train_per_class=4, test_per_class=2,
                        signal_len=30000 + 9 * 7500, segment_len=30000, segments=10,
                        n_features=500, damping=0.02),
}


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _damped_sum(freqs, gains, phases, n, fs, damping) -> np.ndarray:
    t = np.arange(n) / fs
    x = np.zeros(n)
    for f, g, p in zip(freqs, gains, phases):
        x += g * np.sin(2 * np.pi * f * t + p)
    return x * np.exp(-damping * t)


def max_normalized_xcorr(a, b) -> float:
    """Largest ``|<a, shift(b)>| / (||a|| ||b||)`` over all linear lags."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size + b.size - 1
    size = 1 << (n - 1).bit_length()
    r = np.fft.irfft(np.fft.rfft(a, size) * np.conj(np.fft.rfft(b, size)), size)
    return float(np.max(np.abs(r)) / (np.linalg.norm(a) * np.linalg.norm(b)))


@functools.lru_cache(maxsize=32)
def _templates(seed, classes, n, fs, damping) -> tuple[tuple[float, float, float], ...]:
    nyq = fs / 2
    lo, hi = _TEMPLATE_BAND[0] * nyq, _TEMPLATE_BAND[1] * nyq
    for attempt in range(1000):
        rng = _rng(seed, _TEMPLATES, attempt)
        freqs = [np.sort(rng.uniform(lo, hi, 3)) for _ in range(classes)]
        waves = [_damped_sum(f, np.ones(3), np.zeros(3), n, fs, damping) for f in freqs]
        if all(max_normalized_xcorr(waves[i], waves[j]) < MAX_XCORR
               for i in range(classes) for j in range(i + 1, classes)):
            return tuple(tuple(float(v) for v in f) for f in freqs)
    raise ConfigError(f"could not draw {classes} mutually uncorrelated class templates")


def class_templates(cfg: SynthConfig) -> np.ndarray:
    """Template frequency triples, shape ``(C, 3)``, in Hz.

    Redrawn until every pair of clean class templates has maximal normalized
    cross-correlation below 0.5.
    """
    return np.array(_templates(int(cfg.seed), cfg.classes, cfg.signal_len,
                               float(cfg.sample_rate), float(cfg.damping)))


def gen_event(cfg: SynthConfig, class_id: int, sensor_id: int, index: int,
              split: str = "train") -> np.ndarray:
    """Clean event of ``class_id`` as recorded by ``sensor_id``, with unit energy.

    The class template is perturbed by per-sensor frequency jitter (2%),
    gain jitter (20%), random phases and white self-noise.
    """
    if not (0 <= class_id < cfg.classes and 0 <= sensor_id < cfg.sensors):
        raise ConfigError(f"class {class_id} / sensor {sensor_id} out of range")
    base = class_templates(cfg)[class_id]
    rng = _rng(cfg.seed, _EVENT, class_id, sensor_id, _SPLITS[split], index)
    freqs = base * (1 + rng.uniform(-_FREQ_JITTER, _FREQ_JITTER, 3))
    gains = 1 + rng.uniform(-_GAIN_JITTER, _GAIN_JITTER, 3)
    phases = rng.uniform(0, 2 * np.pi, 3)
    x = _damped_sum(freqs, gains, phases, cfg.signal_len, cfg.sample_rate, cfg.damping)
    x /= np.sqrt(np.mean(x * x))
    x += 10 ** (cfg.noise_floor_db / 20) * rng.standard_normal(cfg.signal_len)
    return x / np.linalg.norm(x)


def interference_waveform(kind: str, n: int, rng: np.random.Generator,
                          sample_rate: float = SAMPLE_RATE, period_len: int | None = None) -> np.ndarray:
    """Unit-power interference waveform of length ``n``.

    ``tone`` is a five-harmonic periodic signal whose fundamental lies on the
    frequency grid of ``period_len``-sample analysis windows, so it leaks into
    no other frequency bins. ``chirp`` sweeps linearly upward across most of
    the band; ``noise_band`` is Gaussian noise confined to a 100 Hz wide band.
    """
    fs = sample_rate
    t = np.arange(n) / fs
    nyq = fs / 2
    if kind == "tone":
        L = int(period_len or n)
        lo = max(1, math.ceil(_TONE_BAND[0] * nyq * L / fs))
        hi = max(lo, math.floor(_TONE_BAND[1] * nyq * L / fs))
        f0 = int(rng.integers(lo, hi + 1)) * fs / L
        amps = rng.uniform(0.3, 1.0, _HARMONICS)
        phases = rng.uniform(0, 2 * np.pi, _HARMONICS)
        x = sum(a * np.sin(2 * np.pi * f0 * h * t + p)
                for h, a, p in zip(range(1, _HARMONICS + 1), amps, phases))
    elif kind == "chirp":
        f1 = rng.uniform(0.04, 0.2) * nyq
        f2 = rng.uniform(0.6, 0.95) * nyq
        dur = max(t[-1], 1 / fs)
        x = np.sin(2 * np.pi * (f1 * t + (f2 - f1) / (2 * dur) * t ** 2) + rng.uniform(0, 2 * np.pi))
    elif kind == "noise_band":
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1 / fs)
        lo = rng.uniform(0.1, 0.6) * nyq
        spec[(freqs < lo) | (freqs > lo + 100.0)] = 0
        x = np.fft.irfft(spec, n)
    else:
        raise ConfigError(f"unknown interference kind {kind!r}")
    power = np.mean(x * x)
    if not power > 0:
        raise ConfigError(f"{kind} interference is silent for n={n}")
    return x / np.sqrt(power)


@dataclass(frozen=True)
class Corruption:
    """Corrupted signals and their parts: ``noisy = clean + interference + awgn``."""

    noisy: np.ndarray          # (M, n)
    interference: np.ndarray   # (n,), identical on every sensor
    awgn: np.ndarray           # (M, n)


def inject_interference(signals, cfg: SynthConfig, rng: np.random.Generator,
                        signal_power: float | None = None) -> Corruption:
    """Add shared interference at ``cfg.snr_db`` and per-sensor white noise.

    The interference is scaled so that signal power over interference power
    equals ``cfg.snr_db``; ``signal_power`` defaults to the mean power of
    ``signals``. The white noise power is ``cfg.awgn_ratio`` times the
    interference power.
    """
    x = np.atleast_2d(np.asarray(signals, dtype=float))
    m, n = x.shape
    ps = float(np.mean(x * x)) if signal_power is None else float(signal_power)
    wave = interference_waveform(cfg.interference_kind, n, rng, cfg.sample_rate, cfg.seg_len)
    interference = wave * math.sqrt(ps / 10 ** (cfg.snr_db / 10))
    sigma = math.sqrt(cfg.awgn_ratio * float(np.mean(interference ** 2)))
    awgn = sigma * rng.standard_normal((m, n))
    return Corruption(x + interference + awgn, interference, awgn)


def corrupted_sample(cfg: SynthConfig, class_id: int, index: int) -> tuple[np.ndarray, Corruption]:
    """Clean ``(M, n)`` signals of one test event and their corruption."""
    clean = np.stack([gen_event(cfg, class_id, m, index, "test") for m in range(cfg.sensors)])
    rng = _rng(cfg.seed, _CORRUPT, class_id, index)
    return clean, inject_interference(clean, cfg, rng)


def signal_features(cfg: SynthConfig, signals) -> np.ndarray:
    """``(M, N, T)`` cepstral features of ``(M, n)`` signals, segments centred on each record."""
    plan = cfg.plan
    center = cfg.signal_len // 2
    out = [np.column_stack([power_cepstrum(s, cfg.n_features) for s in segment(x, center, plan)])
           for x in np.atleast_2d(signals)]
    return np.stack(out)


def make_dataset(cfg: SynthConfig, out=None) -> Dataset:
    """Clean training samples and corrupted test samples.

    With ``out`` the dataset directory is written there, together with
    ``synth.json`` holding the generating configuration.
    """
    train, test = [], []
    for c in range(cfg.classes):
        for i in range(cfg.train_per_class):
            clean = np.stack([gen_event(cfg, c, m, i, "train") for m in range(cfg.sensors)])
            train.append(LabeledSample(f"train_c{c}_{i:04d}", c, signal_features(cfg, clean)))
        for i in range(cfg.test_per_class):
            _, corr = corrupted_sample(cfg, c, i)
            test.append(LabeledSample(f"test_c{c}_{i:04d}", c, signal_features(cfg, corr.noisy)))
    ds = Dataset(tuple(range(cfg.classes)), cfg.sensors, cfg.n_features, cfg.segments,
                 train, test, sample_rate=cfg.sample_rate,
                 meta={"generator": "synth", "snr_db": cfg.snr_db,
                       "interference_kind": cfg.interference_kind})
    if out is not None:
        root = write_dataset(ds, out)
        try:
            (root / "synth.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n", encoding="utf-8")
        except OSError as exc:
            raise DatasetIOError(f"cannot write {root / 'synth.json'}: {exc}") from exc
    return ds
