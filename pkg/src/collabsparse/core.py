"""Shared data model: structured dictionaries, observations, coefficient blocks.

Sensor data is stored stacked as dense ``(M, N, K)`` float arrays, where
``M`` is the number of sensors, ``N`` the feature dimension and ``K`` either
the number of atoms ``P`` (dictionaries) or the number of observations ``T``.
All containers are immutable after construction; their arrays are marked
read-only so they can be shared across concurrent solves.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, DimensionError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, order="C", copy=True)
    a.setflags(write=False)
    return a


def _offsets(sizes: Sequence[int]) -> tuple[int, ...]:
    out = [0]
    for s in sizes:
        out.append(out[-1] + int(s))
    return tuple(out)


@dataclass(frozen=True)
class StructuredDictionary:
    """Per-sensor dictionaries sharing one class partition of the atoms.

    Parameters
    ----------
    atoms : array, shape (M, N, P)
        ``atoms[m]`` is the dictionary of sensor ``m``. Column ``p`` describes
        the same training event in every sensor.
    class_sizes : sequence of int
        Number of atoms per class; columns are ordered class by class.
    class_labels : sequence, optional
        Class identifiers, defaults to ``0 .. C-1``.
    zero_atoms : bool array, shape (P,), optional
        Atoms flagged as all-zero (kept, but excluded from support reports).
    """

    atoms: np.ndarray
    class_sizes: tuple[int, ...]
    class_labels: tuple[Any, ...] = ()
    zero_atoms: np.ndarray | None = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 2:
            atoms = atoms[None]
        if atoms.ndim != 3:
            raise DimensionError(f"dictionary must be (M, N, P), got shape {atoms.shape}")
        sizes = tuple(int(s) for s in self.class_sizes)
        if not sizes or any(s <= 0 for s in sizes):
            raise ConfigError(f"class sizes must be positive, got {sizes}")
        if sum(sizes) != atoms.shape[2]:
            raise DimensionError(
                f"class sizes sum to {sum(sizes)} but dictionary has {atoms.shape[2]} atoms")
        labels = tuple(self.class_labels) or tuple(range(len(sizes)))
        if len(labels) != len(sizes):
            raise ConfigError(f"{len(labels)} class labels for {len(sizes)} classes")
        zero = self.zero_atoms
        if zero is None:
            zero = ~np.any(atoms != 0, axis=(0, 1))
        zero = np.array(zero, dtype=bool)
        zero.setflags(write=False)
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "class_sizes", sizes)
        object.__setattr__(self, "class_labels", labels)
        object.__setattr__(self, "zero_atoms", zero)

    @property
    def M(self) -> int:
        return self.atoms.shape[0]

    @property
    def N(self) -> int:
        return self.atoms.shape[1]

    @property
    def P(self) -> int:
        return self.atoms.shape[2]

    @property
    def C(self) -> int:
        return len(self.class_sizes)

    @property
    def sensors(self) -> list[np.ndarray]:
        return list(self.atoms)

    @property
    def class_offsets(self) -> tuple[int, ...]:
        return _offsets(self.class_sizes)

    def class_slice(self, c: int) -> slice:
        off = self.class_offsets
        return slice(off[c], off[c + 1])

    def sub(self, m: int, c: int) -> np.ndarray:
        """The class-``c`` sub-dictionary of sensor ``m``."""
        return self.atoms[m][:, self.class_slice(c)]

    def select_sensors(self, sensors: Sequence[int]) -> "StructuredDictionary":
        return StructuredDictionary(self.atoms[list(sensors)], self.class_sizes,
                                    self.class_labels, self.zero_atoms)


@dataclass(frozen=True)
class MultiSensorObservation:
    """Test data ``Y = [Y^1, ..., Y^M]`` stacked as an ``(M, N, T)`` array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[2] < 1:
            raise DimensionError(f"observation must be (M, N, T) with T >= 1, got {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_sensors(cls, sensors: Sequence[np.ndarray]) -> "MultiSensorObservation":
        mats = [np.atleast_2d(np.asarray(s, dtype=float)) for s in sensors]
        mats = [m.T if m.shape[0] == 1 and m.shape[1] > 1 else m for m in mats]
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise DimensionError(f"sensor matrices have differing shapes {sorted(shapes)}")
        return cls(np.stack(mats))

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> int:
        return self.data.shape[2]

    @property
    def sensors(self) -> list[np.ndarray]:
        return list(self.data)

    def stacked(self) -> np.ndarray:
        """The ``N x (M*T)`` concatenation ``[Y^1, ..., Y^M]``."""
        return sensor_concat(self.data)

    def select_sensors(self, sensors: Sequence[int]) -> "MultiSensorObservation":
        return MultiSensorObservation(self.data[list(sensors)])

    def normalized(self) -> "MultiSensorObservation":
        """Copy with every observation column scaled to unit norm (zero columns kept)."""
        norms = np.sqrt(np.sum(self.data ** 2, axis=1, keepdims=True))
        return MultiSensorObservation(
            np.divide(self.data, norms, out=np.zeros_like(self.data), where=norms > 0))


def sensor_concat(x: np.ndarray) -> np.ndarray:
    """``(..., M, R, T)`` -> ``(..., R, M*T)``, sensor blocks side by side."""
    *lead, m, r, t = x.shape
    return np.moveaxis(x, -3, -2).reshape(*lead, r, m * t)


def sensor_split(x: np.ndarray, m: int) -> np.ndarray:
    """Inverse of :func:`sensor_concat`."""
    *lead, r, mt = x.shape
    if mt % m:
        raise DimensionError(f"{mt} columns do not split into {m} sensor blocks")
    return np.moveaxis(x.reshape(*lead, r, m, mt // m), -2, -3)


@dataclass(frozen=True)
class CoefficientBlocks:
    """The ``P x (M*T)`` coefficient matrix with sensor and class block views."""

    data: np.ndarray
    sensor_width: int
    class_offsets: tuple[int, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or self.sensor_width < 1 or data.shape[1] % self.sensor_width:
            raise DimensionError(
                f"coefficient matrix {data.shape} incompatible with sensor width {self.sensor_width}")
        off = tuple(int(o) for o in self.class_offsets)
        if off[0] != 0 or off[-1] != data.shape[0] or any(b <= a for a, b in zip(off, off[1:])):
            raise DimensionError(f"class offsets {off} do not partition {data.shape[0]} rows")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "class_offsets", off)

    @classmethod
    def from_stacked(cls, a: np.ndarray, class_offsets: Sequence[int]) -> "CoefficientBlocks":
        """Build from an ``(M, P, T)`` array of per-sensor coefficient matrices."""
        return cls(sensor_concat(np.asarray(a, dtype=float)), a.shape[2], tuple(class_offsets))

    @property
    def M(self) -> int:
        return self.data.shape[1] // self.sensor_width

    @property
    def C(self) -> int:
        return len(self.class_offsets) - 1

    def stacked(self) -> np.ndarray:
        return sensor_split(self.data, self.M)

    def sensor_block(self, m: int) -> np.ndarray:
        t = self.sensor_width
        return self.data[:, m * t:(m + 1) * t]

    def class_block(self, c: int) -> np.ndarray:
        return self.data[self.class_offsets[c]:self.class_offsets[c + 1], :]

    def block(self, m: int, c: int) -> np.ndarray:
        return self.sensor_block(m)[self.class_offsets[c]:self.class_offsets[c + 1], :]

    def reassemble(self) -> np.ndarray:
        """Rebuild the full matrix from its class blocks."""
        return np.vstack([self.class_block(c) for c in range(self.C)])

    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data ** 2, axis=1))

    def support(self, threshold: float = 1e-4) -> np.ndarray:
        return np.flatnonzero(self.row_norms() > threshold)


@dataclass
class SolveTrace:
    """Per-iteration convergence record of one solve."""

    objective: list[float] = field(default_factory=list)
    feas_residual: list[float] = field(default_factory=list)
    dA: list[float] = field(default_factory=list)
    dZ: list[float] = field(default_factory=list)
    converged: bool = False
    theta: float = math.nan

    @property
    def iterations(self) -> int:
        return len(self.objective)

    def rows(self):
        for j, row in enumerate(zip(self.objective, self.feas_residual, self.dA, self.dZ), 1):
            yield (j, *row)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("iter,objective,feas_residual,dA,dZ\n")
            for j, obj, feas, da, dz in self.rows():
                fh.write(f"{j},{obj:.17g},{feas:.17g},{da:.17g},{dz:.17g}\n")


@dataclass(frozen=True)
class Decomposition:
    """Recovered ``{A, L, E}`` with its convergence trace.

    ``lowrank`` and ``sparse_err`` are ``N x (M*T)`` matrices sensor-blocked
    like the columns of ``coeffs``; a disabled component is ``None``.
    """

    coeffs: CoefficientBlocks
    lowrank: np.ndarray | None
    sparse_err: np.ndarray | None
    trace: SolveTrace
    multiplier: np.ndarray | None = None

    def lowrank_stacked(self) -> np.ndarray | None:
        return None if self.lowrank is None else sensor_split(self.lowrank, self.coeffs.M)

    def sparse_err_stacked(self) -> np.ndarray | None:
        return None if self.sparse_err is None else sensor_split(self.sparse_err, self.coeffs.M)

    def corruption_stacked(self) -> np.ndarray | None:
        """``L + E`` per sensor, or ``None`` when neither is enabled."""
        parts = [p for p in (self.lowrank_stacked(), self.sparse_err_stacked()) if p is not None]
        if not parts:
            return None
        return sum(parts[1:], parts[0])

    @property
    def converged(self) -> bool:
        return self.trace.converged


class Variant(str, enum.Enum):
    JSR = "JSR"
    JSR_E = "JSR+E"
    JSR_L = "JSR+L"
    GJSR_L = "GJSR+L"
    # E and L together; not one of the published models
    JSR_LE = "JSR+L+E"

    @property
    def uses_lowrank(self) -> bool:
        return self in (Variant.JSR_L, Variant.GJSR_L, Variant.JSR_LE)

    @property
    def uses_sparse_err(self) -> bool:
        return self in (Variant.JSR_E, Variant.JSR_LE)

    @property
    def uses_group(self) -> bool:
        return self is Variant.GJSR_L


@dataclass(frozen=True)
class SolverConfig:
    """Model variant and solver parameters.

    ``theta`` is the proximal step of the linearized coefficient update; when
    ``None`` it is set to ``theta_safety / sigma_max`` at solve time.
    """

    variant: Variant = Variant.JSR
    lambda_L: float = 1.0
    lambda_G: float = 0.0
    lambda_E: float = 0.1
    mu: float = 1.0
    q: int = 2
    theta: float | None = None
    theta_safety: float = 0.99
    max_iters: int = 500
    tol_feas: float = 1e-5
    tol_change: float = 1e-6

    def __post_init__(self):
        try:
            variant = Variant(self.variant)
        except ValueError:
            raise ConfigError(f"unknown variant {self.variant!r}; "
                              f"expected one of {[v.value for v in Variant]}") from None
        object.__setattr__(self, "variant", variant)
        for name in ("lambda_L", "lambda_G", "lambda_E"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a finite nonnegative number, got {v}")
        if self.q != 2:
            raise ConfigError(f"only q = 2 is supported, got q = {self.q}")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if variant.uses_lowrank and self.lambda_L <= 0:
            raise ConfigError(
                f"variant {variant.value} needs lambda_L > 0; lambda_L = 0 yields the "
                "trivial solution A = 0, L = Y")
        if variant.uses_sparse_err and self.lambda_E <= 0:
            raise ConfigError(f"variant {variant.value} needs lambda_E > 0")
        if self.theta is not None and not (math.isfinite(self.theta) and self.theta > 0):
            raise ConfigError(f"theta must be positive, got {self.theta}")
        if not 0 < self.theta_safety < 1:
            raise ConfigError(f"theta_safety must lie in (0, 1), got {self.theta_safety}")
        if int(self.max_iters) < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tol_feas > 0 and self.tol_change > 0):
            raise ConfigError("tolerances must be positive")

    def replace(self, **changes) -> "SolverConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class ProblemDims:
    N: int
    P: int
    C: int
    M: int
    T: int


def build_dictionary(samples, class_labels=None, normalize: bool = True) -> StructuredDictionary:
    """Assemble a structured dictionary from per-class, per-sensor training data.

    ``samples[c][m]`` holds the training atoms of class ``c`` seen by sensor
    ``m``: either a list of length-``N`` vectors or an ``N x P_c`` array. Atom
    ``p`` of class ``c`` must describe the same event in every sensor.

    With ``normalize`` every atom is scaled to unit Euclidean norm; all-zero
    atoms are kept and flagged in ``zero_atoms``.
    """
    if len(samples) == 0:
        raise ConfigError("no classes given")
    n_sensors = len(samples[0])
    if n_sensors == 0:
        raise ConfigError("class 0 has no sensors")
    n_feat = None
    per_sensor: list[list[np.ndarray]] = [[] for _ in range(n_sensors)]
    sizes = []
    for c, cls in enumerate(samples):
        if len(cls) != n_sensors:
            raise DimensionError(f"class {c} has {len(cls)} sensors, expected {n_sensors}")
        count = None
        for m, atoms in enumerate(cls):
            mat = _as_atom_matrix(atoms, c, m)
            if n_feat is None:
                n_feat = mat.shape[0]
            if mat.shape[0] != n_feat:
                raise DimensionError(
                    f"class {c}, sensor {m}: atoms have length {mat.shape[0]}, expected {n_feat}")
            if mat.shape[1] == 0:
                raise ConfigError(f"class {c}, sensor {m} is empty")
            if count is None:
                count = mat.shape[1]
            elif mat.shape[1] != count:
                raise DimensionError(
                    f"class {c}, sensor {m}: {mat.shape[1]} atoms, expected {count} "
                    "(atoms must pair up across sensors)")
            per_sensor[m].append(mat)
        sizes.append(count)
    atoms = np.stack([np.hstack(blocks) for blocks in per_sensor])
    zero = ~np.any(atoms != 0, axis=1)  # (M, P) per-sensor zero columns
    if normalize:
        norms = np.sqrt(np.sum(atoms ** 2, axis=1, keepdims=True))
        atoms = np.divide(atoms, norms, out=np.zeros_like(atoms), where=norms > 0)
    return StructuredDictionary(atoms, tuple(sizes),
                                tuple(class_labels) if class_labels is not None else (),
                                zero_atoms=np.any(zero, axis=0))


def _as_atom_matrix(atoms, c, m) -> np.ndarray:
    if isinstance(atoms, np.ndarray) and atoms.ndim == 2:
        return np.asarray(atoms, dtype=float)
    vecs = [np.asarray(v, dtype=float).ravel() for v in atoms]
    if not vecs:
        raise ConfigError(f"class {c}, sensor {m} is empty")
    lengths = {len(v) for v in vecs}
    if len(lengths) != 1:
        raise DimensionError(f"class {c}, sensor {m}: atoms of differing lengths {sorted(lengths)}")
    return np.column_stack(vecs)


def validate_pair(dictionary: StructuredDictionary, obs: MultiSensorObservation) -> ProblemDims:
    """Check that a dictionary and an observation describe the same sensors."""
    if not isinstance(dictionary, StructuredDictionary):
        raise ConfigError(f"expected StructuredDictionary, got {type(dictionary).__name__}")
    if not isinstance(obs, MultiSensorObservation):
        raise ConfigError(f"expected MultiSensorObservation, got {type(obs).__name__}")
    if obs.M != dictionary.M:
        raise DimensionError(
            f"observation has {obs.M} sensors, dictionary has {dictionary.M}")
    if obs.N != dictionary.N:
        raise DimensionError(
            f"sensor 0: observation feature dimension {obs.N} != dictionary's {dictionary.N}")
    if not np.all(np.isfinite(obs.data)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(obs.data), axis=(1, 2)))[0])
        raise DimensionError(f"sensor {bad}: observation has non-finite entries")
    return ProblemDims(N=dictionary.N, P=dictionary.P, C=dictionary.C,
                       M=dictionary.M, T=obs.T)
