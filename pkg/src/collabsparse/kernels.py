"""Kernel functions, Gram systems and the kernelized joint sparse solvers.

The feature map is never formed. A kernel solve runs the linear ADMM engine
with the per-sensor Gram matrix ``K_DD`` (``P x P``) standing in for the
dictionary and ``K_DY`` (``P x T``) for the observation. With the low-rank
variant the engine's ``L`` plays the role of the low-rank kernel-space
interference term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .admm import solve, solve_many
from .core import (Decomposition, MultiSensorObservation, SolverConfig, StructuredDictionary,
                   Variant, validate_pair)
from .errors import ConfigError, DimensionError

KERNEL_KINDS = ("linear", "rbf", "polynomial")
PSD_TOLERANCE = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """``kind`` in {linear, rbf, polynomial}; ``eta`` is the rbf width (``None``
    selects the median pairwise atom distance), ``degree`` the polynomial order."""

    kind: str = "rbf"
    eta: float | None = None
    degree: int = 2

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ConfigError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if self.eta is not None and not (math.isfinite(self.eta) and self.eta > 0):
            raise ConfigError(f"eta must be a positive number, got {self.eta}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigError(f"degree must be a positive integer, got {self.degree}")


def kernel_eval(x, y, spec: KernelSpec) -> float:
    """Kernel value for two vectors (rbf requires ``spec.eta``)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"kernel arguments have lengths {x.size} and {y.size}")
    if spec.kind == "linear":
        return float(x @ y)
    if spec.kind == "polynomial":
        return float((x @ y + 1.0) ** spec.degree)
    if spec.eta is None:
        raise ConfigError("rbf kernel needs eta for direct evaluation")
    d = x - y
    return float(np.exp(-(d @ d) / spec.eta ** 2))


def _sq_dist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # columns are points; (..., N, P), (..., N, T) -> (..., P, T)
    xx = np.sum(X * X, axis=-2)[..., :, None]
    yy = np.sum(Y * Y, axis=-2)[..., None, :]
    return np.maximum(xx + yy - 2.0 * (np.swapaxes(X, -1, -2) @ Y), 0.0)


def _kernel_matrix(X: np.ndarray, Y: np.ndarray, spec: KernelSpec, eta: float) -> np.ndarray:
    if spec.kind == "linear":
        return np.swapaxes(X, -1, -2) @ Y
    if spec.kind == "polynomial":
        return (np.swapaxes(X, -1, -2) @ Y + 1.0) ** spec.degree
    return np.exp(-_sq_dist(X, Y) / eta ** 2)


def median_eta(dictionary: StructuredDictionary) -> float:
    """Median Euclidean distance between distinct atoms, pooled over sensors."""
    D = dictionary.atoms
    P = D.shape[2]
    if P < 2:
        return 1.0
    iu = np.triu_indices(P, k=1)
    dist = np.sqrt(_sq_dist(D, D)[:, iu[0], iu[1]])
    eta = float(np.median(dist))
    return eta if eta > 0 else 1.0


@dataclass(frozen=True)
class GramSystem:
    """Per-sensor Gram matrices ``K_DD (M,P,P)``, ``K_DY (M,P,T)``, ``K_YY (M,T,T)``."""

    K_DD: np.ndarray
    K_DY: np.ndarray
    K_YY: np.ndarray
    class_sizes: tuple[int, ...]
    spec: KernelSpec
    eta: float | None = None

    @property
    def class_offsets(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.class_sizes)]).astype(int))

    def as_linear_problem(self) -> tuple[StructuredDictionary, MultiSensorObservation]:
        return (StructuredDictionary(self.K_DD, self.class_sizes),
                MultiSensorObservation(self.K_DY))


def _clamp_psd(K: np.ndarray) -> np.ndarray:
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    out = K.copy()
    for m in range(K.shape[0]):
        w = np.linalg.eigvalsh(K[m])
        if w[0] < -PSD_TOLERANCE:
            w, V = np.linalg.eigh(K[m])
            out[m] = (V * np.maximum(w, 0.0)) @ V.T
            out[m] = 0.5 * (out[m] + out[m].T)
    return out


def build_gram(dictionary: StructuredDictionary, obs: MultiSensorObservation | Sequence,
               spec: KernelSpec, eta: float | None = None) -> GramSystem | list[GramSystem]:
    """Gram system of a dictionary and one observation (or a list of them).

    ``K_DD`` is symmetrized and, if its smallest eigenvalue is below
    ``-1e-8``, projected onto the positive semidefinite cone.
    """
    many = not isinstance(obs, MultiSensorObservation)
    observations = list(obs) if many else [obs]
    for o in observations:
        validate_pair(dictionary, o)
    D = dictionary.atoms
    if spec.kind == "rbf":
        eta = eta or spec.eta or median_eta(dictionary)
    K_DD = _kernel_matrix(D, D, spec, eta)
    if spec.kind == "rbf":
        idx = np.arange(D.shape[2])
        K_DD[:, idx, idx] = 1.0
    K_DD = _clamp_psd(K_DD)
    K_DD.setflags(write=False)
    out = []
    for o in observations:
        Y = o.data
        K_YY = _kernel_matrix(Y, Y, spec, eta)
        K_YY = 0.5 * (K_YY + np.swapaxes(K_YY, -1, -2))
        if spec.kind == "rbf":
            idx = np.arange(Y.shape[2])
            K_YY[:, idx, idx] = 1.0
        out.append(GramSystem(K_DD, _kernel_matrix(D, Y, spec, eta), K_YY,
                              dictionary.class_sizes, spec, eta))
    return out if many else out[0]


def _check_variant(cfg: SolverConfig):
    if cfg.variant not in (Variant.JSR, Variant.GJSR_L):
        raise ConfigError(f"kernel solvers support JSR and GJSR+L only, got {cfg.variant.value}")


def solve_kernel(gram: GramSystem, cfg: SolverConfig, sigma_max: float | None = None) -> Decomposition:
    """Kernel joint sparse solve (``JSR``) or its group + low-rank version (``GJSR+L``)."""
    _check_variant(cfg)
    D, Y = gram.as_linear_problem()
    return solve(D, Y, cfg, sigma_max=sigma_max)


def solve_kernel_many(grams: Sequence[GramSystem], cfg: SolverConfig,
                      sigma_max: float | None = None, errors: str = "raise") -> list:
    """Batched :func:`solve_kernel` for Gram systems sharing one ``K_DD``."""
    _check_variant(cfg)
    if not grams:
        return []
    D, _ = grams[0].as_linear_problem()
    obs = [MultiSensorObservation(g.K_DY) for g in grams]
    return solve_many(D, obs, cfg, sigma_max=sigma_max, errors=errors)


def kernel_class_residuals(gram: GramSystem, dec: Decomposition) -> np.ndarray:
    """Feature-space residual of every class, clamped at zero.

    For class ``c`` this is the sum over sensors of
    ``trace(K_YY - 2 A_c^T K_{D_c Y} + A_c^T K_{D_c D_c} A_c)``.
    """
    A = dec.coeffs.stacked()  # (M, P, T)
    base = float(np.trace(gram.K_YY, axis1=-2, axis2=-1).sum())
    offs = gram.class_offsets
    out = np.empty(len(gram.class_sizes))
    for c in range(len(gram.class_sizes)):
        s = slice(offs[c], offs[c + 1])
        Ac = A[:, s, :]
        cross = np.sum(Ac * gram.K_DY[:, s, :])
        quad = np.sum(Ac * (gram.K_DD[:, s, s] @ Ac))
        out[c] = base - 2.0 * cross + quad
    return np.maximum(out, 0.0)


def kernel_class_residual(gram: GramSystem, dec: Decomposition, c: int) -> float:
    if not 0 <= c < len(gram.class_sizes):
        raise ConfigError(f"class index {c} out of range")
    return float(kernel_class_residuals(gram, dec)[c])
