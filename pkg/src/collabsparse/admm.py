"""Linearized ADMM for the multi-sensor joint/group sparse models.

One iteration, for every variant:

1. low-rank step: singular value thresholding of ``Y - DA + Z/mu`` (minus E),
2. sparse-error step: entrywise shrinkage of the analogous residual,
3. coefficient step: one proximal-gradient step on the augmented Lagrangian,
   linearized at the current ``A`` with step ``theta``; the prox splits into
   independent class blocks, each solved in closed form,
4. multiplier step ``Z += mu * (Y - DA - L - E)``.

Disabled components stay exactly zero. Convergence to the optimum needs
``theta * max_m sigma_max(D_m^T D_m) < 1`` for any ``mu > 0``.

The engine is vectorized over a batch of observations sharing a dictionary;
each batch member is an independent problem with its own stopping decision.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .core import (CoefficientBlocks, Decomposition, MultiSensorObservation, SolverConfig,
                   SolveTrace, StructuredDictionary, sensor_concat, sensor_split, validate_pair)
from .errors import ConfigError, DimensionError, NumericalError
from .prox import _shrink_factor, svt

POWER_MAX_ITERS = 10_000


def _power_max_eig(D: np.ndarray, rtol: float = 1e-13) -> float:
    """Largest eigenvalue of ``D^T D`` by power iteration (deterministic start)."""
    n, p = D.shape
    if not np.any(D):
        return 0.0
    # iterate on the smaller Gram matrix; nonzero spectra coincide
    G = D @ D.T if n < p else D.T @ D
    x = np.ones(G.shape[0]) / math.sqrt(G.shape[0])
    y = G @ x
    if np.linalg.norm(y) <= 1e-14 * np.abs(G).max():
        # all-ones start lies in the null space; use a fixed alternative
        x = np.random.default_rng(0).standard_normal(G.shape[0])
        x /= np.linalg.norm(x)
        y = G @ x
    rho = float(x @ y)
    for _ in range(POWER_MAX_ITERS):
        x = y / np.linalg.norm(y)
        y = G @ x
        new = float(x @ y)
        if abs(new - rho) <= rtol * abs(new):
            return new
        rho = new
    raise NumericalError(f"power iteration did not converge in {POWER_MAX_ITERS} iterations")


def max_gram_eigen(dictionary: StructuredDictionary | np.ndarray) -> float:
    """``max_m sigma_max((D^m)^T D^m)`` over the sensors of a dictionary."""
    atoms = dictionary.atoms if isinstance(dictionary, StructuredDictionary) else np.asarray(dictionary)
    if atoms.ndim == 2:
        atoms = atoms[None]
    return max(_power_max_eig(D) for D in atoms)


def resolve_theta(dictionary: StructuredDictionary, cfg: SolverConfig,
                  sigma_max: float | None = None) -> float:
    """The proximal step: ``cfg.theta`` if valid, else ``theta_safety / sigma_max``."""
    if sigma_max is None:
        sigma_max = max_gram_eigen(dictionary)
    if cfg.theta is None:
        if sigma_max <= 0:
            return 1.0
        return cfg.theta_safety / sigma_max
    if cfg.theta * sigma_max >= 1.0:
        raise ConfigError(
            f"theta = {cfg.theta:g} violates the step-size condition "
            f"theta * sigma_max < 1 (sigma_max = {sigma_max:g})")
    return float(cfg.theta)


class _Batch:
    """Iterates of a batch of independent problems."""

    def __init__(self, shape_a, shape_y, use_L, use_E):
        b = shape_y[0]
        self.A = np.zeros(shape_a)
        self.G = np.zeros(shape_y)
        self.Z = np.zeros(shape_y)
        self.L = np.zeros(shape_y) if use_L else None
        self.E = np.zeros(shape_y) if use_E else None
        self.traces = [SolveTrace() for _ in range(b)]
        self.active = np.ones(b, dtype=bool)
        self.failed: list[NumericalError | None] = [None] * b


def _run(D: np.ndarray, Y: np.ndarray, class_sizes: Sequence[int], cfg: SolverConfig,
         theta: float, callback: Callable | None = None) -> _Batch:
    # overflow is detected per problem below and reported as NumericalError
    with np.errstate(over="ignore", invalid="ignore"):
        return _iterate(D, Y, class_sizes, cfg, theta, callback)


def _iterate(D: np.ndarray, Y: np.ndarray, class_sizes: Sequence[int], cfg: SolverConfig,
             theta: float, callback: Callable | None = None) -> _Batch:
    """Run the iteration on ``Y`` of shape ``(B, M, N, T)`` with shared ``D`` ``(M, N, P)``."""
    variant = cfg.variant
    use_L, use_E = variant.uses_lowrank, variant.uses_sparse_err
    use_G = variant.uses_group and cfg.lambda_G > 0
    mu = cfg.mu
    B, M, N, T = Y.shape
    P = D.shape[2]
    Dt = np.ascontiguousarray(D.transpose(0, 2, 1))
    sizes = np.asarray(class_sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    a1 = theta / mu
    a2 = cfg.lambda_G * theta / mu
    tau_L = cfg.lambda_L / mu
    tau_E = cfg.lambda_E / mu
    ynorm = np.sqrt(np.sum(Y * Y, axis=(2, 3)))  # (B, M)
    ynorm = np.where(ynorm > 0, ynorm, 1.0)

    st = _Batch((B, M, P, T), Y.shape, use_L, use_E)

    for j in range(1, int(cfg.max_iters) + 1):
        idx = np.flatnonzero(st.active)
        if idx.size == 0:
            break
        full = idx.size == B
        sel = slice(None) if full else idx
        y = Y if full else Y[idx]
        A, G, Z = st.A[sel], st.G[sel], st.Z[sel]
        L = st.L[sel] if use_L else 0.0
        E = st.E[sel] if use_E else 0.0
        Zmu = Z / mu

        nuc = 0.0
        if use_L:
            Lc, s = svt(sensor_concat(y - G - E + Zmu), tau_L, return_singular_values=True)
            L = sensor_split(Lc, M)
            nuc = s.sum(axis=-1)
        l1 = 0.0
        if use_E:
            r = y - G - L + Zmu
            E = np.sign(r) * np.maximum(np.abs(r) - tau_E, 0.0)
            l1 = np.abs(E).sum(axis=(1, 2, 3))

        grad = Dt @ (G - (y - L - E + Zmu))
        R = sensor_concat(A - theta * grad)  # (b, P, M*T)
        rn = np.sqrt(np.sum(R * R, axis=-1))  # (b, P)
        rn_new = rn * _shrink_factor(rn, a1)
        factor = _shrink_factor(rn, a1)
        grp_norm = 0.0
        if use_G:
            grp = np.sqrt(np.add.reduceat(rn_new * rn_new, starts, axis=1))  # (b, C)
            f2 = _shrink_factor(grp, a2)
            factor = factor * np.repeat(f2, sizes, axis=1)
            rn_new = rn_new * np.repeat(f2, sizes, axis=1)
            grp_norm = (grp * f2).sum(axis=1)
        A_new = sensor_split(R * factor[..., None], M)
        G_new = D @ A_new
        resid = y - G_new - L - E
        Z_new = Z + mu * resid

        res_sq = np.sum(resid * resid, axis=(2, 3))  # (b, M)
        feas = (np.sqrt(res_sq) / ynorm[sel]).max(axis=1)
        dA = np.sqrt(np.sum((A_new - A) ** 2, axis=(1, 2, 3)))
        dZ = np.sqrt(np.sum((Z_new - Z) ** 2, axis=(1, 2, 3)))
        anorm = np.sqrt(np.sum(A * A, axis=(1, 2, 3)))
        obj = (rn_new.sum(axis=1) + cfg.lambda_G * grp_norm + cfg.lambda_L * nuc
               + cfg.lambda_E * l1 + 0.5 * mu * res_sq.sum(axis=1))
        obj = np.broadcast_to(obj, idx.shape)

        finite = np.isfinite(obj) & np.isfinite(dZ) & np.isfinite(dA)
        st.A[sel], st.G[sel], st.Z[sel] = A_new, G_new, Z_new
        if use_L:
            st.L[sel] = L
        if use_E:
            st.E[sel] = E
        for k, i in enumerate(idx):
            tr = st.traces[i]
            if not finite[k]:
                st.failed[i] = NumericalError(f"non-finite iterate at iteration {j}", iteration=j)
                st.active[i] = False
                continue
            tr.objective.append(float(obj[k]))
            tr.feas_residual.append(float(feas[k]))
            tr.dA.append(float(dA[k]))
            tr.dZ.append(float(dZ[k]))
            if feas[k] < cfg.tol_feas and dA[k] / max(1.0, anorm[k]) < cfg.tol_change:
                tr.converged = True
                st.active[i] = False
        if callback is not None:
            callback(j, st)
    for tr in st.traces:
        tr.theta = theta
    return st


def _decomposition(st: _Batch, i: int, offsets, want_multiplier=True) -> Decomposition:
    coeffs = CoefficientBlocks.from_stacked(st.A[i], offsets)
    low = sensor_concat(st.L[i]) if st.L is not None else None
    err = sensor_concat(st.E[i]) if st.E is not None else None
    z = sensor_concat(st.Z[i]) if want_multiplier else None
    return Decomposition(coeffs, low, err, st.traces[i], z)


def solve(dictionary: StructuredDictionary, obs: MultiSensorObservation, cfg: SolverConfig,
          callback: Callable[[int, np.ndarray, np.ndarray | None, np.ndarray | None, np.ndarray], None]
          | None = None, sigma_max: float | None = None) -> Decomposition:
    """Recover ``A`` (and ``L`` / ``E`` as the variant requires) for one observation set.

    Parameters
    ----------
    dictionary, obs
        Structured dictionary and a matching multi-sensor observation.
    cfg : SolverConfig
    callback : callable, optional
        Called after every iteration as ``callback(j, A, L, E, Z)`` with the
        ``(M, P, T)`` / ``(M, N, T)`` iterates (``None`` for disabled parts).
    sigma_max : float, optional
        Precomputed :func:`max_gram_eigen` of the dictionary.

    Raises
    ------
    ConfigError
        If ``cfg.theta`` violates the step-size condition.
    NumericalError
        On a non-finite iterate (the message names the iteration).
    """
    validate_pair(dictionary, obs)
    theta = resolve_theta(dictionary, cfg, sigma_max)
    cb = None
    if callback is not None:
        def cb(j, st):
            callback(j, st.A[0], None if st.L is None else st.L[0],
                     None if st.E is None else st.E[0], st.Z[0])
    st = _run(dictionary.atoms, obs.data[None], dictionary.class_sizes, cfg, theta, cb)
    if st.failed[0] is not None:
        raise st.failed[0]
    return _decomposition(st, 0, dictionary.class_offsets)


def solve_many(dictionary: StructuredDictionary, observations: Sequence[MultiSensorObservation],
               cfg: SolverConfig, sigma_max: float | None = None, batch_size: int = 64,
               errors: str = "raise") -> list:
    """Solve independent problems that share one dictionary, vectorized in batches.

    With ``errors="return"`` a failed problem yields its :class:`NumericalError`
    in place of a :class:`Decomposition`.
    """
    if errors not in ("raise", "return"):
        raise ValueError("errors must be 'raise' or 'return'")
    if not observations:
        return []
    shapes = {o.data.shape for o in observations}
    if len(shapes) != 1:
        raise DimensionError(f"observations have differing shapes {sorted(shapes)}")
    for o in observations[:1]:
        validate_pair(dictionary, o)
    theta = resolve_theta(dictionary, cfg, sigma_max)
    out = []
    for start in range(0, len(observations), batch_size):
        chunk = observations[start:start + batch_size]
        Y = np.stack([o.data for o in chunk])
        st = _run(dictionary.atoms, Y, dictionary.class_sizes, cfg, theta)
        for i in range(len(chunk)):
            if st.failed[i] is not None:
                if errors == "raise":
                    raise st.failed[i]
                out.append(st.failed[i])
            else:
                out.append(_decomposition(st, i, dictionary.class_offsets, want_multiplier=False))
    return out


def objective_value(dictionary: StructuredDictionary, obs: MultiSensorObservation,
                    dec: Decomposition, cfg: SolverConfig) -> float:
    """Regularizer sum of the variant plus ``mu/2`` times the squared constraint residual."""
    v = cfg.variant
    A = dec.coeffs.data
    val = float(np.sum(np.sqrt(np.sum(A * A, axis=1))))
    if v.uses_group:
        val += cfg.lambda_G * sum(float(np.linalg.norm(dec.coeffs.class_block(c)))
                                  for c in range(dec.coeffs.C))
    resid = obs.data - dictionary.atoms @ dec.coeffs.stacked()
    if v.uses_lowrank and dec.lowrank is not None:
        val += cfg.lambda_L * float(np.linalg.svd(dec.lowrank, compute_uv=False).sum())
        resid = resid - dec.lowrank_stacked()
    if v.uses_sparse_err and dec.sparse_err is not None:
        val += cfg.lambda_E * float(np.abs(dec.sparse_err).sum())
        resid = resid - dec.sparse_err_stacked()
    return val + 0.5 * cfg.mu * float(np.sum(resid * resid))
