"""Closed-form proximal operators.

Matrix operators act on the last two axes, so a stack of matrices can be
processed in one call. Row norms are Euclidean (``q = 2``).
"""

import numpy as np

from .errors import NumericalError


def soft_threshold(x, tau):
    """``max(|x| - tau, 0) * sign(x)``, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return out if out.ndim else float(out)


def _shrink_factor(norms, alpha):
    # (n - alpha) / n where n > alpha, else 0; never divides by zero
    return np.where(norms > alpha, 1.0 - alpha / np.where(norms > 0, norms, 1.0), 0.0)


def row_shrink(R, alpha):
    """Prox of ``alpha * ||X||_{1,2}``: shrink every row's Euclidean norm by ``alpha``."""
    R = np.asarray(R, dtype=float)
    norms = np.sqrt(np.sum(R * R, axis=-1, keepdims=True))
    return R * _shrink_factor(norms, alpha)


def group_row_shrink(R, alpha1, alpha2):
    """Prox of ``alpha1 * ||X||_{1,2} + alpha2 * ||X||_F``.

    Row shrinkage by ``alpha1`` followed by shrinking the Frobenius norm of
    the whole result by ``alpha2``.
    """
    S = row_shrink(R, alpha1)
    fro = np.sqrt(np.sum(S * S, axis=(-2, -1), keepdims=True))
    return S * _shrink_factor(fro, alpha2)


def entry_shrink(X, tau):
    """Prox of ``tau * ||X||_1`` (entrywise soft threshold)."""
    X = np.asarray(X, dtype=float)
    return np.sign(X) * np.maximum(np.abs(X) - tau, 0.0)


def svt(X, tau, return_singular_values=False):
    """Singular value thresholding, the prox of ``tau * ||X||_*``.

    With ``return_singular_values`` the thresholded singular values are
    returned as well (their sum is the nuclear norm of the result).
    """
    X = np.asarray(X, dtype=float)
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    s = np.maximum(s - tau, 0.0)
    out = (U * s[..., None, :]) @ Vt
    if return_singular_values:
        return out, s
    return out
