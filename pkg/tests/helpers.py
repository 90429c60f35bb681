"""Random and planted problem instances shared by the tests."""

from __future__ import annotations

import numpy as np

from collabsparse import MultiSensorObservation, StructuredDictionary


def split_sizes(rng, P, C):
    """``C`` positive class sizes summing to ``P``."""
    cuts = np.sort(rng.choice(np.arange(1, P), C - 1, replace=False)) if C > 1 else []
    return tuple(int(s) for s in np.diff(np.concatenate([[0], cuts, [P]])))


def random_dictionary(rng, M, N, P, C=None, normalize=True) -> StructuredDictionary:
    C = C or min(3, P)
    atoms = rng.standard_normal((M, N, P))
    if normalize:
        atoms /= np.linalg.norm(atoms, axis=1, keepdims=True)
    return StructuredDictionary(atoms, split_sizes(rng, P, C))


def random_observation(rng, M, N, T) -> MultiSensorObservation:
    return MultiSensorObservation(rng.standard_normal((M, N, T)))


def planted_rows(rng, dictionary: StructuredDictionary, rows, T, scale=1.0):
    """``Y^m = D^m A*^m`` with ``A*`` supported on ``rows`` in every sensor."""
    A = np.zeros((dictionary.M, dictionary.P, T))
    A[:, rows, :] = scale * rng.standard_normal((dictionary.M, len(rows), T))
    Y = dictionary.atoms @ A
    return MultiSensorObservation(Y), A


def rank_one_interference(rng, M, N, T, power):
    """Shared-column-space interference ``u v_m^T`` with total power ``power``."""
    u = rng.standard_normal(N)
    u /= np.linalg.norm(u)
    V = rng.standard_normal((M, T))
    L = u[None, :, None] * V[:, None, :]
    L *= np.sqrt(power / np.mean(L ** 2))
    return L, u


def principal_angle(u, L_stacked) -> float:
    """Angle between ``span(u)`` and the leading left singular vector of ``L``."""
    U = np.linalg.svd(L_stacked, full_matrices=False)[0][:, 0]
    c = abs(float(U @ u)) / np.linalg.norm(u)
    return float(np.arccos(min(1.0, c)))


def radial_samples(rng, radius, count, M, N, jitter, noise):
    """``(M, N, count)`` points at ``radius`` (relative jitter) in random directions, plus noise."""
    u = rng.standard_normal((M, N, count))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * (1 + jitter * rng.uniform(-1, 1, (M, 1, count)))
    return r * u + noise * rng.standard_normal((M, N, count))


def radial_problem(seed, M=2, N=3, radii=(1.0, 2.0), train=20, test=50, jitter=0.1, noise=0.05):
    """Classes on concentric shells: separable by radius, not by any linear rule.

    Returns an unnormalized dictionary and a list of ``(observation, label)``
    test pairs with ``T = 1``.
    """
    from collabsparse import build_dictionary
    rng = np.random.default_rng(seed)
    samples = [[block for block in radial_samples(rng, r, train, M, N, jitter, noise)] for r in radii]
    d = build_dictionary(samples, normalize=False)
    tests = []
    for c, r in enumerate(radii):
        pts = radial_samples(rng, r, test, M, N, jitter, noise)
        tests += [(MultiSensorObservation(pts[:, :, i:i + 1]), c) for i in range(test)]
    return d, tests
