import csv

import numpy as np
import pytest

from collabsparse import (ClassDecision, ConfigError, KernelSpec, MultiSensorObservation,
                          SolverConfig, StructuredDictionary, Variant, build_gram, classify_kernel,
                          classify_linear, majority_vote_baseline, solve, solve_kernel,
                          solve_many)
from collabsparse.classify import class_residuals, write_decisions
from collabsparse.core import CoefficientBlocks, Decomposition, SolveTrace
from collabsparse.kernels import solve_kernel_many
from collabsparse.synth import PRESETS, make_dataset

from helpers import planted_rows, radial_problem, random_dictionary, random_observation


def decomposition(A, offsets, L=None, E=None):
    return Decomposition(CoefficientBlocks.from_stacked(A, offsets), L, E, SolveTrace())


@pytest.fixture(scope="module")
def corrupted_set():
    """Experiment-1 style data at 0 dB: dictionary and normalized test observations."""
    ds = make_dataset(PRESETS["exp1"].replace(snr_db=0.0))
    return ds, ds.dictionary(), [s.observation().normalized() for s in ds.test]


def test_exact_atom_wins():
    rng = np.random.default_rng(40)
    d = random_dictionary(rng, 3, 10, 9, C=3)
    p = d.class_offsets[2]
    obs = MultiSensorObservation(d.atoms[:, :, p:p + 1])
    A = np.zeros((3, 9, 1))
    A[:, p, 0] = 1.0
    dec = decomposition(A, d.class_offsets)
    out = classify_linear(d, obs, dec, Variant.JSR)
    assert out.label == 2 and out.residuals[2] < 1e-10
    assert out.margin > 0


def test_ties_go_to_lowest_index(rng):
    atoms = rng.standard_normal((2, 5, 3))
    d = StructuredDictionary(np.concatenate([atoms, atoms], axis=2), (3, 3))
    obs = random_observation(rng, 2, 5, 1)
    A = np.zeros((2, 6, 1))
    A[:, 1, 0] = A[:, 4, 0] = 0.5
    out = classify_linear(d, obs, decomposition(A, d.class_offsets), Variant.JSR)
    assert out.residuals[0] == out.residuals[1] and out.label == 0 and out.margin == 0.0
    assert ClassDecision.from_residuals([3.0, 1.0, 1.0]).label == 1


def test_variant_mismatch_rejected(rng):
    d = random_dictionary(rng, 2, 5, 6)
    obs = random_observation(rng, 2, 5, 1)
    dec = decomposition(np.zeros((2, 6, 1)), d.class_offsets)
    with pytest.raises(ConfigError):
        classify_linear(d, obs, dec, Variant.JSR_L)


def test_lowrank_classifier_on_corrupted_data(corrupted_set):
    ds, d, obs = corrupted_set
    cfg = SolverConfig(variant=Variant.JSR_L, lambda_L=8.0)
    decs = solve_many(d, obs, cfg)
    labels = [classify_linear(d, o, dec, Variant.JSR_L).label for o, dec in zip(obs, decs)]
    truth = [s.label for s in ds.test]
    assert len(truth) == 100
    assert np.mean(np.equal(labels, truth)) >= 0.9


def test_linear_kernel_matches_linear_classifier():
    rng = np.random.default_rng(41)
    d = random_dictionary(rng, 2, 20, 9, C=3)
    obs, _ = planted_rows(rng, d, [1, 7], 2)
    cfg = SolverConfig(variant=Variant.JSR, max_iters=5000)
    lin = classify_linear(d, obs, solve(d, obs, cfg), Variant.JSR)
    g = build_gram(d, obs, KernelSpec("linear"))
    ker = classify_kernel(g, solve_kernel(g, cfg))
    assert ker.label == lin.label
    np.testing.assert_allclose(ker.residuals, lin.residuals, rtol=1e-4)  # solver tolerance, not rounding


def test_kernel_zero_coefficients_pick_first_class(rng):
    d = random_dictionary(rng, 2, 5, 6)
    g = build_gram(d, random_observation(rng, 2, 5, 2), KernelSpec("rbf", eta=1.0))
    out = classify_kernel(g, decomposition(np.zeros((2, 6, 2)), d.class_offsets))
    assert out.label == 0
    assert len(set(out.residuals)) == 1


def test_kernel_classifier_on_shell_data():
    d, tests = radial_problem(3, test=5)
    cfg = SolverConfig(variant=Variant.JSR)
    obs = [o for o, _ in tests]
    grams = build_gram(d, obs, KernelSpec("rbf"))
    labels = [classify_kernel(g, dec).label for g, dec in zip(grams, solve_kernel_many(grams, cfg))]
    assert labels == [c for _, c in tests]


def test_majority_vote_agreement_and_split():
    rng = np.random.default_rng(42)
    d = random_dictionary(rng, 3, 20, 12, C=3)
    obs, _ = planted_rows(rng, d, [d.class_offsets[1]], 1)
    assert majority_vote_baseline(d, obs).label == 1
    # sensor 0 sees class 2, sensor 1 sees class 1: a split vote
    p1, p2 = d.class_offsets[1], d.class_offsets[2]
    d2 = d.select_sensors([0, 1])
    split = MultiSensorObservation(np.stack([d2.atoms[0, :, p2:p2 + 1], d2.atoms[1, :, p1:p1 + 1]]))
    out = majority_vote_baseline(d2, split)
    assert out.residuals == (2.0, 1.0, 1.0) and out.label == 1


def test_majority_vote_fails_where_lowrank_fusion_succeeds():
    ds = make_dataset(PRESETS["exp1"].replace(snr_db=-6.0, test_per_class=10))
    d = ds.dictionary()
    cfg = SolverConfig(variant=Variant.JSR_L, lambda_L=8.0)
    found = 0
    for s in ds.test:
        obs = s.observation().normalized()
        fused = classify_linear(d, obs, solve(d, obs, cfg), Variant.JSR_L)
        if fused.label != s.label:
            continue
        vote = majority_vote_baseline(d, obs)
        # a class's residual counts the sensors that did not vote for it
        if vote.label != fused.label and vote.residuals[s.label] >= d.M / 2:
            found += 1
    assert found >= 1


def test_residuals_follow_class_permutation(rng):
    d = random_dictionary(rng, 2, 6, 9, C=3)
    obs = random_observation(rng, 2, 6, 2)
    A = rng.standard_normal((2, 9, 2))
    L = rng.standard_normal((6, 4))
    base = class_residuals(d, obs, decomposition(A, d.class_offsets, L=L))
    perm = [2, 0, 1]
    cols = np.concatenate([np.arange(d.class_offsets[c], d.class_offsets[c + 1]) for c in perm])
    pd = StructuredDictionary(d.atoms[:, :, cols], tuple(d.class_sizes[c] for c in perm))
    permuted = class_residuals(pd, obs, decomposition(A[:, cols], pd.class_offsets, L=L))
    np.testing.assert_allclose(permuted, base[perm], rtol=1e-12)
    assert ClassDecision.from_residuals(permuted).label == perm.index(int(np.argmin(base)))


def test_scaling_keeps_winner(rng):
    d = random_dictionary(rng, 2, 6, 9, C=3)
    obs = random_observation(rng, 2, 6, 2)
    A = rng.standard_normal((2, 9, 2))
    E = rng.standard_normal((6, 4))
    s = 7.5
    a = classify_linear(d, obs, decomposition(A, d.class_offsets, E=E), Variant.JSR_E)
    b = classify_linear(d, MultiSensorObservation(s * obs.data),
                        decomposition(s * A, d.class_offsets, E=s * E), Variant.JSR_E)
    assert a.label == b.label
    np.testing.assert_allclose(b.residuals, s ** 2 * np.array(a.residuals), rtol=1e-12)


def test_joint_residual_matches_naive(rng):
    d = random_dictionary(rng, 3, 5, 8, C=3)
    obs = random_observation(rng, 3, 5, 2)
    A = rng.standard_normal((3, 8, 2))
    got = class_residuals(d, obs, decomposition(A, d.class_offsets))
    for c in range(3):
        total = 0.0
        for m in range(3):
            for t in range(2):
                for n in range(5):
                    approx = sum(d.atoms[m, n, p] * A[m, p, t] for p in range(*d.class_offsets[c:c + 2]))
                    total += (obs.data[m, n, t] - approx) ** 2
        assert got[c] == pytest.approx(total, rel=1e-12)


def test_write_decisions(tmp_path):
    rows = [("s1", 0, ClassDecision.from_residuals([0.25, 1.0])),
            ("s2", None, ClassDecision.from_residuals([2.0, 0.5]))]
    write_decisions(tmp_path / "d.csv", rows, 2)
    with open(tmp_path / "d.csv", newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["sample_id", "true_label", "predicted", "residual_0", "residual_1", "margin"]
    assert got[1] == ["s1", "0", "0", "0.25", "1", "0.75"]
    assert got[2] == ["s2", "", "1", "2", "0.5", "1.5"]
