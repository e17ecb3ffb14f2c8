import numpy as np
import pytest

from conftest import random_dictionary
from sparsedict.learn import (
    LearnConfig,
    learn_dictionary,
    surrogate_objective,
    update_column,
    update_dictionary,
)
from sparsedict.types import (
    DimensionError,
    Dictionary,
    LearnAccumulators,
    SolverError,
    SolverSettings,
    validate_dictionary,
)


def random_acc(rng, m, n, k, density=0.6):
    P = rng.standard_normal((m, k))
    X = rng.standard_normal((n, k)) * (rng.random((n, k)) < density)
    return LearnAccumulators(X @ X.T, P @ X.T, k), P, X


def test_config_rejects_zero_patches():
    with pytest.raises(ValueError):
        LearnConfig(0, SolverSettings(0.1))


def test_update_column_residual_free():
    D = np.array([[1.0, 0.0], [0.0, 0.6]])
    a = np.array([0.3, 2.0])
    out = update_column(D, 1, a, D @ a, 2.0)
    assert np.array_equal(out, D[:, 1])


def test_update_column_projects_long_vector():
    D = np.zeros((3, 1))
    out = update_column(D, 0, np.array([1.0]), np.array([3.0, 0.0, 0.0]), 1.0)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-15)


def test_update_column_hand_example():
    D = np.array([[0.0], [1.0]])
    out = update_column(D, 0, np.array([1.0]), np.array([0.5, 1.0]), 1.0)
    assert np.allclose(out, [0.4472135955, 0.894427191])


def test_update_column_rejects_zero_diagonal():
    with pytest.raises(ValueError):
        update_column(np.eye(2), 0, np.zeros(2), np.zeros(2), 0.0)


def test_surrogate_examples(rng):
    D = random_dictionary(rng, 4, 6)
    acc = LearnAccumulators(np.eye(6), D.atoms, 3)
    assert surrogate_objective(D, acc) == pytest.approx(-np.sum(D.atoms**2) / 6)
    assert surrogate_objective(np.zeros((4, 6)), acc) == 0.0
    with pytest.raises(ValueError):
        surrogate_objective(D, LearnAccumulators.zeros(4, 6))


def test_surrogate_matches_direct_sum(rng):
    D = random_dictionary(rng, 4, 6)
    acc, P, X = random_acc(rng, 4, 6, 10)
    direct = sum(0.5 * np.sum((D.atoms @ X[:, i] - P[:, i]) ** 2) for i in range(10)) / 10
    const = sum(0.5 * P[:, i] @ P[:, i] for i in range(10)) / 10
    assert surrogate_objective(D, acc) == pytest.approx(direct - const, rel=1e-12)


def test_stationary_point_is_fixed(rng):
    D = random_dictionary(rng, 4, 6)
    out, sweeps = update_dictionary(D, LearnAccumulators(np.eye(6), D.atoms, 1))
    assert np.allclose(out.atoms, D.atoms, atol=1e-15) and sweeps == 1


def test_all_unused_atoms_unchanged(rng):
    D = random_dictionary(rng, 4, 6)
    acc = LearnAccumulators(np.zeros((6, 6)), rng.standard_normal((4, 6)), 2)
    out, _ = update_dictionary(D, acc)
    assert np.array_equal(out.atoms, D.atoms)


def test_skip_rule_bitwise(rng):
    D = random_dictionary(rng, 4, 6)
    acc, _, _ = random_acc(rng, 4, 6, 10)
    A = np.array(acc.A)
    A[2, :] = A[:, 2] = 0.0
    B = np.array(acc.B)
    out, _ = update_dictionary(D, LearnAccumulators(A, B, 10))
    assert np.array_equal(out.atoms[:, 2], D.atoms[:, 2])
    assert not np.array_equal(out.atoms[:, 0], D.atoms[:, 0])


def test_update_descends_and_stays_in_ball():
    gen = np.random.default_rng(3)
    for _ in range(20):
        D = random_dictionary(gen, 4, 6)
        acc, _, _ = random_acc(gen, 4, 6, 10)
        hist = []
        out, _ = update_dictionary(D, acc, history=hist)
        assert validate_dictionary(out).ok
        vals = [surrogate_objective(D, acc)] + hist
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
        assert surrogate_objective(out, acc) <= surrogate_objective(D, acc) + 1e-12


def test_update_dimension_errors(rng):
    D = random_dictionary(rng, 4, 6)
    acc, _, _ = random_acc(rng, 4, 7, 3)
    with pytest.raises(DimensionError):
        update_dictionary(D, acc)
    with pytest.raises(ValueError):
        update_dictionary(D, LearnAccumulators.zeros(4, 6))


def test_learn_recovers_dominant_atom():
    gen = np.random.default_rng(5)
    D0 = random_dictionary(gen, 16, 32)
    patch = D0.atoms[:, 1].copy()
    cfg = LearnConfig(1, SolverSettings(2.0**-8, eps_rel=1e-10), rng_seed=0)
    codes = []
    learn_dictionary(D0, patch[:, None], cfg, callback=lambda k, D, acc: codes.append(acc.A.diagonal()))
    x2 = codes[0]
    others = np.delete(x2, 1)
    assert np.sqrt(x2[1]) > 10 * np.sqrt(others.max())


def test_learn_is_reproducible_and_valid(rng):
    D0 = random_dictionary(rng, 9, 18)
    patches = rng.standard_normal((9, 40))
    cfg = LearnConfig(25, SolverSettings(0.1), rng_seed=11)
    D1, log1 = learn_dictionary(D0, patches, cfg)
    D2, log2 = learn_dictionary(D0, patches, cfg)
    assert np.array_equal(D1.atoms, D2.atoms)
    assert log1.to_csv() == log2.to_csv()
    assert validate_dictionary(D1).ok
    assert len(log1.zeros) == 25
    header = log1.to_csv().splitlines()[0]
    assert header == "iteration,zeros,surrogate_objective,solver_iterations,bcd_sweeps"


def test_learn_rejects_bad_patches(rng):
    D0 = random_dictionary(rng, 9, 18)
    cfg = LearnConfig(2, SolverSettings(0.1))
    with pytest.raises(DimensionError):
        learn_dictionary(D0, np.zeros((8, 3)), cfg)
    with pytest.raises(ValueError):
        learn_dictionary(D0, np.zeros((9, 0)), cfg)


def test_learn_solver_failure_names_iteration(rng):
    D0 = random_dictionary(rng, 4, 8)
    patches = np.full((4, 1), np.inf)
    with pytest.raises(SolverError) as info:
        learn_dictionary(D0, patches, LearnConfig(3, SolverSettings(0.1)))
    assert info.value.index == 1
