import itertools
import math

import numpy as np
import pytest

from mfgauge import measures as M
from mfgauge import transport as T


def test_point_masses():
    d, plan = T.w2_exact(M.from_points([[0.0]]), M.from_points([[1.0]]))
    assert d == pytest.approx(1.0, abs=1e-15)
    plan.validate(M.from_points([[0.0]]), M.from_points([[1.0]]))


def test_identity_is_zero():
    rng = np.random.default_rng(1)
    mu = M.from_points(rng.normal(0, 1, (4, 2)), rng.dirichlet(np.ones(4)))
    d, _ = T.w2_exact(mu, mu)
    assert d == pytest.approx(0.0, abs=1e-12)


def test_two_atom_pair_brute_forced_inline():
    # independent enumeration of both matchings
    mu = M.from_points([[0.0], [2.0]])
    nu = M.from_points([[1.0], [3.0]])
    costs = []
    for perm in itertools.permutations(range(2)):
        costs.append(0.5 * sum((mu.points[i, 0] - nu.points[perm[i], 0]) ** 2 for i in range(2)))
    d, _ = T.w2_exact(mu, nu)
    assert d == pytest.approx(math.sqrt(min(costs)), abs=1e-12)
    assert d == pytest.approx(1.0, abs=1e-12)


def test_oracle_agreement_random_corpus():
    rng = np.random.default_rng(7)
    for d in (1, 2, 3):
        for _ in range(12):
            n = int(rng.integers(1, 7))
            mu = M.from_points(rng.normal(0, 1, (n, d)))
            nu = M.from_points(rng.normal(0.4, 1.2, (n, d)))
            exact, plan = T.w2_exact(mu, nu)
            assert exact == pytest.approx(T.brute_force_w2(mu, nu), abs=1e-9)
            plan.validate(mu, nu)


def test_brute_force_relabeling_invariance():
    rng = np.random.default_rng(3)
    pts = rng.normal(0, 1, (5, 2))
    mu = M.from_points(pts)
    nu = M.from_points(pts[[3, 1, 4, 0, 2]])
    assert T.brute_force_w2(mu, nu) == pytest.approx(0.0, abs=1e-12)


def test_brute_force_guards():
    mu9 = M.from_points(np.zeros((9, 1)))
    with pytest.raises(T.TooLarge):
        T.brute_force_w2(mu9, mu9)
    with pytest.raises(T.UnequalSupportSizes):
        T.brute_force_w2(M.from_points([[0.0]]), M.from_points([[0.0], [1.0]]))
    with pytest.raises(M.DimensionMismatch):
        T.w2_exact(M.from_points([[0.0]]), M.from_points([[0.0, 0.0]]))


def test_weighted_network_simplex_vs_expanded_uniform():
    # rational weights expand to a uniform problem solvable by assignment
    mu = M.from_points([[0.0, 0.0], [1.0, 2.0]], [0.25, 0.75])
    nu = M.from_points([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]], [0.5, 0.25, 0.25])
    dw, plan = T.w2_exact(mu, nu)
    plan.validate(mu, nu)
    mue = M.from_points([[0.0, 0.0]] + [[1.0, 2.0]] * 3)
    nue = M.from_points([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    de, _ = T.w2_exact(mue, nue)
    assert dw == pytest.approx(de, abs=1e-6)


def test_metric_axioms_sampled():
    rng = np.random.default_rng(11)
    for d in (1, 2):
        ms = [
            M.from_points(rng.normal(0, 1, (int(rng.integers(1, 5)), d)))
            for _ in range(3)
        ]
        dab, _ = T.w2_exact(ms[0], ms[1])
        dba, _ = T.w2_exact(ms[1], ms[0])
        assert dab == dba  # symmetry is exact for these solvers
        dbc, _ = T.w2_exact(ms[1], ms[2])
        dac, _ = T.w2_exact(ms[0], ms[2])
        assert dac <= dab + dbc + 1e-9


def test_plan_feasibility_dominance():
    # any explicit coupling costs at least the optimal cost
    rng = np.random.default_rng(13)
    mu = M.from_points(rng.normal(0, 1, (3, 2)), rng.dirichlet(np.ones(3)))
    nu = M.from_points(rng.normal(1, 1, (4, 2)), rng.dirichlet(np.ones(4)))
    dist, _ = T.w2_exact(mu, nu)
    independent = [
        (i, j, float(mu.weights[i] * nu.weights[j]))
        for i in range(3)
        for j in range(4)
    ]
    assert dist**2 <= T.plan_cost(mu, nu, independent) + 1e-12


def test_translation_equivariance():
    rng = np.random.default_rng(17)
    for d in (1, 2, 3):
        mu = M.from_points(rng.normal(0, 1, (4, d)), rng.dirichlet(np.ones(4)))
        v = rng.normal(0, 1, d)
        dist, _ = T.w2_exact(mu, mu.shift(v))
        assert dist == pytest.approx(float(np.linalg.norm(v)), abs=1e-9)


def test_smoothed_identical_inputs():
    est, se = T.w2_smoothed(
        M.from_points([[0.0]]), M.from_points([[0.0]]), 1.0, T.SamplingBudget(256, 8, 0)
    )
    assert est == 0.0 and se == 0.0  # common random numbers collapse exactly


def test_smoothed_small_bandwidth_limit():
    est, se = T.w2_smoothed(
        M.from_points([[0.0]]), M.from_points([[1.0]]), 1e-3, T.SamplingBudget(512, 32, 1)
    )
    assert est == pytest.approx(1.0, abs=0.05)


def test_smoothed_translates_hit_the_closed_form():
    # translates of one measure keep their exact distance under smoothing,
    # and common random numbers recover it with zero variance
    est, se = T.w2_smoothed(
        M.from_points([[0.0]]), M.from_points([[1.0]]), 1.0, T.SamplingBudget(256, 8, 2)
    )
    assert est == pytest.approx(1.0, abs=1e-12)
    assert est <= 1.0 + 3 * se + 1e-12


def test_smoothed_converges_as_bandwidth_shrinks():
    mu = M.from_points([[0.0], [2.0]])
    nu = M.from_points([[0.5], [3.0]])
    exact, _ = T.w2_exact(mu, nu)
    gaps, ses = [], []
    for rho in (0.5, 0.25, 0.125):
        est, se = T.w2_smoothed(mu, nu, rho, T.SamplingBudget(512, 16, 5))
        gaps.append(abs(est - exact))
        ses.append(se)
    assert gaps[1] <= gaps[0] + 2 * (ses[0] + ses[1])
    assert gaps[2] <= gaps[1] + 2 * (ses[1] + ses[2])


def test_debias_examples():
    assert T.debias_smoothed(0.0, 1.0, 2) == pytest.approx(4.0, abs=1e-15)
    assert T.debias_smoothed(1.5, 0.0, 7) == 1.5
    est, se = T.w2_smoothed(
        M.from_points([[0.0]]), M.from_points([[3.0]]), 0.5, T.SamplingBudget(512, 16, 3)
    )
    assert T.debias_smoothed(est, 0.5, 1) >= 3.0 - 3 * se


def test_budget_and_bandwidth_guards():
    with pytest.raises(T.TransportError):
        T.SamplingBudget(0, 1)
    with pytest.raises(T.InvalidBandwidth):
        T.w2_smoothed(M.from_points([[0.0]]), M.from_points([[1.0]]), 0.0)
