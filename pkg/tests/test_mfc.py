import math

import numpy as np
import pytest

from mfgauge import gauge as G
from mfgauge import measures as M
from mfgauge import mfc
from mfgauge.coefficients import (
    BANGBANG,
    HEAT_COS,
    TANH_INTERACT,
    CoefficientSet,
    get_coefficients,
    validate_coefficients,
)
from mfgauge.mollify import QuadratureBudgetExceeded, mollify

DELTA0 = M.from_points([[0.0]])


def zero_sigma(t, x, a):
    return np.zeros(x.shape[:-1] + (x.shape[-1], 1))


FROZEN = CoefficientSet(
    name="frozen",
    b=HEAT_COS.b,
    sigma=zero_sigma,
    f=HEAT_COS.f,
    g=HEAT_COS.g,
    K=1.0,
    beta=1.0,
    controls=(0.0,),
    d=1,
    m=1,
)


def test_registry_passes_spot_checks():
    for key in ("heat-cos", "tanh-interact", "bangbang"):
        validate_coefficients(get_coefficients(key), probes=48, seed=1)


def test_registry_unknown_key():
    with pytest.raises(M.MeasureError):
        get_coefficients("nope")


# ---------------------------------------------------------------------------
# simulate


def test_simulate_frozen_dynamics():
    path = mfc.simulate(
        FROZEN, mfc.constant_policy(0.0), 0.0, M.from_points([[0.7]]),
        horizon=1.0, n_particles=5, steps=10, seed=3,
    )
    assert np.all(path.states == 0.7)


def test_simulate_brownian_variance():
    path = mfc.simulate(
        HEAT_COS, mfc.constant_policy(0.0), 0.0, DELTA0,
        horizon=1.0, n_particles=10000, steps=50, seed=4,
    )
    assert 0.9 <= path.states[-1].var() <= 1.1


def test_simulate_bit_identical():
    kw = dict(horizon=1.0, n_particles=100, steps=20, seed=44)
    a = mfc.simulate(HEAT_COS, mfc.constant_policy(0.0), 0.0, DELTA0, **kw)
    b = mfc.simulate(HEAT_COS, mfc.constant_policy(0.0), 0.0, DELTA0, **kw)
    assert np.array_equal(a.states, b.states)


def test_simulate_horizon_guard():
    with pytest.raises(mfc.InvalidHorizon):
        mfc.simulate(
            HEAT_COS, mfc.constant_policy(0.0), 2.0, DELTA0,
            horizon=1.0, n_particles=2, steps=2, seed=0,
        )


@pytest.mark.filterwarnings("ignore:overflow")
def test_simulate_blowup_detection():
    exploding = CoefficientSet(
        name="boom",
        b=lambda t, x, p, w, a: 1e200 * x,
        sigma=zero_sigma,
        f=HEAT_COS.f,
        g=HEAT_COS.g,
        K=1.0,
        beta=1.0,
        controls=(0.0,),
        d=1,
        m=1,
    )
    with pytest.raises(mfc.NonFiniteState):
        mfc.simulate(
            exploding, mfc.constant_policy(0.0), 0.0, M.from_points([[1.0]]),
            horizon=1.0, n_particles=2, steps=5, seed=0,
        )


def test_eps_coupling_fit_then_verify():
    # shape of the pathwise regularization estimate: fit the constant on one
    # instance, verify it uniformly over a corpus of fresh seeds
    def max_gap(seed, eps):
        kw = dict(horizon=1.0, n_particles=400, steps=40)
        pe = mfc.simulate(HEAT_COS, mfc.constant_policy(0.0), 0.0, DELTA0, eps=eps, seed=seed, **kw)
        p0 = mfc.simulate(HEAT_COS, mfc.constant_policy(0.0), 0.0, DELTA0, eps=0.0, seed=seed, **kw)
        return float(np.max(np.abs(pe.states - p0.states)))

    c_fit = max_gap(0, 0.2) / 0.2 * 1.5
    for seed in range(1, 11):
        for eps in (0.1, 0.2, 0.4):
            assert max_gap(seed, eps) <= c_fit * eps


# ---------------------------------------------------------------------------
# reward


def test_reward_constant_terminal():
    const_g = CoefficientSet(
        name="constg", b=FROZEN.b, sigma=zero_sigma, f=FROZEN.f,
        g=lambda x, p, w: np.full(x.shape[:-1], 0.37),
        K=1.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    path = mfc.simulate(const_g, mfc.constant_policy(0.0), 0.0, DELTA0,
                        horizon=1.0, n_particles=10, steps=5, seed=0)
    assert mfc.reward(const_g, path) == pytest.approx(0.37, abs=1e-14)


def test_reward_pure_time_integral_exact_for_constant_f():
    running = CoefficientSet(
        name="running", b=FROZEN.b, sigma=zero_sigma,
        f=lambda t, x, p, w, a: np.ones(x.shape[:-1]),
        g=lambda x, p, w: np.zeros(x.shape[:-1]),
        K=1.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    path = mfc.simulate(running, mfc.constant_policy(0.0), 0.5, DELTA0,
                        horizon=1.0, n_particles=4, steps=13, seed=0)
    assert mfc.reward(running, path) == pytest.approx(0.5, abs=1e-12)


def test_reward_heat_kernel_closed_form():
    pv = mfc.value_policy_search(
        HEAT_COS, 0.0, DELTA0, mfc.constant_policies(HEAT_COS),
        horizon=1.0, params=mfc.SimParams(20000, 100, 2, 11),
    )
    assert pv.value == pytest.approx(math.exp(-0.5), abs=0.02)


def test_reward_invariant_under_relabeling():
    path = mfc.simulate(TANH_INTERACT, mfc.constant_policy(0.0), 0.0,
                        M.from_points([[0.0], [1.0]]),
                        horizon=1.0, n_particles=64, steps=10, seed=5)
    perm = np.random.default_rng(0).permutation(64)
    shuffled = mfc.EnsemblePath(
        path.times, path.states[:, perm, :], path.controls[:, perm],
        path.eps, path.seed, path.coeffs_name,
    )
    assert mfc.reward(TANH_INTERACT, shuffled) == pytest.approx(
        mfc.reward(TANH_INTERACT, path), abs=1e-12
    )


# ---------------------------------------------------------------------------
# policy search / experiments


def test_singleton_control_degenerates_to_one_evaluation():
    pv = mfc.value_policy_search(
        HEAT_COS, 0.0, DELTA0, mfc.constant_policies(HEAT_COS),
        horizon=1.0, params=mfc.SimParams(500, 20, 2, 1),
    )
    assert len(pv.per_policy) == 1 and pv.best_index == 0


def test_bangbang_prefers_positive_drift():
    pv = mfc.value_policy_search(
        BANGBANG, 0.0, DELTA0, mfc.constant_policies(BANGBANG),
        horizon=1.0, params=mfc.SimParams(4000, 50, 2, 12),
    )
    assert pv.best_index == 1  # constant +1 dominates for increasing terminal g


def test_policy_family_monotone_under_common_random_numbers():
    base = mfc.constant_policies(BANGBANG)
    small = mfc.value_policy_search(
        BANGBANG, 0.0, DELTA0, base, horizon=1.0,
        params=mfc.SimParams(2000, 40, 2, 12),
    )
    big = mfc.value_policy_search(
        BANGBANG, 0.0, DELTA0, base + [mfc.bang_bang_policy(-1, 1, 0.0)],
        horizon=1.0, params=mfc.SimParams(2000, 40, 2, 12),
    )
    assert big.value >= small.value - 1e-12


def test_eps_gap_zero_row_and_monotone_gaps():
    rep = mfc.eps_gap_experiment(
        HEAT_COS, 0.0, DELTA0, [0.0, 0.1, 0.2, 0.4],
        horizon=1.0, params=mfc.SimParams(20000, 100, 2, 13),
    )
    by_eps = {row[0]: row for row in rep.rows}
    assert by_eps[0.0][3] == 0.0
    assert by_eps[0.1][3] <= by_eps[0.2][3] <= by_eps[0.4][3]
    for eps in (0.1, 0.2, 0.4):
        exact = math.exp(-0.5) - math.exp(-(1 + eps**2) / 2)
        assert by_eps[eps][3] == pytest.approx(exact, abs=0.01)
        assert by_eps[eps][3] <= rep.c_fit * eps + 1e-12
    assert math.isfinite(rep.c_fit)


def test_eps_gap_requires_zero():
    with pytest.raises(M.MeasureError):
        mfc.eps_gap_experiment(HEAT_COS, 0.0, DELTA0, [0.1], horizon=1.0,
                               params=mfc.SimParams(10, 2, 1, 0))


def test_dpp_identity_at_s_equals_t():
    rep = mfc.dpp_check(
        HEAT_COS, 0.3, 0.3, DELTA0, mfc.constant_policies(HEAT_COS),
        horizon=1.0, params=mfc.SimParams(200, 10, 2, 3),
    )
    assert rep.gap == 0.0 and rep.tol == 0.0


def test_dpp_tower_property_singleton():
    rep = mfc.dpp_check(
        HEAT_COS, 0.0, 0.5, M.from_points([[0.3]]), mfc.constant_policies(HEAT_COS),
        horizon=1.0, params=mfc.SimParams(4000, 60, 4, 14),
    )
    assert rep.equality_ok()
    # closed form: both sides near e^{-1/2} cos(0.3)
    assert rep.lhs == pytest.approx(math.exp(-0.5) * math.cos(0.3), abs=0.02)
    assert rep.rhs == pytest.approx(math.exp(-0.5) * math.cos(0.3), abs=0.02)


def test_lipschitz_translation_pair():
    mu = M.from_points([[0.0], [0.5]])
    pairs = [(mu, mu.shift([0.3]))]
    rep = mfc.lipschitz_check(
        HEAT_COS, 0.0, pairs, mfc.constant_policies(HEAT_COS),
        horizon=1.0, params=mfc.SimParams(20000, 60, 2, 15),
    )
    # g = cos is 1-Lipschitz and there is no drift: ratio <= 1 + MC noise
    assert rep.max_ratio <= 1.0 + 0.1


def test_lipschitz_corpus_below_fitted_constant():
    rng = np.random.default_rng(16)
    fit_pairs, check_pairs = [], []
    for k in range(8):
        mu = M.from_points(rng.normal(0, 1, (3, 1)))
        nu = M.from_points(rng.normal(0.2, 1, (3, 1)))
        (fit_pairs if k < 4 else check_pairs).append((mu, nu))
    params = mfc.SimParams(8000, 50, 2, 17)
    kw = dict(horizon=1.0, params=params)
    fit = mfc.lipschitz_check(HEAT_COS, 0.0, fit_pairs, mfc.constant_policies(HEAT_COS), **kw)
    L = 1.5 * max(fit.max_ratio, 1.0)
    check = mfc.lipschitz_check(HEAT_COS, 0.0, check_pairs, mfc.constant_policies(HEAT_COS), **kw)
    assert check.max_ratio <= L


def test_lipschitz_degenerate_pair_rejected():
    mu = M.from_points([[0.0]])
    with pytest.raises(mfc.DegeneratePair):
        mfc.lipschitz_check(HEAT_COS, 0.0, [(mu, mu)], mfc.constant_policies(HEAT_COS),
                            horizon=1.0, params=mfc.SimParams(10, 2, 1, 0))


# ---------------------------------------------------------------------------
# Ito chain rule


def test_ito_mean_candidate_is_exact():
    u = mfc.candidate_mean(1)
    res = mfc.ito_check(
        u, [0.3], [[0.0]], 0.0, 0.7, M.from_points([[0.2], [1.0]], [0.25, 0.75]),
        particles=400, steps=37, seed=5,
    )
    assert res < 1e-10


def test_ito_second_moment_candidate():
    u = mfc.candidate_second_moment(1)
    res = mfc.ito_check(u, [0.0], [[1.0]], 0.0, 1.0, DELTA0,
                        particles=4000, steps=200, seed=4)
    assert res < 0.05


def test_ito_gauge_candidate_ladder_smoke():
    spec = G.GaugeSpec(bandwidth=1.0, c_d=1.0, n_max=3, l_max=4, horizon=1.0)
    anchor = G.GaugePoint(0.0, M.from_points([[0.5]]))
    u = mfc.candidate_from_gauge(anchor, spec)
    coarse = mfc.ito_check(u, [0.2], [[0.4]], 0.0, 0.5, DELTA0,
                           particles=500, steps=50, seed=42)
    fine = mfc.ito_check(u, [0.2], [[0.4]], 0.0, 0.5, DELTA0,
                         particles=2000, steps=200, seed=42)
    assert fine <= coarse + 0.02
    assert fine < 0.05


def test_candidate_quadratic_growth():
    mu = M.from_points([[0.3], [-0.5]])
    X = np.linspace(-3, 3, 7)[:, None]
    mfc.check_quadratic_growth(mfc.candidate_second_moment(1), 0.0, mu, X, C=2.0)
    spec = G.GaugeSpec(bandwidth=1.0, c_d=1.0, n_max=3, l_max=4, horizon=1.0)
    u = mfc.candidate_from_gauge(G.GaugePoint(0.0, mu), spec)
    C = G.DEFAULT_GAUGE_C_D[1] * G.dmu_bound_shape([1.0], 1.0, 1) * 4
    mfc.check_quadratic_growth(u, 0.0, M.from_points([[0.2]]), X, C=C)


# ---------------------------------------------------------------------------
# mollification


def test_mollify_constant_coefficients_exactly():
    const = CoefficientSet(
        name="const",
        b=lambda t, x, p, w, a: np.full(x.shape, 0.37),
        sigma=HEAT_COS.sigma,
        f=lambda t, x, p, w, a: np.full(x.shape[:-1], 0.11),
        g=lambda x, p, w: np.full(x.shape[:-1], 0.42),
        K=1.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    mo = mollify(const, 2, 4)
    xb = np.array([[0.3, -1.2], [2.0, 0.1]])
    np.testing.assert_allclose(mo.g_i(0, xb), 0.42, atol=1e-14)
    np.testing.assert_allclose(mo.b_i(1, 0.2, xb, 0.0), 0.37, atol=1e-14)
    np.testing.assert_allclose(mo.f_i(0, 0.2, xb, 0.0), 0.11, atol=1e-14)


def test_mollify_error_halves_when_m_doubles():
    # symmetric kernel: the first-order term cancels, so gaps shrink by >= 2
    xb = np.array([[0.4, -0.9]])
    w2 = np.full(2, 0.5)
    pts = xb.reshape(-1, 2, 1)
    exact = TANH_INTERACT.b(0.0, pts[:, 0, :], pts, w2, 0.0)
    gaps = []
    for m in (4, 8, 16):
        mo = mollify(TANH_INTERACT, 2, m)
        gaps.append(float(abs(mo.b_i(0, 0.0, xb, 0.0) - exact)[0, 0]))
    assert gaps[0] / gaps[1] >= 2.0
    assert gaps[1] / gaps[2] >= 2.0


def test_mollify_gap_bounded_by_quadrature_rhs():
    rng = np.random.default_rng(19)
    mo = mollify(TANH_INTERACT, 2, 8)
    for _ in range(20):
        xb = rng.normal(0, 1.5, (1, 2))
        pts = xb.reshape(-1, 2, 1)
        w2 = np.full(2, 0.5)
        for i in (0, 1):
            exact = TANH_INTERACT.g(pts[:, i, :], pts, w2)
            gap = float(abs(mo.g_i(i, xb) - exact)[0])
            assert gap <= mo.space_gap_rhs(i) + 1e-12


def test_mollified_lipschitz_estimate():
    rng = np.random.default_rng(20)
    mo = mollify(TANH_INTERACT, 2, 8)
    for _ in range(20):
        xa = rng.normal(0, 1, (1, 2))
        za = rng.normal(0, 1, (1, 2))
        for i in (0, 1):
            lhs = float(abs(mo.g_i(i, xa) - mo.g_i(i, za))[0])
            assert lhs <= mo.lipschitz_rhs(xa, za, i) + 1e-9
            lhs_b = float(
                np.linalg.norm(mo.b_i(i, 0.0, xa, 0.0) - mo.b_i(i, 0.0, za, 0.0))
            )
            assert lhs_b <= mo.lipschitz_rhs(xa, za, i) + 1e-9


def test_mollify_time_convolution_path():
    wobble = CoefficientSet(
        name="wobble",
        b=lambda t, x, p, w, a: 0.3 * math.sin(float(t)) * np.ones_like(x)
        if np.isscalar(t)
        else 0.3 * np.sin(np.asarray(t))[..., None] * np.ones_like(x),
        sigma=HEAT_COS.sigma,
        f=HEAT_COS.f,
        g=HEAT_COS.g,
        K=1.0,
        beta=1.0,
        controls=(0.0,),
        d=1,
        m=1,
        time_dependent=True,
    )
    xb = np.array([[0.5]])
    exact = 0.3 * math.sin(0.5)
    gaps = []
    for m in (8, 16, 32):
        mo = mollify(wobble, 1, m, horizon=1.0)
        val = float(mo.b_i(0, 0.5, xb, 0.0)[0, 0])
        gap = abs(val - exact)
        assert gap <= mo.space_gap_rhs(0) + mo.time_gap_rhs(0.5) + 1e-12
        gaps.append(gap)
    assert gaps[2] <= gaps[0]


def test_mollify_dimension_cap():
    with pytest.raises(QuadratureBudgetExceeded):
        mollify(HEAT_COS, 4, 8)
    with pytest.raises(M.MeasureError):
        mollify(HEAT_COS, 0, 8)
