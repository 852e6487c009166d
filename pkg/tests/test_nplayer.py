import math

import numpy as np
import pytest

from mfgauge import measures as M
from mfgauge import mfc
from mfgauge import nplayer as NP
from mfgauge.coefficients import HEAT_COS, TANH_INTERACT, CoefficientSet
from mfgauge.mollify import mollify

DELTA0 = M.from_points([[0.0]])
EPS = 0.1


@pytest.fixture(scope="module")
def heat_grid():
    moll = mollify(HEAT_COS, 1, 32, horizon=1.0)
    return NP.solve_hjb(
        moll, EPS, horizon=1.0, grid=NP.GridParams(8.0, 201, 400)
    )


@pytest.fixture(scope="module")
def tanh_grid_n2():
    moll = mollify(TANH_INTERACT, 2, 8, horizon=1.0)
    return NP.solve_hjb(
        moll, EPS, horizon=1.0, grid=NP.GridParams(6.0, 101, "auto")
    )


def test_heat_cos_closed_form(heat_grid):
    sl = heat_grid.time_slice(0.0)
    mask = np.abs(heat_grid.axis) <= 4.0
    exact = math.exp(-(1 + EPS**2) / 2) * np.cos(heat_grid.axis[mask])
    assert np.max(np.abs(sl[mask] - exact)) < 5e-3


def test_constant_terminal_is_invariant():
    const = CoefficientSet(
        name="constg", b=HEAT_COS.b, sigma=HEAT_COS.sigma, f=HEAT_COS.f,
        g=lambda x, p, w: np.full(x.shape[:-1], 0.27),
        K=1.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    vg = NP.solve_hjb(mollify(const, 1, 8, horizon=1.0), EPS, horizon=1.0,
                      grid=NP.GridParams(4.0, 81, "auto"))
    assert np.max(np.abs(vg.values - 0.27)) < 1e-12


def test_running_reward_shifts_value_additively():
    shifted = CoefficientSet(
        name="shifted", b=HEAT_COS.b, sigma=HEAT_COS.sigma,
        f=lambda t, x, p, w, a: np.ones(x.shape[:-1]),
        g=HEAT_COS.g, K=1.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    grid = NP.GridParams(6.0, 121, 200)
    base = NP.solve_hjb(mollify(HEAT_COS, 1, 8, horizon=1.0), EPS, horizon=1.0, grid=grid)
    plus = NP.solve_hjb(mollify(shifted, 1, 8, horizon=1.0), EPS, horizon=1.0, grid=grid)
    for j, t in enumerate(base.times):
        gap = plus.values[j] - base.values[j] - (1.0 - t)
        assert np.max(np.abs(gap)) < 1e-6


def test_comparison_principle_monotone_scheme():
    bumped = CoefficientSet(
        name="bumped", b=TANH_INTERACT.b, sigma=TANH_INTERACT.sigma,
        f=TANH_INTERACT.f,
        g=lambda x, p, w: np.cos(x[..., 0]) + 0.3 * np.exp(-x[..., 0] ** 2),
        K=2.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    grid = NP.GridParams(5.0, 81, 120)
    lo = NP.solve_hjb(mollify(TANH_INTERACT, 1, 8, horizon=1.0), EPS, horizon=1.0, grid=grid)
    hi = NP.solve_hjb(mollify(bumped, 1, 8, horizon=1.0), EPS, horizon=1.0, grid=grid)
    assert np.all(hi.values >= lo.values - 1e-12)


def test_exchangeability(tanh_grid_n2):
    V0 = tanh_grid_n2.time_slice(0.0)
    assert np.max(np.abs(V0 - V0.T)) < 1e-8


def test_cfl_violation_and_dimension_cap():
    moll = mollify(HEAT_COS, 1, 8, horizon=1.0)
    with pytest.raises(NP.CFLViolation):
        NP.solve_hjb(moll, EPS, horizon=1.0, grid=NP.GridParams(8.0, 401, 100))
    with pytest.raises(M.MeasureError):
        NP.solve_hjb(moll, 0.0, horizon=1.0, grid=NP.GridParams(8.0, 81, "auto"))
    with pytest.raises(mfc.QuadratureBudgetExceeded):
        mollify(HEAT_COS, 4, 8, horizon=1.0)


def test_implicit_scheme_agrees_on_heat_cos():
    moll = mollify(HEAT_COS, 1, 16, horizon=1.0)
    vg = NP.solve_hjb(moll, EPS, horizon=1.0,
                      grid=NP.GridParams(8.0, 201, 50, scheme="implicit"))
    mask = np.abs(vg.axis) <= 4.0
    exact = math.exp(-(1 + EPS**2) / 2) * np.cos(vg.axis[mask])
    assert np.max(np.abs(vg.time_slice(0.0)[mask] - exact)) < 5e-2


def test_lift_point_mass_is_grid_value(heat_grid):
    v = NP.lift(heat_grid, 0.0, DELTA0)
    node = heat_grid.time_slice(0.0)[heat_grid.axis.size // 2]
    assert v == pytest.approx(node, abs=1e-12)


def test_lift_permutation_invariance(tanh_grid_n2):
    mu = M.from_points([[0.2], [-0.5], [1.0]], [0.5, 0.3, 0.2])
    perm = M.EmpiricalMeasure(mu.points[[2, 0, 1]], mu.weights[[2, 0, 1]])
    assert NP.lift(tanh_grid_n2, 0.0, mu) == pytest.approx(
        NP.lift(tanh_grid_n2, 0.0, perm), abs=1e-12
    )


def test_lift_multilinear_in_weights(tanh_grid_n2):
    pts = np.array([[0.2], [-0.5], [1.0]])
    w1 = np.array([0.5, 0.3, 0.2])
    w2 = np.array([0.1, 0.6, 0.3])
    lam = 0.35
    mix = lam * w1 + (1 - lam) * w2
    # the lift is a polynomial of degree n in the weight vector; along a
    # segment of measures with fixed atoms it is quadratic here (n = 2), so
    # three-point interpolation reproduces the midpoint exactly
    f = lambda w: NP.lift(tanh_grid_n2, 0.0, M.EmpiricalMeasure(pts, w))
    quad = np.polyfit([0.0, 0.5, 1.0], [f(w2), f(0.5 * w1 + 0.5 * w2), f(w1)], 2)
    assert f(mix) == pytest.approx(float(np.polyval(quad, lam)), abs=1e-10)


def test_lift_mc_agrees_with_exact(tanh_grid_n2):
    mu = M.from_points([[0.2], [-0.5], [1.0]], [0.5, 0.3, 0.2])
    exact = NP.lift(tanh_grid_n2, 0.0, mu)
    est = NP.lift(tanh_grid_n2, 0.0, mu, tuple_cap=1, mc_samples=200000, seed=2)
    assert exact == pytest.approx(est, abs=3 * est.stderr + 1e-6)


def test_lift_support_guard(heat_grid):
    with pytest.raises(NP.SupportOutsideGrid):
        NP.lift(heat_grid, 0.0, M.from_points([[100.0]]))


def test_l_derivatives_on_node_fd_oracle(tanh_grid_n2):
    ax = tanh_grid_n2.axis
    mu = M.from_points([[ax[52]], [ax[46]], [ax[58]]], [0.5, 0.3, 0.2])
    fld = NP.l_derivatives(tanh_grid_n2, 0.0, mu)
    h = 1e-3
    for k in range(3):
        g = fld.dmu(mu.points[k : k + 1])[0]
        up = mu.points.copy()
        up[k, 0] += h
        dn = mu.points.copy()
        dn[k, 0] -= h
        fd = (
            NP.lift(tanh_grid_n2, 0.0, M.EmpiricalMeasure(up, mu.weights))
            - NP.lift(tanh_grid_n2, 0.0, M.EmpiricalMeasure(dn, mu.weights))
        ) / (2 * h)
        pred = mu.weights[k] * g[0]
        assert abs(fd - pred) <= 1e-3 * (1 + abs(pred))


def test_l_derivatives_n1_measure_independent(heat_grid):
    fa = NP.l_derivatives(heat_grid, 0.0, M.from_points([[0.2]]))
    fb = NP.l_derivatives(heat_grid, 0.0, M.from_points([[1.5], [-2.0]]))
    X = np.array([[0.5], [1.0]])
    np.testing.assert_allclose(fa.dmu(X), fb.dmu(X), atol=1e-14)
    # d/dx of e^{-(T-t)c} cos hits -sin up to scheme error
    amp = math.exp(-(1 + EPS**2) / 2)
    np.testing.assert_allclose(
        fa.dmu(X)[:, 0], -amp * np.sin(X[:, 0]), atol=5e-3
    )


def test_l_derivatives_constant_grid_vanishes(heat_grid):
    vgc = NP.ValueGrid(
        times=heat_grid.times, axis=heat_grid.axis,
        values=np.full_like(heat_grid.values, 0.3),
        n=1, d=1, eps=EPS, m=1, coeffs_name="const",
    )
    fld = NP.l_derivatives(vgc, 0.0, M.from_points([[0.2]]))
    X = np.array([[0.5], [-1.0]])
    assert np.max(np.abs(fld.dmu(X))) == 0.0
    assert np.max(np.abs(fld.dxdmu(X))) == 0.0


def test_derivative_bounds_zero_for_constant_data():
    const = CoefficientSet(
        name="constg", b=HEAT_COS.b, sigma=HEAT_COS.sigma, f=HEAT_COS.f,
        g=lambda x, p, w: np.full(x.shape[:-1], 0.27),
        K=1.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    vg = NP.solve_hjb(mollify(const, 1, 8, horizon=1.0), EPS, horizon=1.0,
                      grid=NP.GridParams(4.0, 81, "auto"))
    rep = NP.derivative_bounds_check(vg)
    assert rep.c_k_fit < 1e-12 and abs(rep.second_max) < 1e-12


def test_first_derivative_scales_like_one_over_n():
    grid = NP.GridParams(6.0, 61, "auto")
    maxima = {}
    for n in (1, 2):
        vg = NP.solve_hjb(mollify(TANH_INTERACT, n, 8, horizon=1.0), EPS,
                          horizon=1.0, grid=grid)
        maxima[n] = max(NP.derivative_bounds_check(vg).first_max)
    ratio = maxima[1] / maxima[2]
    assert 2.0 * 0.7 <= ratio <= 2.0 * 1.3


def test_second_derivative_eps_scaling_shape():
    grid = NP.GridParams(6.0, 101, "auto")
    tops = {}
    for eps in (0.2, 0.1):
        vg = NP.solve_hjb(mollify(TANH_INTERACT, 1, 8, horizon=1.0), eps,
                          horizon=1.0, grid=grid)
        tops[eps] = NP.derivative_bounds_check(vg).second_max
    assert tops[0.1] <= 4.0 * 1.1 * max(tops[0.2], 1e-12)


def test_master_residual_analytic_candidate():
    u = mfc.candidate_exp_cos(1.0, 0.5)
    mu = M.from_points([[0.4], [-1.0]], [0.6, 0.4])
    res = NP.master_residual(u, HEAT_COS, 0.3, mu)
    assert res.residual < 1e-10


def test_master_residual_constant_candidate():
    u = mfc.CandidateFunction(
        value=lambda t, mu: 0.7,
        dt=lambda t, mu: 0.0,
        dmu=lambda t, mu, X: np.zeros((np.atleast_2d(X).shape[0], 1)),
        dxdmu=lambda t, mu, X: np.zeros((np.atleast_2d(X).shape[0], 1, 1)),
        name="const",
    )
    res = NP.master_residual(u, HEAT_COS, 0.2, M.from_points([[0.5]]))
    assert res.residual == 0.0


def test_master_residual_of_lifted_grid_small(heat_grid):
    mu = M.from_points([[0.0], [0.7]])
    res = NP.master_residual(heat_grid, HEAT_COS, 0.3, mu)
    assert res.residual < 5e-2
    assert res.terminal_gap < 5e-3


def test_master_residual_refinement_ladder():
    mu = M.from_points([[0.0], [0.7]])
    coarse = NP.solve_hjb(mollify(HEAT_COS, 1, 8, horizon=1.0), 0.2, horizon=1.0,
                          grid=NP.GridParams(8.0, 101, 100))
    fine = NP.solve_hjb(mollify(HEAT_COS, 1, 16, horizon=1.0), 0.1, horizon=1.0,
                        grid=NP.GridParams(8.0, 201, 400))
    r_coarse = NP.master_residual(coarse, HEAT_COS, 0.3, mu).residual
    r_fine = NP.master_residual(fine, HEAT_COS, 0.3, mu).residual
    assert r_fine <= r_coarse + 1e-3


def test_hamiltonian_assembly_cross_check(heat_grid):
    # the mean-field operator evaluated at a point mass on a grid node, with
    # the solver's own mollified coefficients and the eps^2 augmentation,
    # must reproduce the solver's per-node Hamiltonian stencil
    moll = mollify(HEAT_COS, 1, 32, horizon=1.0)
    wrapped = CoefficientSet(
        name="wrapped",
        b=lambda t, x, p, w, a: moll.b_i(0, t, x, a),
        sigma=HEAT_COS.sigma,
        f=lambda t, x, p, w, a: moll.f_i(0, t, x, a),
        g=lambda x, p, w: moll.g_i(0, x),
        K=1.0, beta=1.0, controls=(0.0,), d=1, m=1,
    )
    V = heat_grid.time_slice(0.5)
    h = heat_grid.h
    hamiltonian = (
        moll.f_i(0, 0.5, heat_grid.axis[:, None], 0.0)
        + moll.b_i(0, 0.5, heat_grid.axis[:, None], 0.0)[:, 0] * NP._central(V, 0, h)
        + 0.5 * (1.0 + EPS**2) * NP._second(V, 0, h)
    )
    u = NP.candidate_from_grid(heat_grid)
    for idx in (60, 100, 140):  # interior nodes
        mu = M.from_points([[heat_grid.axis[idx]]])
        assembled = NP.master_residual(
            u, wrapped, 0.5, mu, extra_diffusion=EPS**2
        )
        # residual = |du/dt + H|: subtracting the time part must leave the
        # solver's own stencil value
        dt_term = u.dt(0.5, mu)
        assert abs(assembled.residual - abs(dt_term + hamiltonian[idx])) < 1e-6


def test_chaos_no_interaction_is_n_independent():
    grids = {1: NP.GridParams(8.0, 201, "auto"), 2: NP.GridParams(6.0, 81, "auto")}
    rep = NP.chaos_experiment(
        HEAT_COS, 0.0, DELTA0, EPS, [1, 2], [8],
        horizon=1.0, grid_for=lambda n: grids[n],
        sim_params=mfc.SimParams(4000, 100, 2, 21),
    )
    target = math.exp(-(1 + EPS**2) / 2)
    for _, _, v in rep.rows:
        assert v == pytest.approx(target, abs=1e-2)
    assert rep.value(1, 8) == pytest.approx(rep.value(2, 8), abs=1e-2)


def test_value_grid_persistence_roundtrip(tmp_path, tanh_grid_n2):
    path = tmp_path / "grid.npz"
    NP.save_value_grid(tanh_grid_n2, path)
    back = NP.load_value_grid(path)
    assert np.array_equal(back.values, tanh_grid_n2.values)
    assert back.coeffs_name == tanh_grid_n2.coeffs_name
    assert back.provenance == tanh_grid_n2.provenance
