"""Finite-difference solution of the mollified n-player Bellman system.

``solve_hjb`` sweeps the per-player sup form of the n-player equation
backward in time on a uniform tensor grid over ``[-R, R]^{nd}``:

    dv/dt + sum_i max_{a_i} { f_i/n + <b_i, D_{x_i} v> +
                              1/2 tr[(sigma sigma^T + eps^2 I) D^2_{x_i x_i} v] } = 0,

with monotone spatial differencing (central drift where the diffusion
dominates, upwind otherwise; replicated-edge boundary stencils) and an
explicit CFL-checked time step; an implicit dimensional-splitting sweep is
available for fine grids.  Player exchangeability is exploited: coefficient
fields for player i are axis permutations of player 0's.

``lift`` integrates the grid against ``mu^{x n}`` (exact tensor enumeration,
Monte Carlo above a tuple cap), ``l_derivatives`` assembles the measure
derivative of the lifted value from per-axis grid differences, and
``master_residual`` evaluates the mean-field Bellman operator of a candidate
function at a measure, with the sup over the finite control set taken
exactly.  ``chaos_experiment`` tabulates the lifted values over an
``(n, m)`` ladder against a particle Monte Carlo reference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import mfc
from .coefficients import CoefficientSet
from .measures import EmpiricalMeasure, Estimate, MeasureError, from_points
from .mollify import MollifiedCoefficients, mollify

__all__ = [
    "DimensionCap",
    "CFLViolation",
    "SupportOutsideGrid",
    "GridParams",
    "ValueGrid",
    "solve_hjb",
    "save_value_grid",
    "load_value_grid",
    "lift",
    "LDerivativeField",
    "l_derivatives",
    "DerivativeBounds",
    "derivative_bounds_check",
    "MasterResidual",
    "master_residual",
    "candidate_from_grid",
    "ChaosReport",
    "chaos_experiment",
]


class DimensionCap(MeasureError):
    pass


class CFLViolation(MeasureError):
    pass


class SupportOutsideGrid(MeasureError):
    pass


@dataclass(frozen=True)
class GridParams:
    radius: float
    points_per_axis: int
    steps: Union[int, str] = "auto"
    cfl_safety: float = 0.9
    scheme: str = "explicit"

    def __post_init__(self):
        if self.points_per_axis < 3:
            raise MeasureError("need at least 3 points per axis")
        if self.scheme not in ("explicit", "implicit"):
            raise MeasureError("scheme must be 'explicit' or 'implicit'")


@dataclass
class ValueGrid:
    times: np.ndarray  # (M+1,)
    axis: np.ndarray  # (P,), shared by all n*d axes
    values: np.ndarray  # (M+1, P, ..., P)
    n: int
    d: int
    eps: float
    m: int
    coeffs_name: str
    provenance: dict = field(default_factory=dict)

    @property
    def n_axes(self) -> int:
        return self.n * self.d

    @property
    def h(self) -> float:
        return float(self.axis[1] - self.axis[0])

    def time_slice(self, t: float) -> np.ndarray:
        """Linear time interpolation between stored slices."""
        times = self.times
        if t <= times[0]:
            return self.values[0]
        if t >= times[-1]:
            return self.values[-1]
        j = int(np.searchsorted(times, t, side="right")) - 1
        theta = (t - times[j]) / (times[j + 1] - times[j])
        return (1.0 - theta) * self.values[j] + theta * self.values[j + 1]


def save_value_grid(vg: ValueGrid, path) -> None:
    header = {
        "n": vg.n,
        "d": vg.d,
        "eps": vg.eps,
        "m": vg.m,
        "coeffs_name": vg.coeffs_name,
        "provenance": vg.provenance,
    }
    np.savez_compressed(
        path,
        times=vg.times,
        axis=vg.axis,
        values=vg.values,
        header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
    )


def load_value_grid(path) -> ValueGrid:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        return ValueGrid(
            times=data["times"],
            axis=data["axis"],
            values=data["values"],
            n=header["n"],
            d=header["d"],
            eps=header["eps"],
            m=header["m"],
            coeffs_name=header["coeffs_name"],
            provenance=header["provenance"],
        )


# ---------------------------------------------------------------------------
# spatial stencils (shared by the solver and the derivative assembly)


def _shift(v: np.ndarray, axis: int, off: int) -> np.ndarray:
    idx = np.clip(np.arange(v.shape[axis]) + off, 0, v.shape[axis] - 1)
    return np.take(v, idx, axis=axis)


def _central(v, axis, h):
    return (_shift(v, axis, 1) - _shift(v, axis, -1)) / (2.0 * h)


def _second(v, axis, h):
    return (_shift(v, axis, 1) - 2.0 * v + _shift(v, axis, -1)) / (h * h)


def _upwind(v, axis, h, b):
    dp = (_shift(v, axis, 1) - v) / h
    dm = (v - _shift(v, axis, -1)) / h
    return np.maximum(b, 0.0) * dp + np.minimum(b, 0.0) * dm


# ---------------------------------------------------------------------------
# solver


def _player_fields(moll: MollifiedCoefficients, t, grid_flat, shape, controls):
    """Mollified drift/running fields for every (player, control) on the grid.

    Player i's field is the axis transposition of player 0's (the empirical
    measure argument is exchangeable), valid because all axes share one grid.
    """
    n, d = moll.n, moll.d
    bfields: Dict[Tuple[int, int], np.ndarray] = {}
    ffields: Dict[Tuple[int, int], np.ndarray] = {}
    for ai, a in enumerate(controls):
        b0 = moll.b_i(0, t, grid_flat, a).reshape(shape + (d,))
        f0 = moll.f_i(0, t, grid_flat, a).reshape(shape)
        bfields[(0, ai)] = b0
        ffields[(0, ai)] = f0
        for i in range(1, n):
            # d == 1 whenever n > 1 (dimension cap), so axes swap directly
            bfields[(i, ai)] = np.swapaxes(b0, 0, i)
            ffields[(i, ai)] = np.swapaxes(f0, 0, i)
    return bfields, ffields


def _diffusion_diag(moll: MollifiedCoefficients, t, axis, grid_flat, shape, controls, eps):
    """Per-(player, control) diagonal diffusion coefficient c = (sigma^2 + eps^2)/2.

    Requires sigma sigma^T diagonal on the player block (true for the scalar
    registry diffusions); the coefficient for player i broadcasts along the
    player's axes.
    """
    base = moll.base
    n, d = moll.n, moll.d
    out: Dict[Tuple[int, int], List[np.ndarray]] = {}
    for ai, a in enumerate(controls):
        if n == 1:
            sig = base.sigma(t, grid_flat, a)  # (B, d, m)
            sst = np.einsum("bjm,bkm->bjk", sig, sig)
            off = sst.copy()
            idx = np.arange(d)
            off[:, idx, idx] = 0.0
            if np.max(np.abs(off)) > 1e-12:
                raise MeasureError("solver requires diagonal sigma sigma^T per player")
            diag = sst[:, idx, idx].reshape(shape + (d,))
            out[(0, ai)] = [0.5 * (diag[..., j] + eps**2) for j in range(d)]
        else:
            sig = base.sigma(t, axis[:, None], a)  # (P, 1, m)
            s2 = np.einsum("bjm,bkm->bjk", sig, sig)[:, 0, 0]
            for i in range(n):
                bshape = [1] * n
                bshape[i] = axis.size
                out[(i, ai)] = [0.5 * (s2 + eps**2).reshape(bshape)]
    return out


def solve_hjb(
    moll: MollifiedCoefficients,
    eps: float,
    *,
    horizon: float,
    grid: GridParams,
) -> ValueGrid:
    """Backward sweep of the mollified n-player Bellman equation."""
    n, d = moll.n, moll.d
    if n * d > 3:
        raise DimensionCap("grid dimension n*d capped at 3")
    if not eps > 0:
        raise MeasureError("regularization eps must be positive")
    base = moll.base
    controls = base.controls
    P = grid.points_per_axis
    axis = np.linspace(-grid.radius, grid.radius, P)
    h = axis[1] - axis[0]
    n_axes = n * d
    shape = (P,) * n_axes
    mesh = np.meshgrid(*([axis] * n_axes), indexing="ij")
    grid_flat = np.stack([g.ravel() for g in mesh], axis=-1)  # (P^D, n*d)
    del mesh

    if base.time_dependent:
        raise MeasureError("time-dependent coefficients not supported by this solver")
    bfields, ffields = _player_fields(moll, 0.0, grid_flat, shape, controls)
    cfields = _diffusion_diag(moll, 0.0, axis, grid_flat, shape, controls, eps)

    # terminal data (1/n) sum_i g_i via the same axis-swap trick
    g0 = moll.g_i(0, grid_flat).reshape(shape)
    gsum = g0.copy()
    for i in range(1, n):
        gsum += np.swapaxes(g0, 0, i)
    terminal = gsum / n

    # drift discretization: central where diffusion dominates on the whole
    # grid (keeps monotonicity and second-order accuracy), upwind otherwise
    central_ok: Dict[Tuple[int, int], bool] = {}
    rate = 0.0
    for i in range(n):
        player_rate = 0.0
        for ai in range(len(controls)):
            cs = cfields[(i, ai)]
            bmax = [
                float(np.max(np.abs(bfields[(i, ai)][..., j]))) for j in range(d)
            ]
            cmin = [float(np.min(np.broadcast_to(cs[j], shape))) for j in range(d)]
            cmax = [float(np.max(np.broadcast_to(cs[j], shape))) for j in range(d)]
            ok = all(cmin[j] >= bmax[j] * h / 2.0 for j in range(d))
            central_ok[(i, ai)] = ok
            r = sum(
                2.0 * cmax[j] / h**2 + (0.0 if ok else bmax[j] / h) for j in range(d)
            )
            player_rate = max(player_rate, r)
        rate += player_rate
    dt_max = grid.cfl_safety / rate if rate > 0 else horizon

    if grid.steps == "auto":
        steps = max(1, int(math.ceil(horizon / dt_max)))
    else:
        steps = int(grid.steps)
        if grid.scheme == "explicit" and horizon / steps > dt_max * (1 + 1e-12):
            raise CFLViolation(
                f"dt={horizon / steps:.3e} exceeds the monotone bound {dt_max:.3e};"
                f" need >= {int(math.ceil(horizon / dt_max))} steps"
            )
    dt = horizon / steps
    times = np.linspace(0.0, horizon, steps + 1)
    values = np.empty((steps + 1,) + shape)
    values[steps] = terminal

    def hamiltonian(V):
        total = np.zeros(shape)
        for i in range(n):
            best = None
            for ai in range(len(controls)):
                term = ffields[(i, ai)] / n
                cs = cfields[(i, ai)]
                for j in range(d):
                    ax = i * d + j
                    b = bfields[(i, ai)][..., j]
                    if central_ok[(i, ai)]:
                        term = term + b * _central(V, ax, h)
                    else:
                        term = term + _upwind(V, ax, h, b)
                    term = term + cs[j] * _second(V, ax, h)
                best = term if best is None else np.maximum(best, term)
            total += best
        return total

    if grid.scheme == "explicit":
        for j in range(steps - 1, -1, -1):
            V = values[j + 1]
            values[j] = V + dt * hamiltonian(V)
    else:
        values = _implicit_sweep(
            values, steps, dt, h, n, d, shape, controls, bfields, ffields, cfields
        )

    bound = base.K * (horizon + 1.0) + 1e-9
    if float(np.max(np.abs(values))) > bound:
        raise MeasureError("solved values exceed the a priori bound K(T+1)")
    return ValueGrid(
        times=times,
        axis=axis,
        values=values,
        n=n,
        d=d,
        eps=eps,
        m=moll.m,
        coeffs_name=base.name,
        provenance={
            "scheme": grid.scheme,
            "steps": steps,
            "radius": grid.radius,
            "points_per_axis": P,
            "order": moll.order,
        },
    )


def _implicit_sweep(values, steps, dt, h, n, d, shape, controls, bfields, ffields, cfields):
    """Backward Euler by dimensional splitting with frozen per-node controls."""
    from scipy.linalg import solve_banded

    P = shape[0]
    for j in range(steps - 1, -1, -1):
        V = values[j + 1]
        # freeze the per-player argmax from the previous slice
        work = V.copy()
        for i in range(n):
            scores = []
            for ai in range(len(controls)):
                term = ffields[(i, ai)] / n
                cs = cfields[(i, ai)]
                for jj in range(d):
                    ax = i * d + jj
                    b = bfields[(i, ai)][..., jj]
                    term = term + _upwind(V, ax, h, b) + cs[jj] * _second(V, ax, h)
                scores.append(term)
            astar = np.argmax(np.stack(scores, axis=0), axis=0)
            for jj in range(d):
                ax = i * d + jj
                b = np.zeros(shape)
                c = np.zeros(shape)
                f = np.zeros(shape)
                for ai in range(len(controls)):
                    mask = astar == ai
                    b[mask] = bfields[(i, ai)][..., jj][mask]
                    c[mask] = np.broadcast_to(cfields[(i, ai)][jj], shape)[mask]
                    if jj == 0:
                        f[mask] = ffields[(i, ai)][mask] / n
                if jj == 0:
                    work = work + dt * f
                # assemble tridiagonal (I - dt L) along ax, upwind drift
                bm = np.moveaxis(b, ax, -1).reshape(-1, P)
                cm = np.moveaxis(c, ax, -1).reshape(-1, P)
                rhs = np.moveaxis(work, ax, -1).reshape(-1, P)
                lowc = cm / h**2 - np.minimum(bm, 0.0) / h
                upc = cm / h**2 + np.maximum(bm, 0.0) / h
                diag = 1.0 + dt * (lowc + upc)
                # replicated-edge BC folds the ghost value into the diagonal
                diag[:, 0] -= dt * lowc[:, 0]
                diag[:, -1] -= dt * upc[:, -1]
                out = np.empty_like(rhs)
                ab = np.zeros((3, P))
                for row in range(rhs.shape[0]):
                    ab[0, 1:] = -dt * upc[row, :-1]
                    ab[1, :] = diag[row]
                    ab[2, :-1] = -dt * lowc[row, 1:]
                    out[row] = solve_banded((1, 1), ab, rhs[row])
                work = np.moveaxis(out.reshape(np.moveaxis(work, ax, -1).shape), -1, ax)
        values[j] = work
    return values


# ---------------------------------------------------------------------------
# lifting to measures


def _interp(vg_axis: np.ndarray, n_axes: int, slice_values: np.ndarray):
    from scipy.interpolate import RegularGridInterpolator

    return RegularGridInterpolator(
        (vg_axis,) * n_axes, slice_values, method="linear", bounds_error=True
    )


def _check_support(vg: ValueGrid, mu: EmpiricalMeasure):
    if mu.d != vg.d:
        raise MeasureError("measure dimension does not match the grid")
    lo, hi = vg.axis[0], vg.axis[-1]
    if np.any(mu.points < lo) or np.any(mu.points > hi):
        raise SupportOutsideGrid("measure support leaves the grid box")


def lift(
    vg: ValueGrid,
    t: float,
    mu: EmpiricalMeasure,
    *,
    tuple_cap: int = 1_000_000,
    mc_samples: int = 200_000,
    seed: int = 0,
) -> float:
    """``int v(t, x_1..x_n) mu(dx_1)...mu(dx_n)`` with multilinear interpolation.

    Exact tensor enumeration when ``n_atoms^n`` fits the cap, Monte Carlo over
    index tuples (returned as an :class:`Estimate` with stderr) otherwise.
    """
    _check_support(vg, mu)
    interp = _interp(vg.axis, vg.n_axes, vg.time_slice(t))
    na, n = mu.n_atoms, vg.n
    if na**n <= tuple_cap:
        idx = np.stack(
            [g.ravel() for g in np.meshgrid(*([np.arange(na)] * n), indexing="ij")],
            axis=-1,
        )  # (K, n)
        pts = mu.points[idx].reshape(idx.shape[0], vg.n_axes)
        w = np.prod(mu.weights[idx], axis=1)
        return float(w @ interp(pts))
    rng = np.random.default_rng(seed)
    idx = rng.choice(na, size=(mc_samples, n), p=mu.weights)
    vals = interp(mu.points[idx].reshape(mc_samples, vg.n_axes))
    return Estimate(vals.mean(), vals.std(ddof=1) / math.sqrt(mc_samples))


@dataclass
class LDerivativeField:
    """Measure-derivative evaluators assembled from one grid time slice."""

    dmu: Callable[[np.ndarray], np.ndarray]  # (B, d)
    dxdmu: Callable[[np.ndarray], np.ndarray]  # (B, d, d)
    t: float
    n: int
    d: int


def l_derivatives(vg: ValueGrid, t: float, mu: EmpiricalMeasure) -> LDerivativeField:
    """First and second L-derivative fields of the lifted value at (t, mu)."""
    _check_support(vg, mu)
    V = vg.time_slice(t)
    h = vg.h
    n, d, n_axes = vg.n, vg.d, vg.n_axes
    grads = [_interp(vg.axis, n_axes, _central(V, ax, h)) for ax in range(n_axes)]
    seconds = [
        [_interp(vg.axis, n_axes, _second(V, ax, h) if ax == ax2 else _central(_central(V, ax, h), ax2, h))
         for ax2 in range(n_axes)]
        for ax in range(n_axes)
    ]
    na = mu.n_atoms
    if n > 1:
        others = np.stack(
            [g.ravel() for g in np.meshgrid(*([np.arange(na)] * (n - 1)), indexing="ij")],
            axis=-1,
        )  # (K, n-1)
        w_others = np.prod(mu.weights[others], axis=1)
    else:
        others = np.zeros((1, 0), dtype=int)
        w_others = np.ones(1)
    K = others.shape[0]

    def _eval_points(X: np.ndarray, slot: int) -> np.ndarray:
        B = X.shape[0]
        pts = np.empty((B, K, n, d))
        other_coords = mu.points[others]  # (K, n-1, d)
        cols = [c for c in range(n) if c != slot]
        for ci, c in enumerate(cols):
            pts[:, :, c, :] = other_coords[None, :, ci, :]
        pts[:, :, slot, :] = X[:, None, :]
        return pts.reshape(B * K, n_axes)

    def dmu(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        B = X.shape[0]
        out = np.zeros((B, d))
        for slot in range(n):
            pts = _eval_points(X, slot)
            for j in range(d):
                vals = grads[slot * d + j](pts).reshape(B, K)
                out[:, j] += vals @ w_others
        return out

    def dxdmu(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        B = X.shape[0]
        out = np.zeros((B, d, d))
        for slot in range(n):
            pts = _eval_points(X, slot)
            for j in range(d):
                for k in range(d):
                    vals = seconds[slot * d + j][slot * d + k](pts).reshape(B, K)
                    out[:, j, k] += vals @ w_others
        return out

    return LDerivativeField(dmu=dmu, dxdmu=dxdmu, t=t, n=n, d=d)


# ---------------------------------------------------------------------------
# derivative bounds and residuals


@dataclass(frozen=True)
class DerivativeBounds:
    first_max: Tuple[float, ...]  # max |D_{x_i} v| per player, interior nodes
    c_k_fit: float  # n * max_i first_max[i]
    second_min: float
    second_max: float


def derivative_bounds_check(vg: ValueGrid) -> DerivativeBounds:
    """Extremes of the grid derivatives over all times and interior nodes."""
    h = vg.h
    n, d = vg.n, vg.d
    interior = tuple(slice(1, -1) for _ in range(vg.n_axes))
    first = []
    second_min = math.inf
    second_max = -math.inf
    for i in range(n):
        worst = 0.0
        for j in range(d):
            ax = i * d + j
            for V in vg.values:
                g = _central(V, ax, h)[interior]
                worst = max(worst, float(np.max(np.abs(g))))
                s = _second(V, ax, h)[interior]
                second_min = min(second_min, float(np.min(s)))
                second_max = max(second_max, float(np.max(s)))
        first.append(worst)
    return DerivativeBounds(tuple(first), vg.n * max(first), second_min, second_max)


@dataclass(frozen=True)
class MasterResidual:
    residual: float
    terminal_gap: float


def candidate_from_grid(vg: ValueGrid) -> mfc.CandidateFunction:
    """Lifted value grid wrapped as a candidate function (grid finite differences)."""
    dt_grid = float(vg.times[1] - vg.times[0])

    def value(t, mu):
        return float(lift(vg, t, mu))

    def dvdt(t, mu):
        lo = max(t - dt_grid, vg.times[0])
        hi = min(t + dt_grid, vg.times[-1])
        return (value(hi, mu) - value(lo, mu)) / (hi - lo)

    def dmu(t, mu, X):
        return l_derivatives(vg, t, mu).dmu(X)

    def dxdmu(t, mu, X):
        return l_derivatives(vg, t, mu).dxdmu(X)

    return mfc.CandidateFunction(value, dvdt, dmu, dxdmu, name=f"grid[{vg.coeffs_name}]")


def master_residual(
    u: Union[mfc.CandidateFunction, ValueGrid],
    coeffs: CoefficientSet,
    t: float,
    mu: EmpiricalMeasure,
    *,
    extra_diffusion: float = 0.0,
) -> MasterResidual:
    """Absolute residual of the mean-field Bellman operator at ``(t, mu)``.

    The measure integral is the atom-weighted sum and the sup over the finite
    control set is exact.  ``extra_diffusion`` adds ``eps^2 I`` to
    ``sigma sigma^T`` for checks against the regularized solver equation; the
    mean-field equation itself has none.  ``terminal_gap`` compares
    ``u(T, mu)`` against the terminal reward integral.
    """
    if isinstance(u, ValueGrid):
        horizon = float(u.times[-1])
        u = candidate_from_grid(u)
    else:
        horizon = None
    X = mu.points
    w = mu.weights
    grad = u.dmu(t, mu, X)  # (na, d)
    hess = u.dxdmu(t, mu, X)  # (na, d, d)
    best = None
    for a in coeffs.controls:
        fv = coeffs.f(t, X, X, w, a)
        bv = coeffs.b(t, X, X, w, a)
        sig = coeffs.sigma(t, X, a)
        sst = np.einsum("bjm,bkm->bjk", sig, sig)
        if extra_diffusion:
            idx = np.arange(coeffs.d)
            sst = sst.copy()
            sst[:, idx, idx] += extra_diffusion
        term = fv + np.sum(bv * grad, axis=1) + 0.5 * np.einsum("bjk,bjk->b", sst, hess)
        best = term if best is None else np.maximum(best, term)
    residual = abs(u.dt(t, mu) + float(w @ best))
    if horizon is None:
        terminal_gap = math.nan
    else:
        gvals = coeffs.g(X, X, w)
        terminal_gap = abs(u.value(horizon, mu) - float(w @ gvals))
    return MasterResidual(residual, terminal_gap)


# ---------------------------------------------------------------------------
# propagation of chaos


@dataclass(frozen=True)
class ChaosReport:
    rows: Tuple[Tuple[int, int, float], ...]  # (n, m, lifted value)
    reference: float
    reference_stderr: float

    def value(self, n: int, m: int) -> float:
        for nn, mm, v in self.rows:
            if nn == n and mm == m:
                return v
        raise KeyError((n, m))

    def m_gaps(self, n: int) -> List[float]:
        ms = sorted(m for nn, m, _ in self.rows if nn == n)
        return [abs(self.value(n, ms[k + 1]) - self.value(n, ms[k])) for k in range(len(ms) - 1)]


def chaos_experiment(
    coeffs: CoefficientSet,
    t: float,
    mu: EmpiricalMeasure,
    eps: float,
    n_list: Sequence[int],
    m_list: Sequence[int],
    *,
    horizon: float,
    grid_for: Callable[[int], GridParams],
    sim_params: mfc.SimParams,
    order: int = 8,
) -> ChaosReport:
    """Lifted n-player values over the (n, m) ladder plus the particle reference.

    For each n the grid is shared across the m ladder so that discretization
    error cancels in successive m-gaps.
    """
    rows = []
    for n in n_list:
        grid = grid_for(n)
        for m in m_list:
            moll = mollify(coeffs, n, m, order=order, horizon=horizon)
            vg = solve_hjb(moll, eps, horizon=horizon, grid=grid)
            rows.append((int(n), int(m), float(lift(vg, t, mu))))
    ref = mfc.value_policy_search(
        coeffs,
        t,
        mu,
        mfc.constant_policies(coeffs),
        horizon=horizon,
        eps=eps,
        params=sim_params,
    )
    return ChaosReport(tuple(rows), ref.value, ref.stderr)
