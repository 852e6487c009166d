"""Controlled McKean-Vlasov particle simulation and value estimation.

The state equation is integrated by Euler-Maruyama on an interacting
particle system: the law argument of the drift and running reward is the
running empirical measure of the ensemble.  An extra ``eps``-scaled
d-dimensional Brownian term implements the non-degenerate regularization;
its increments are drawn even when ``eps = 0`` so that runs sharing a seed
are pathwise coupled across ``eps`` values.

Policies are binned lookup tables over (time, first state coordinate,
ensemble mean); the value from any finite policy family is a Monte Carlo
lower bound for the control value, reported with a standard error and never
as a certified supremum.  ``ito_check`` evaluates the flow-of-measures chain
rule along constant-coefficient Ito processes for caller-supplied candidate
functions.

Mollified n-player coefficients live in :mod:`mfgauge.mollify` and are
re-exported here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import gauge as gauge_mod
from . import transport
from .coefficients import CoefficientSet, get_coefficients, validate_coefficients
from .measures import EmpiricalMeasure, MeasureError, from_points, sample
from .mollify import MollifiedCoefficients, QuadratureBudgetExceeded, mollify

__all__ = [
    "InvalidHorizon",
    "NonFiniteState",
    "DegeneratePair",
    "Policy",
    "constant_policy",
    "constant_policies",
    "bang_bang_policy",
    "bang_bang_policies",
    "EnsemblePath",
    "SimParams",
    "simulate",
    "reward",
    "PolicyValue",
    "value_policy_search",
    "EpsGapReport",
    "eps_gap_experiment",
    "DPPReport",
    "dpp_check",
    "LipschitzReport",
    "lipschitz_check",
    "CandidateFunction",
    "candidate_mean",
    "candidate_second_moment",
    "candidate_exp_cos",
    "candidate_from_gauge",
    "check_quadratic_growth",
    "ito_check",
    "mollify",
    "MollifiedCoefficients",
    "QuadratureBudgetExceeded",
]


class InvalidHorizon(MeasureError):
    pass


class NonFiniteState(MeasureError):
    pass


class DegeneratePair(MeasureError):
    pass


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class Policy:
    """Binned lookup (time bin, first-coordinate bin, ensemble-mean bin) -> control."""

    values: np.ndarray  # (nt, nx, nm)
    t_edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    x_edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    m_edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    name: str = ""

    def __call__(self, t: float, x: np.ndarray, mean: np.ndarray) -> np.ndarray:
        it = int(np.searchsorted(self.t_edges, t, side="right"))
        ix = np.searchsorted(self.x_edges, x[:, 0], side="right")
        im = int(np.searchsorted(self.m_edges, mean[0], side="right"))
        return self.values[it, ix, im]


def constant_policy(a: float, name: str = "") -> Policy:
    return Policy(np.full((1, 1, 1), float(a)), name=name or f"const[{a}]")


def constant_policies(coeffs: CoefficientSet) -> List[Policy]:
    return [constant_policy(a) for a in coeffs.controls]


def bang_bang_policy(a_below: float, a_above: float, threshold: float) -> Policy:
    values = np.array([[[a_below], [a_above]]], dtype=float)
    return Policy(
        values,
        x_edges=np.array([threshold]),
        name=f"bang[{a_below}/{a_above}@{threshold}]",
    )


def bang_bang_policies(coeffs: CoefficientSet, thresholds: Sequence[float]) -> List[Policy]:
    if len(coeffs.controls) < 2:
        return constant_policies(coeffs)
    lo, hi = min(coeffs.controls), max(coeffs.controls)
    pols = constant_policies(coeffs)
    for th in thresholds:
        pols.append(bang_bang_policy(lo, hi, th))
        pols.append(bang_bang_policy(hi, lo, th))
    return pols


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class EnsemblePath:
    times: np.ndarray  # (M+1,)
    states: np.ndarray  # (M+1, N, d)
    controls: np.ndarray  # (M, N)
    eps: float
    seed: int
    coeffs_name: str = ""


@dataclass(frozen=True)
class SimParams:
    n_particles: int = 2000
    steps: int = 100
    reps: int = 4
    seed: int = 0


def simulate(
    coeffs: CoefficientSet,
    policy: Policy,
    t: float,
    mu0: EmpiricalMeasure,
    *,
    horizon: float,
    n_particles: int,
    steps: int,
    eps: float = 0.0,
    seed: int = 0,
) -> EnsemblePath:
    """Euler-Maruyama interacting-particle path, deterministic given the seed."""
    if t > horizon + 1e-12:
        raise InvalidHorizon(f"start time {t} exceeds horizon {horizon}")
    if n_particles < 1 or steps < 1:
        raise MeasureError("need n_particles >= 1 and steps >= 1")
    if mu0.d != coeffs.d:
        raise MeasureError("initial measure dimension does not match coefficients")
    rng = np.random.default_rng(seed)
    d, m = coeffs.d, coeffs.m
    N = n_particles
    dt = (horizon - t) / steps
    sq = math.sqrt(dt) if dt > 0 else 0.0
    uniform = np.full(N, 1.0 / N)

    x0 = mu0.points[rng.choice(mu0.n_atoms, size=N, p=mu0.weights)]
    times = t + dt * np.arange(steps + 1)
    states = np.empty((steps + 1, N, d))
    controls = np.empty((steps, N))
    states[0] = x0
    x = x0.copy()
    for k in range(steps):
        tk = times[k]
        mean = x.mean(axis=0)
        a = np.broadcast_to(np.asarray(policy(tk, x, mean), dtype=float), (N,))
        controls[k] = a
        drift = coeffs.b(tk, x, x, uniform, a)
        sig = coeffs.sigma(tk, x, a)
        dB = sq * rng.standard_normal((N, m))
        dW = sq * rng.standard_normal((N, d))  # drawn even for eps = 0 (coupling)
        x = x + drift * dt + np.einsum("ndm,nm->nd", sig, dB) + eps * dW
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"state blew up at step {k}")
        states[k + 1] = x
    return EnsemblePath(times, states, controls, eps, seed, coeffs.name)


def _running_reward(coeffs: CoefficientSet, path: EnsemblePath) -> np.ndarray:
    """Per-particle left-endpoint time integral of f along the path."""
    M, N = path.controls.shape
    uniform = np.full(N, 1.0 / N)
    acc = np.zeros(N)
    for k in range(M):
        dt = path.times[k + 1] - path.times[k]
        x = path.states[k]
        acc += dt * coeffs.f(path.times[k], x, x, uniform, path.controls[k])
    return acc


def reward(coeffs: CoefficientSet, path: EnsemblePath) -> float:
    """Monte Carlo value of the path: mean over particles of int f + g."""
    N = path.states.shape[1]
    uniform = np.full(N, 1.0 / N)
    xT = path.states[-1]
    total = _running_reward(coeffs, path) + coeffs.g(xT, xT, uniform)
    return float(total.mean())


# ---------------------------------------------------------------------------
# policy search and experiments


@dataclass(frozen=True)
class PolicyValue:
    value: float
    best_index: int
    stderr: float
    per_policy: Tuple[float, ...]
    reps: int


def _rep_seeds(seed: int, reps: int) -> List[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(reps)]


def value_policy_search(
    coeffs: CoefficientSet,
    t: float,
    mu0: EmpiricalMeasure,
    policies: Sequence[Policy],
    *,
    horizon: float,
    eps: float = 0.0,
    params: SimParams = SimParams(),
) -> PolicyValue:
    """Max over the policy family of simulated rewards; a lower bound for the value.

    Repetitions share seeds across policies (common random numbers), so
    enlarging the family can never decrease the reported value.
    """
    if not policies:
        raise MeasureError("need at least one policy")
    seeds = _rep_seeds(params.seed, params.reps)
    table = np.empty((len(policies), params.reps))
    for j, pol in enumerate(policies):
        for r, sd in enumerate(seeds):
            path = simulate(
                coeffs,
                pol,
                t,
                mu0,
                horizon=horizon,
                n_particles=params.n_particles,
                steps=params.steps,
                eps=eps,
                seed=sd,
            )
            table[j, r] = reward(coeffs, path)
    means = table.mean(axis=1)
    best = int(np.argmax(means))
    if params.reps > 1:
        stderr = float(table[best].std(ddof=1) / math.sqrt(params.reps))
    else:
        stderr = 0.0
    return PolicyValue(float(means[best]), best, stderr, tuple(means), params.reps)


@dataclass(frozen=True)
class EpsGapReport:
    rows: Tuple[Tuple[float, float, float, float], ...]  # (eps, value, stderr, gap)
    c_fit: float
    slope_lsq: float


def eps_gap_experiment(
    coeffs: CoefficientSet,
    t: float,
    mu0: EmpiricalMeasure,
    eps_list: Sequence[float],
    *,
    horizon: float,
    params: SimParams = SimParams(),
    policies: Optional[Sequence[Policy]] = None,
) -> EpsGapReport:
    """Common-random-number values across the eps ladder and the fitted envelope."""
    eps_list = [float(e) for e in eps_list]
    if not any(e == 0.0 for e in eps_list):
        raise MeasureError("eps list must include 0")
    pols = list(policies) if policies is not None else constant_policies(coeffs)
    vals = {}
    for e in eps_list:
        pv = value_policy_search(
            coeffs, t, mu0, pols, horizon=horizon, eps=e, params=params
        )
        vals[e] = pv
    v0 = vals[0.0].value
    rows = []
    num = den = 0.0
    c_fit = 0.0
    for e in eps_list:
        gap = abs(vals[e].value - v0)
        rows.append((e, vals[e].value, vals[e].stderr, gap))
        if e > 0:
            c_fit = max(c_fit, gap / e)
            num += gap * e
            den += e * e
    slope = num / den if den > 0 else 0.0
    return EpsGapReport(tuple(rows), c_fit, slope)


@dataclass(frozen=True)
class DPPReport:
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    gap: float
    tol: float

    def equality_ok(self) -> bool:
        return abs(self.gap) <= self.tol

    def lower_bound_ok(self) -> bool:
        return self.gap >= -self.tol


def dpp_check(
    coeffs: CoefficientSet,
    t: float,
    s: float,
    mu0: EmpiricalMeasure,
    policies: Sequence[Policy],
    *,
    horizon: float,
    eps: float = 0.0,
    params: SimParams = SimParams(),
) -> DPPReport:
    """Two-stage versus one-stage value at the intermediate time ``s``.

    ``gap = rhs - lhs``; on singleton control sets the two sides agree within
    Monte Carlo noise, in general the one-stage policy search can only fall
    below the two-stage composition.
    """
    if not (t <= s <= horizon + 1e-12):
        raise InvalidHorizon("need t <= s <= horizon")
    lhs = value_policy_search(
        coeffs, t, mu0, policies, horizon=horizon, eps=eps, params=params
    )
    if s <= t:
        return DPPReport(lhs.value, lhs.stderr, lhs.value, lhs.stderr, 0.0, 0.0)
    seeds = _rep_seeds(params.seed ^ 0xD99, params.reps)
    frac = (s - t) / (horizon - t) if horizon > t else 0.0
    steps1 = max(1, int(round(params.steps * frac))) if s > t else 0
    steps2 = max(1, params.steps - steps1)
    table = np.empty((len(policies), params.reps))
    for j, pol in enumerate(policies):
        for r, sd in enumerate(seeds):
            if s > t:
                leg = simulate(
                    coeffs,
                    pol,
                    t,
                    mu0,
                    horizon=s,
                    n_particles=params.n_particles,
                    steps=steps1,
                    eps=eps,
                    seed=sd,
                )
                running = float(_running_reward(coeffs, leg).mean())
                mu_s = from_points(leg.states[-1])
            else:
                running, mu_s = 0.0, mu0
            inner = value_policy_search(
                coeffs,
                s,
                mu_s,
                policies,
                horizon=horizon,
                eps=eps,
                params=SimParams(params.n_particles, steps2, 1, sd ^ 0xA5A5),
            )
            table[j, r] = running + inner.value
    means = table.mean(axis=1)
    best = int(np.argmax(means))
    rhs = float(means[best])
    rhs_se = (
        float(table[best].std(ddof=1) / math.sqrt(params.reps)) if params.reps > 1 else 0.0
    )
    gap = rhs - lhs.value
    tol = 3.0 * math.sqrt(lhs.stderr**2 + rhs_se**2)
    return DPPReport(lhs.value, lhs.stderr, rhs, rhs_se, gap, tol)


@dataclass(frozen=True)
class LipschitzReport:
    rows: Tuple[Tuple[float, float, float], ...]  # (w2, value gap, ratio)
    max_ratio: float


def lipschitz_check(
    coeffs: CoefficientSet,
    t: float,
    pairs: Sequence[Tuple[EmpiricalMeasure, EmpiricalMeasure]],
    policies: Sequence[Policy],
    *,
    horizon: float,
    eps: float = 0.0,
    params: SimParams = SimParams(),
) -> LipschitzReport:
    """Value-gap to W2 ratios over measure pairs, with common random numbers."""
    if not pairs:
        raise MeasureError("need at least one measure pair")
    rows = []
    for mu, nu in pairs:
        w2, _ = transport.w2_exact(mu, nu)
        if w2 <= 1e-12:
            raise DegeneratePair("pair with zero W2 distance")
        va = value_policy_search(
            coeffs, t, mu, policies, horizon=horizon, eps=eps, params=params
        )
        vb = value_policy_search(
            coeffs, t, nu, policies, horizon=horizon, eps=eps, params=params
        )
        gap = abs(va.value - vb.value)
        rows.append((w2, gap, gap / w2))
    return LipschitzReport(tuple(rows), max(r[2] for r in rows))


# ---------------------------------------------------------------------------
# candidate functions and the chain-rule check


@dataclass(frozen=True)
class CandidateFunction:
    """Caller-supplied u(t, mu) with its time and Lions derivatives."""

    value: Callable[[float, EmpiricalMeasure], float]
    dt: Callable[[float, EmpiricalMeasure], float]
    dmu: Callable[[float, EmpiricalMeasure, np.ndarray], np.ndarray]
    dxdmu: Callable[[float, EmpiricalMeasure, np.ndarray], np.ndarray]
    name: str = ""


def candidate_mean(d: int, axis: int = 0) -> CandidateFunction:
    e = np.zeros(d)
    e[axis] = 1.0

    return CandidateFunction(
        value=lambda t, mu: float(mu.weights @ mu.points[:, axis]),
        dt=lambda t, mu: 0.0,
        dmu=lambda t, mu, X: np.broadcast_to(e, (np.atleast_2d(X).shape[0], d)).copy(),
        dxdmu=lambda t, mu, X: np.zeros((np.atleast_2d(X).shape[0], d, d)),
        name="mean",
    )


def candidate_second_moment(d: int) -> CandidateFunction:
    eye = np.eye(d)

    return CandidateFunction(
        value=lambda t, mu: float(mu.weights @ np.sum(mu.points**2, axis=1)),
        dt=lambda t, mu: 0.0,
        dmu=lambda t, mu, X: 2.0 * np.atleast_2d(X),
        dxdmu=lambda t, mu, X: np.broadcast_to(
            2.0 * eye, (np.atleast_2d(X).shape[0], d, d)
        ).copy(),
        name="second-moment",
    )


def candidate_exp_cos(horizon: float, decay: float) -> CandidateFunction:
    """``u(t, mu) = exp(-(T - t) decay) int cos(x_1) dmu``; solves the heat flow."""

    def amp(t):
        return math.exp(-(horizon - t) * decay)

    return CandidateFunction(
        value=lambda t, mu: amp(t) * float(mu.weights @ np.cos(mu.points[:, 0])),
        dt=lambda t, mu: decay * amp(t) * float(mu.weights @ np.cos(mu.points[:, 0])),
        dmu=lambda t, mu, X: _exp_cos_grad(amp(t), np.atleast_2d(X)),
        dxdmu=lambda t, mu, X: _exp_cos_hess(amp(t), np.atleast_2d(X)),
        name=f"exp-cos[{decay}]",
    )


def _exp_cos_grad(a: float, X: np.ndarray) -> np.ndarray:
    out = np.zeros_like(X)
    out[:, 0] = -a * np.sin(X[:, 0])
    return out


def _exp_cos_hess(a: float, X: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    out = np.zeros((X.shape[0], d, d))
    out[:, 0, 0] = -a * np.cos(X[:, 0])
    return out


def candidate_from_gauge(anchor: gauge_mod.GaugePoint, spec: gauge_mod.GaugeSpec) -> CandidateFunction:
    """The gauge distance to a fixed anchor as a smooth candidate function."""
    d = anchor.mu.d
    ev = gauge_mod.GaugeEvaluator(spec, d)
    anchor_tables = ev.tables(anchor.mu)
    cache: List[tuple] = []  # small strong-ref cache: (mu, coefficients, value-series)

    def _coeffs(mu: EmpiricalMeasure):
        for m, c, v in cache:
            if m is mu:
                return c, v
        tables = ev.tables(mu)
        c = ev.coefficients(tables, anchor_tables)
        v = ev.series_value(tables, anchor_tables)
        cache.append((mu, c, v))
        if len(cache) > 4:
            cache.pop(0)
        return c, v

    def value(t, mu):
        _, v = _coeffs(mu)
        return (t - anchor.t) ** 2 + v

    return CandidateFunction(
        value=value,
        dt=lambda t, mu: 2.0 * (t - anchor.t),
        dmu=lambda t, mu, X: ev.dmu(_coeffs(mu)[0], np.atleast_2d(X)),
        dxdmu=lambda t, mu, X: ev.dxdmu(_coeffs(mu)[0], np.atleast_2d(X)),
        name="gauge-anchor",
    )


def check_quadratic_growth(
    u: CandidateFunction, t: float, mu: EmpiricalMeasure, X: np.ndarray, C: float
) -> None:
    """Spot-check ``|d_mu u|, |d_x d_mu u| <= C (1 + |x|^2)`` on probe points."""
    X = np.atleast_2d(X)
    bound = C * (1.0 + np.sum(X**2, axis=1))
    g = np.linalg.norm(u.dmu(t, mu, X), axis=1)
    h = np.linalg.norm(u.dxdmu(t, mu, X), axis=(1, 2))
    if np.any(g > bound) or np.any(h > bound):
        raise MeasureError(f"candidate {u.name!r} violates quadratic growth at C={C}")


def _replicate(mu: EmpiricalMeasure, N: int) -> np.ndarray:
    """Deterministic proportional replication of atoms (largest remainder)."""
    raw = mu.weights * N
    counts = np.floor(raw).astype(int)
    short = N - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return np.repeat(mu.points, counts, axis=0)


def ito_check(
    u: CandidateFunction,
    beta,
    theta,
    t: float,
    s: float,
    mu0: EmpiricalMeasure,
    *,
    particles: int,
    steps: int,
    seed: int,
) -> float:
    """Absolute chain-rule residual along a constant-coefficient Ito flow.

    The comparison uses the realized initial ensemble (deterministic
    proportional replication of ``mu0``), so both sides of the formula refer
    to the same discrete flow of empirical measures.
    """
    if not s > t:
        raise InvalidHorizon("need s > t")
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    d = mu0.d
    if beta.shape != (d,) or theta.shape[0] != d:
        raise MeasureError("beta must be a d-vector and theta a d x m matrix")
    rng = np.random.default_rng(seed)
    x = _replicate(mu0, particles).astype(float)
    N = x.shape[0]
    dt = (s - t) / steps
    sq = math.sqrt(dt)
    tt = theta @ theta.T

    mu_now = from_points(x)
    start_val = u.value(t, mu_now)
    integral = 0.0
    for k in range(steps):
        tk = t + k * dt
        integrand = u.dt(tk, mu_now) + float(np.mean(u.dmu(tk, mu_now, x) @ beta))
        hess = u.dxdmu(tk, mu_now, x)
        integrand += 0.5 * float(np.mean(np.einsum("jk,bjk->b", tt, hess)))
        integral += integrand * dt
        dB = sq * rng.standard_normal((N, theta.shape[1]))
        x = x + beta * dt + dB @ theta.T
        mu_now = from_points(x)
    end_val = u.value(s, mu_now)
    return abs(end_val - start_val - integral)
