"""Exact and estimated 2-Wasserstein distances between discrete measures.

The exact solver uses the monotone quantile coupling in dimension one
(optimal for convex costs, ties broken by stable sort) and exact min-cost
flow in higher dimensions: a Hungarian assignment when both sides have the
same number of uniformly weighted atoms, network simplex with
integer-scaled weights otherwise.  ``brute_force_w2`` enumerates all
matchings and is kept deliberately independent of the solver so it can
serve as a test oracle.

The Gaussian-smoothed distance W2 between ``mu * N_rho`` and ``nu * N_rho``
has no closed form between mixtures, so it is estimated by repeated exact
transport between finite samples; common random numbers are used across
the two measures to cut variance.  The estimate is reported together with
its standard error, never as a certified value.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .measures import (
    DimensionMismatch,
    EmpiricalMeasure,
    MeasureError,
    from_points,
)

__all__ = [
    "TransportError",
    "TooLarge",
    "UnequalSupportSizes",
    "InvalidBandwidth",
    "CouplingPlan",
    "SamplingBudget",
    "w2_exact",
    "brute_force_w2",
    "w2_smoothed",
    "debias_smoothed",
    "plan_cost",
]

_MARGINAL_TOL = 1e-10
_INT_SCALE = 10**12


class TransportError(MeasureError):
    pass


class TooLarge(TransportError):
    pass


class UnequalSupportSizes(TransportError):
    pass


class InvalidBandwidth(TransportError):
    pass


@dataclass(frozen=True)
class CouplingPlan:
    """Transport plan as ``(source index, target index, mass)`` triples."""

    pairs: tuple
    cost: float

    def validate(self, mu: EmpiricalMeasure, nu: EmpiricalMeasure, tol: float = _MARGINAL_TOL):
        row = np.zeros(mu.n_atoms)
        col = np.zeros(nu.n_atoms)
        cost = 0.0
        for i, j, m in self.pairs:
            row[i] += m
            col[j] += m
            cost += m * float(np.sum((mu.points[i] - nu.points[j]) ** 2))
        if np.max(np.abs(row - mu.weights)) > tol or np.max(np.abs(col - nu.weights)) > tol:
            raise TransportError("plan marginals do not match the measures")
        if abs(cost - self.cost) > 1e-8 * (1.0 + abs(self.cost)):
            raise TransportError("plan cost inconsistent with its pairs")


def plan_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure, pairs) -> float:
    """Quadratic cost of an explicit coupling; used for dominance checks."""
    return float(
        sum(m * np.sum((mu.points[i] - nu.points[j]) ** 2) for i, j, m in pairs)
    )


def _quantile_plan(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    # stable sort on (coordinate, original index) for reproducible ties
    xi = np.argsort(mu.points[:, 0], kind="stable")
    yi = np.argsort(nu.points[:, 0], kind="stable")
    wx = mu.weights[xi].copy()
    wy = nu.weights[yi].copy()
    pairs = []
    cost = 0.0
    a = b = 0
    while a < len(xi) and b < len(yi):
        m = min(wx[a], wy[b])
        if m > 0:
            i, j = xi[a], yi[b]
            pairs.append((int(i), int(j), float(m)))
            cost += m * float((mu.points[i, 0] - nu.points[j, 0]) ** 2)
        if wx[a] - m <= wy[b] - m:
            wy[b] -= wx[a]
            a += 1
        else:
            wx[a] -= wy[b]
            b += 1
    return cost, pairs


def _assignment_plan(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    from scipy.optimize import linear_sum_assignment

    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost_matrix = np.sum(diff * diff, axis=2)
    rows, cols = linear_sum_assignment(cost_matrix)
    n = mu.n_atoms
    pairs = [(int(i), int(j), 1.0 / n) for i, j in zip(rows, cols)]
    return float(cost_matrix[rows, cols].sum() / n), pairs


def _integer_weights(w: np.ndarray) -> np.ndarray:
    scaled = w * _INT_SCALE
    ints = np.floor(scaled).astype(np.int64)
    # largest-remainder fix so the integer masses balance exactly
    deficit = int(_INT_SCALE - ints.sum())
    if deficit > 0:
        order = np.argsort(-(scaled - ints), kind="stable")
        ints[order[:deficit]] += 1
    return ints


def _network_simplex_plan(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    import networkx as nx

    supplies = _integer_weights(mu.weights)
    demands = _integer_weights(nu.weights)
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost_matrix = np.sum(diff * diff, axis=2)
    cost_int = np.rint(cost_matrix * _INT_SCALE).astype(np.int64)

    g = nx.DiGraph()
    for i, s in enumerate(supplies):
        g.add_node(("s", i), demand=-int(s))
    for j, t in enumerate(demands):
        g.add_node(("t", j), demand=int(t))
    for i in range(mu.n_atoms):
        for j in range(nu.n_atoms):
            g.add_edge(("s", i), ("t", j), weight=int(cost_int[i, j]))
    _, flow = nx.network_simplex(g)

    pairs = []
    cost = 0.0
    for i in range(mu.n_atoms):
        for (kind, j), f in flow[("s", i)].items():
            if f > 0:
                m = f / _INT_SCALE
                pairs.append((i, j, m))
                cost += m * float(cost_matrix[i, j])
    return cost, pairs


def w2_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> Tuple[float, CouplingPlan]:
    """Exact W2 distance and an optimal coupling plan."""
    if mu.d != nu.d:
        raise DimensionMismatch("measures live in different dimensions")
    if mu.d == 1:
        cost, pairs = _quantile_plan(mu, nu)
    elif mu.n_atoms == nu.n_atoms and _uniform(mu) and _uniform(nu):
        cost, pairs = _assignment_plan(mu, nu)
    else:
        cost, pairs = _network_simplex_plan(mu, nu)
    cost = max(cost, 0.0)
    return math.sqrt(cost), CouplingPlan(tuple(pairs), cost)


def _uniform(m: EmpiricalMeasure) -> bool:
    return bool(np.max(np.abs(m.weights - 1.0 / m.n_atoms)) <= 1e-12)


def brute_force_w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact minimum over all n! matchings; test oracle for ``w2_exact``.

    Restricted to uniformly weighted measures with equal atom counts n <= 8.
    """
    if mu.n_atoms != nu.n_atoms:
        raise UnequalSupportSizes("brute force needs equal atom counts")
    if mu.n_atoms > 8:
        raise TooLarge("brute force capped at 8 atoms")
    if not (_uniform(mu) and _uniform(nu)):
        raise TransportError("brute force needs uniform weights")
    if mu.d != nu.d:
        raise DimensionMismatch("measures live in different dimensions")
    n = mu.n_atoms
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = float(np.sum((mu.points - nu.points[list(perm)]) ** 2)) / n
        if c < best:
            best = c
    return math.sqrt(best)


@dataclass(frozen=True)
class SamplingBudget:
    """Sample size and repetition count for the smoothed-distance estimator."""

    samples: int = 512
    reps: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1 or self.reps < 1:
            raise TransportError("budget needs samples >= 1 and reps >= 1")


def _crn_draw(mu, nu, rho, size, rng):
    # shared uniforms pick the atoms, shared normals provide the smoothing:
    # identical inputs then produce identical samples.
    u = rng.random(size)
    z = rng.standard_normal((size, mu.d))
    cmu = np.cumsum(mu.weights)
    cnu = np.cumsum(nu.weights)
    xi = np.searchsorted(cmu, u, side="left").clip(max=mu.n_atoms - 1)
    yi = np.searchsorted(cnu, u, side="left").clip(max=nu.n_atoms - 1)
    return mu.points[xi] + rho * z, nu.points[yi] + rho * z


def w2_smoothed(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    rho: float,
    budget: SamplingBudget = SamplingBudget(),
) -> Tuple[float, float]:
    """Monte Carlo estimate of W2(mu * N_rho, nu * N_rho) with standard error."""
    if not rho > 0:
        raise InvalidBandwidth("bandwidth must be positive")
    if mu.d != nu.d:
        raise DimensionMismatch("measures live in different dimensions")
    ss = np.random.SeedSequence(budget.seed)
    vals = np.empty(budget.reps)
    for r, child in enumerate(ss.spawn(budget.reps)):
        rng = np.random.default_rng(child)
        xs, ys = _crn_draw(mu, nu, rho, budget.samples, rng)
        dist, _ = w2_exact(from_points(xs), from_points(ys))
        vals[r] = dist
    stderr = vals.std(ddof=1) / math.sqrt(budget.reps) if budget.reps > 1 else 0.0
    return float(vals.mean()), float(stderr)


def debias_smoothed(smoothed_value: float, rho: float, d: int) -> float:
    """Upper bound for W2 given the smoothed distance: value + 2 rho sqrt(d+2)."""
    if smoothed_value < 0:
        raise TransportError("smoothed distance must be nonnegative")
    return smoothed_value + 2.0 * rho * math.sqrt(d + 2)
