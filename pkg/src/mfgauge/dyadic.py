"""Dyadic partitions, annuli, and the multiscale upper bound on W2^2.

Geometry: ``B_0 = (-1, 1]^d`` and ``B_n = (-2^n, 2^n]^d \\ (-2^{n-1}, 2^{n-1}]^d``
for n >= 1.  At refinement level ``l`` the unit box is partitioned into
``2^{d l}`` translations of ``(-2^{-l}, 2^{-l}]^d``; the band-n cells are these
boxes scaled by ``2^n`` and clipped against the inner hole, so for every
``(n, l)`` the realized cells partition ``B_n`` exactly.

The bound computed here truncates the triple sum

    c_d * sum_n 2^{2n} sum_l 2^{-2l} sum_B |mu(cell) - nu(cell)|

at ``(n_max, l_max)`` and accounts for the remainder with two rigorous tail
estimates: the n-tail via ``2^{2n} <= 4 |x|^2 / d`` on ``B_n`` applied to the
second moment outside ``(-2^{n_max}, 2^{n_max}]^d``, and the l-tail via
``sum_{l > l_max} 2^{-2l} = 4^{-l_max} / 3`` against the covered band masses.

The constant ``c_d`` is not pinned by theory here; ``calibrate_cd`` fits it on
a random corpus (max ratio W2^2 / sum, times a safety factor) and reports
should flag the value as calibrated, not proven.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from . import transport
from .measures import (
    AnyMeasure,
    Box,
    DimensionMismatch,
    EmpiricalMeasure,
    MeasureError,
    SmoothedMeasure,
    from_points,
    second_moment_outside_box,
)

__all__ = [
    "DyadicCell",
    "BoundSpec",
    "BoundReport",
    "box_minus",
    "enumerate_cells",
    "cell_mass",
    "band_box",
    "hole_box",
    "CellMassCalculator",
    "multiscale_bound",
    "tail_estimate",
    "default_spec",
    "empirical_rate",
    "calibrate_cd",
    "random_measure_pair",
    "DEFAULT_C_D",
]

# Calibrated via calibrate_cd (500 instances, safety 2.0, seed 20240711);
# regenerate with `mfgauge calibrate` if the corpus changes.
DEFAULT_C_D = {1: 8.5, 2: 8.4, 3: 7.1}


@dataclass(frozen=True)
class DyadicCell:
    """One set ``(2^n B) ∩ B_n`` with its clipped-box decomposition."""

    n: int
    level: int
    index: Tuple[int, ...]
    pieces: Tuple[Box, ...]

    def volume(self) -> float:
        return sum(p.volume() for p in self.pieces)


@dataclass(frozen=True)
class BoundSpec:
    c_d: float
    n_max: int
    l_max: int

    def __post_init__(self):
        if self.n_max < 0 or self.l_max < 0:
            raise MeasureError("truncation depths must be nonnegative")


@dataclass(frozen=True)
class BoundReport:
    partial_sum: float
    tail_bound: float
    c_d: float
    n_max: int
    l_max: int

    @property
    def total(self) -> float:
        return self.partial_sum + self.tail_bound


def band_box(n: int, d: int) -> Box:
    r = float(2**n)
    return Box(np.full(d, -r), np.full(d, r))


def hole_box(n: int, d: int) -> Optional[Box]:
    if n == 0:
        return None
    r = float(2 ** (n - 1))
    return Box(np.full(d, -r), np.full(d, r))


def box_minus(outer: Box, hole: Box) -> Tuple[Box, ...]:
    """Decompose ``outer \\ hole`` into at most 2d disjoint half-open boxes."""
    inner = outer.intersect(hole)
    if inner.is_empty():
        return (outer,)
    pieces: List[Box] = []
    lo = outer.lower.copy()
    hi = outer.upper.copy()
    for j in range(outer.d):
        if lo[j] < inner.lower[j]:
            plo, phi = lo.copy(), hi.copy()
            phi[j] = inner.lower[j]
            pieces.append(Box(plo, phi))
            lo[j] = inner.lower[j]
        if inner.upper[j] < hi[j]:
            plo, phi = lo.copy(), hi.copy()
            plo[j] = inner.upper[j]
            pieces.append(Box(plo, phi))
            hi[j] = inner.upper[j]
    return tuple(pieces)


def enumerate_cells(n: int, level: int, d: int) -> List[DyadicCell]:
    """All nonempty cells ``(2^n B) ∩ B_n`` for B in the level-``level`` partition."""
    if n < 0 or level < 0:
        raise MeasureError("band and level must be nonnegative")
    side = 2.0 ** (n + 1 - level)
    origin = -(2.0**n)
    hole = hole_box(n, d)
    cells = []
    for flat in range(2 ** (d * level)):
        idx = []
        rem = flat
        for _ in range(d):
            idx.append(rem % 2**level)
            rem //= 2**level
        idx = tuple(idx)
        lo = origin + side * np.asarray(idx, dtype=float)
        box = Box(lo, lo + side)
        if hole is None:
            pieces: Tuple[Box, ...] = (box,)
        else:
            pieces = box_minus(box, hole)
            pieces = tuple(p for p in pieces if not p.is_empty())
            if not pieces:
                continue  # cell swallowed by the inner hole
        cells.append(DyadicCell(n, level, idx, pieces))
    return cells


def cell_mass(m: AnyMeasure, cell: DyadicCell) -> float:
    from . import measures

    return sum(measures.cell_mass(m, p) for p in cell.pieces)


# ---------------------------------------------------------------------------
# vectorized cell-mass engine
#
# Per band the level-l cell boundaries are nested inside the level-l_max
# boundaries, so one CDF evaluation per (atom, axis, band) at the finest grid
# serves every coarser level through strided differences.  The inner hole is
# handled separably: clipping the boundary grid to the hole gives, per axis,
# the CDF of the intersected interval, and mass(cell \\ hole) is the full
# tensor product minus the clipped one.


def _axis_cdf(coords: np.ndarray, edges: np.ndarray, rho: Optional[float]) -> np.ndarray:
    """CDF of each atom's axis marginal at every edge; step function if raw."""
    if rho is None:
        return (coords[:, None] <= edges[None, :]).astype(float)
    return ndtr((edges[None, :] - coords[:, None]) / rho)


def _level_masses(cdf: np.ndarray, l_max: int, level: int) -> np.ndarray:
    step = 2 ** (l_max - level)
    sub = cdf[:, ::step]
    return sub[:, 1:] - sub[:, :-1]


def _combine(weights: np.ndarray, axes: Sequence[np.ndarray]) -> np.ndarray:
    d = len(axes)
    if d == 1:
        return weights @ axes[0]
    if d == 2:
        return np.einsum("a,ai,aj->ij", weights, axes[0], axes[1], optimize=True)
    if d == 3:
        return np.einsum(
            "a,ai,aj,ak->ijk", weights, axes[0], axes[1], axes[2], optimize=True
        )
    raise MeasureError("cell-mass tensors supported up to d = 3")


def _split_measure(m: AnyMeasure):
    if isinstance(m, SmoothedMeasure):
        return m.base.points, m.base.weights, m.bandwidth
    return m.points, m.weights, None


class CellMassCalculator:
    """Cell-mass tensors of one measure over every ``(band, level)`` pair."""

    def __init__(self, d: int, n_max: int, l_max: int):
        if d > 3:
            raise MeasureError("dyadic tensors supported up to d = 3")
        self.d = d
        self.n_max = n_max
        self.l_max = l_max
        self.edges = {
            n: -(2.0**n) + 2.0 ** (n + 1 - l_max) * np.arange(2**l_max + 1)
            for n in range(n_max + 1)
        }

    def tables(self, m: AnyMeasure) -> Dict[Tuple[int, int], np.ndarray]:
        """Map ``(n, level)`` to the masses of all level cells inside band n."""
        points, weights, rho = _split_measure(m)
        if points.shape[1] != self.d:
            raise DimensionMismatch("measure dimension does not match calculator")
        out: Dict[Tuple[int, int], np.ndarray] = {}
        for n in range(self.n_max + 1):
            edges = self.edges[n]
            full = [_axis_cdf(points[:, j], edges, rho) for j in range(self.d)]
            if n >= 1:
                h = 2.0 ** (n - 1)
                clipped_edges = np.clip(edges, -h, h)
                clip = [_axis_cdf(points[:, j], clipped_edges, rho) for j in range(self.d)]
            for level in range(self.l_max + 1):
                axes = [_level_masses(c, self.l_max, level) for c in full]
                table = _combine(weights, axes)
                if n >= 1:
                    axes_h = [_level_masses(c, self.l_max, level) for c in clip]
                    table = table - _combine(weights, axes_h)
                out[(n, level)] = table
        return out

    def band_masses(self, m: AnyMeasure) -> np.ndarray:
        """Mass of each band ``B_n``, n = 0..n_max."""
        points, weights, rho = _split_measure(m)
        out = np.empty(self.n_max + 1)
        for n in range(self.n_max + 1):
            edges = np.array([-(2.0**n), 2.0**n])
            full = [_axis_cdf(points[:, j], edges, rho) for j in range(self.d)]
            mass = weights @ np.prod([c[:, 1] - c[:, 0] for c in full], axis=0)
            if n >= 1:
                h = 2.0 ** (n - 1)
                hedges = np.array([-h, h])
                hol = [_axis_cdf(points[:, j], hedges, rho) for j in range(self.d)]
                mass -= weights @ np.prod([c[:, 1] - c[:, 0] for c in hol], axis=0)
            out[n] = float(mass)
        return out


def _require_same_kind(mu: AnyMeasure, nu: AnyMeasure):
    if isinstance(mu, SmoothedMeasure) != isinstance(nu, SmoothedMeasure):
        raise MeasureError("mu and nu must be of the same kind")
    if isinstance(mu, SmoothedMeasure) and not math.isclose(
        mu.bandwidth, nu.bandwidth, rel_tol=0, abs_tol=0
    ):
        raise MeasureError("smoothed measures must share the bandwidth")
    dmu = mu.d
    if dmu != nu.d:
        raise DimensionMismatch("measures live in different dimensions")
    return dmu


def tail_estimate(mu: AnyMeasure, nu: AnyMeasure, spec: BoundSpec) -> float:
    """Rigorous bound on the truncated part of the triple sum."""
    d = _require_same_kind(mu, nu)
    calc = CellMassCalculator(d, spec.n_max, 0)
    outer = band_box(spec.n_max, d)
    out2 = second_moment_outside_box(mu, outer) + second_moment_outside_box(nu, outer)
    n_tail = spec.c_d * (4.0 / 3.0) * (4.0 / d) * out2
    band = calc.band_masses(mu) + calc.band_masses(nu)
    weights_n = 4.0 ** np.arange(spec.n_max + 1)
    l_tail = spec.c_d * (4.0 ** (-spec.l_max) / 3.0) * float(weights_n @ band)
    return n_tail + l_tail


def multiscale_bound(mu: AnyMeasure, nu: AnyMeasure, spec: BoundSpec) -> BoundReport:
    """Truncated multiscale sum plus tail; ``total`` upper-bounds c_d-scaled W2^2."""
    d = _require_same_kind(mu, nu)
    calc = CellMassCalculator(d, spec.n_max, spec.l_max)
    tmu = calc.tables(mu)
    tnu = calc.tables(nu)
    partial = 0.0
    for n in range(spec.n_max + 1):
        for level in range(spec.l_max + 1):
            diff = np.abs(tmu[(n, level)] - tnu[(n, level)]).sum()
            partial += 4.0**n * 4.0 ** (-level) * float(diff)
    partial *= spec.c_d
    return BoundReport(partial, tail_estimate(mu, nu, spec), spec.c_d, spec.n_max, spec.l_max)


def default_spec(mu: AnyMeasure, nu: AnyMeasure, c_d: float, l_max: int = 10) -> BoundSpec:
    base_mu = mu.base if isinstance(mu, SmoothedMeasure) else mu
    base_nu = nu.base if isinstance(nu, SmoothedMeasure) else nu
    radius = max(base_mu.support_radius(), base_nu.support_radius())
    n_max = max(3, math.ceil(math.log2(1.0 + radius)) + 2)
    return BoundSpec(c_d, n_max, l_max)


# ---------------------------------------------------------------------------
# empirical convergence-rate experiments


def _reference_discretization(m: AnyMeasure, resolution: int, seed: int) -> EmpiricalMeasure:
    if isinstance(m, EmpiricalMeasure):
        return m
    base, rho = m.base, m.bandwidth
    if base.d == 1:
        # quantile grid of the 1-D Gaussian mixture via vectorized bisection
        q = (np.arange(resolution) + 0.5) / resolution
        lo = np.full(resolution, base.points[:, 0].min() - 10 * rho)
        hi = np.full(resolution, base.points[:, 0].max() + 10 * rho)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            cdf = base.weights @ ndtr((mid[None, :] - base.points[:, 0:1]) / rho)
            lo = np.where(cdf < q, mid, lo)
            hi = np.where(cdf >= q, mid, hi)
        return from_points(0.5 * (lo + hi)[:, None])
    from .measures import sample

    return from_points(sample(m, resolution, seed))


def empirical_rate(
    mu: AnyMeasure,
    sizes: Sequence[int],
    reps: int,
    seed: int,
    *,
    resolution: int = 2048,
) -> List[Tuple[int, float, float]]:
    """Mean W2 between ``mu`` and its n-sample empirical version, per size.

    Returns rows ``(n, mean, stderr)``; the reference is a fixed
    high-resolution discretization of ``mu``.
    """
    if not sizes:
        raise MeasureError("need at least one sample size")
    if reps < 1:
        raise MeasureError("reps must be >= 1")
    from .measures import sample

    ref = _reference_discretization(mu, resolution, seed=seed ^ 0x5EED)
    rows = []
    ss = np.random.SeedSequence(seed)
    for size in sizes:
        vals = np.empty(reps)
        for r, child in enumerate(ss.spawn(reps)):
            draws = sample(mu, size, int(child.generate_state(1)[0] % 2**31))
            emp = from_points(draws)
            vals[r], _ = transport.w2_exact(emp, ref)
        stderr = vals.std(ddof=1) / math.sqrt(reps) if reps > 1 else 0.0
        rows.append((int(size), float(vals.mean()), float(stderr)))
    return rows


# ---------------------------------------------------------------------------
# calibration of c_d


def random_measure_pair(d: int, rng: np.random.Generator, max_atoms: int = 6):
    """Random uniform-weight pair at mixed spatial scales; calibration corpus unit."""
    scale = rng.choice([0.3, 1.0, 3.0])
    n1 = int(rng.integers(1, max_atoms + 1))
    n2 = int(rng.integers(1, max_atoms + 1))
    mu = from_points(scale * rng.standard_normal((n1, d)))
    nu = from_points(scale * rng.standard_normal((n2, d)) + rng.normal(0, scale, d))
    return mu, nu


def calibrate_cd(
    d: int,
    *,
    n_instances: int = 500,
    seed: int = 20240711,
    safety: float = 2.0,
    l_max: Optional[int] = None,
    max_atoms: int = 6,
) -> float:
    """Fit c_d as safety * max over a random corpus of W2^2 / (unit triple sum).

    The denominator uses c_d = 1 at a truncation deep enough that the missing
    terms only shrink the ratio, so the safety factor is genuine headroom.
    """
    if l_max is None:
        l_max = 12 if d == 1 else 8
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        mu, nu = random_measure_pair(d, rng, max_atoms=max_atoms)
        dist, _ = transport.w2_exact(mu, nu)
        if dist == 0.0:
            continue
        spec = default_spec(mu, nu, 1.0, l_max=l_max)
        report = multiscale_bound(mu, nu, spec)
        if report.partial_sum <= 0:
            continue
        worst = max(worst, dist**2 / report.partial_sum)
    if worst == 0.0:
        raise MeasureError("degenerate calibration corpus")
    return safety * worst
