"""Measure representations: weighted point clouds and their Gaussian smoothings.

An :class:`EmpiricalMeasure` is a finitely supported probability measure on
R^d given by atoms and nonnegative weights summing to one.  A
:class:`SmoothedMeasure` is an empirical measure convolved with the isotropic
Gaussian of standard deviation ``bandwidth``; all masses of the smoothing are
evaluated exactly through the standard normal distribution function, so the
downstream multiscale sums and gauge derivatives inherit library-grade
accuracy.

Boxes are half-open, ``(lower, upper]`` componentwise: atoms sitting exactly
on a lower face are excluded, which makes dyadic cells a true partition.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import ndtr

__all__ = [
    "MeasureError",
    "EmptyInput",
    "NegativeWeight",
    "DimensionMismatch",
    "InvalidOrder",
    "Estimate",
    "EmpiricalMeasure",
    "SmoothedMeasure",
    "Box",
    "AnyMeasure",
    "from_points",
    "moment",
    "truncate",
    "cell_mass",
    "sample",
    "gaussian_interval_mass",
    "gaussian_interval_first",
    "gaussian_interval_second",
    "gaussian_abs_moment",
    "second_moment_outside_box",
    "measure_to_json",
    "measure_from_json",
    "save_measure",
    "load_measure",
]

_WEIGHT_TOL = 1e-12


class MeasureError(ValueError):
    pass


class EmptyInput(MeasureError):
    pass


class NegativeWeight(MeasureError):
    pass


class DimensionMismatch(MeasureError):
    pass


class InvalidOrder(MeasureError):
    pass


class Estimate(float):
    """A float carrying the standard error of the estimator that produced it."""

    stderr: float

    def __new__(cls, value, stderr=0.0):
        obj = super().__new__(cls, value)
        obj.stderr = float(stderr)
        return obj


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud on R^d; weights are nonnegative and sum to one."""

    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise EmptyInput("measure needs at least one atom")
        if pts.shape[1] < 1:
            raise DimensionMismatch("dimension must be >= 1")
        if w.shape != (pts.shape[0],):
            raise DimensionMismatch("one weight per atom required")
        if not np.all(np.isfinite(pts)):
            raise MeasureError("atom coordinates must be finite")
        if np.any(w < 0):
            raise NegativeWeight("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise MeasureError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def shift(self, v) -> "EmpiricalMeasure":
        v = np.asarray(v, dtype=float)
        return EmpiricalMeasure(self.points + v, self.weights)


@dataclass(frozen=True)
class SmoothedMeasure:
    """``base`` convolved with N(0, bandwidth^2 I_d); total mass one by construction."""

    base: EmpiricalMeasure
    bandwidth: float

    def __post_init__(self):
        if not (self.bandwidth > 0):
            raise MeasureError("bandwidth must be positive")

    @property
    def d(self) -> int:
        return self.base.d


AnyMeasure = Union[EmpiricalMeasure, SmoothedMeasure]


@dataclass(frozen=True)
class Box:
    """Half-open axis-aligned box ``(lower, upper]``; empty boxes are permitted."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("lower/upper must be d-vectors of equal length")
        if np.any(lo > hi):
            raise MeasureError("lower must be <= upper componentwise")
        object.__setattr__(self, "lower", _readonly(lo))
        object.__setattr__(self, "upper", _readonly(hi))

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    def is_empty(self) -> bool:
        return bool(np.any(self.lower >= self.upper))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask for rows of ``points`` lying in the half-open box."""
        pts = np.atleast_2d(points)
        return np.all((pts > self.lower) & (pts <= self.upper), axis=-1)

    def intersect(self, other: "Box") -> "Box":
        lo = np.maximum(self.lower, other.lower)
        hi = np.maximum(lo, np.minimum(self.upper, other.upper))
        return Box(lo, hi)

    def volume(self) -> float:
        if self.is_empty():
            return 0.0
        return float(np.prod(self.upper - self.lower))


# ---------------------------------------------------------------------------
# construction


def from_points(points: Sequence[Sequence[float]], weights=None) -> EmpiricalMeasure:
    """Build a normalized measure from atoms; uniform weights if none given."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise EmptyInput("empty point list")
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise DimensionMismatch("one weight per point required")
        if np.any(w < 0):
            raise NegativeWeight("weights must be nonnegative")
        s = w.sum()
        if s <= 0:
            raise NegativeWeight("weights must have positive total mass")
        w = w / s
    return EmpiricalMeasure(pts, w)


def dirac(x) -> EmpiricalMeasure:
    return from_points([np.atleast_1d(x)])


# ---------------------------------------------------------------------------
# moments


def moment(m: AnyMeasure, q: float, *, samples: int = 200_000, seed: int = 0) -> float:
    """Absolute moment ``int |x|^q dm``.

    Exact for empirical measures and for smoothed measures at ``q = 2``
    (``E|X + rho Z|^2 = int |x|^2 dmu + d rho^2``); other smoothed orders are
    estimated by Monte Carlo and returned as an :class:`Estimate` carrying the
    standard error.
    """
    if q < 1:
        raise InvalidOrder("moment order must be >= 1")
    if isinstance(m, EmpiricalMeasure):
        r = np.linalg.norm(m.points, axis=1)
        return float(m.weights @ r**q)
    if isinstance(m, SmoothedMeasure):
        if q == 2:
            return moment(m.base, 2) + m.d * m.bandwidth**2
        draws = sample(m, samples, seed)
        vals = np.linalg.norm(draws, axis=1) ** q
        return Estimate(vals.mean(), vals.std(ddof=1) / math.sqrt(samples))
    raise TypeError(f"unsupported measure type {type(m)!r}")


def truncate(m: EmpiricalMeasure, k: float) -> EmpiricalMeasure:
    """Move every atom with ``|x| > k`` to the origin, preserving its weight."""
    if not k > 0:
        raise MeasureError("truncation radius must be positive")
    r = np.linalg.norm(m.points, axis=1)
    pts = np.where((r > k)[:, None], 0.0, m.points)
    return EmpiricalMeasure(pts, m.weights)


# ---------------------------------------------------------------------------
# Gaussian interval helpers (shared by the dyadic and gauge machinery)


def gaussian_interval_mass(a, b, center, rho):
    """P(a < X <= b) for X ~ N(center, rho^2), broadcasting over all args."""
    alpha = (np.asarray(a) - center) / rho
    beta = (np.asarray(b) - center) / rho
    return ndtr(beta) - ndtr(alpha)


def _pdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def gaussian_interval_first(a, b, center, rho):
    """``int_a^b (x - center) N(center, rho^2)(dx)`` = rho (phi(alpha) - phi(beta))."""
    alpha = (np.asarray(a) - center) / rho
    beta = (np.asarray(b) - center) / rho
    return rho * (_pdf(alpha) - _pdf(beta))


def gaussian_interval_second(a, b, center, rho):
    """``int_a^b (x - center)^2 N(center, rho^2)(dx)`` via pdf/cdf boundary terms."""
    alpha = (np.asarray(a) - center) / rho
    beta = (np.asarray(b) - center) / rho
    return rho**2 * (ndtr(beta) - ndtr(alpha) - (beta * _pdf(beta) - alpha * _pdf(alpha)))


def gaussian_abs_moment(d: int, k: int, rho: float = 1.0) -> float:
    """``E |Z|^k`` for Z ~ N(0, rho^2 I_d): rho^k 2^(k/2) Gamma((d+k)/2) / Gamma(d/2)."""
    return rho**k * 2 ** (k / 2) * math.gamma((d + k) / 2) / math.gamma(d / 2)


def cell_mass(m: AnyMeasure, box: Box) -> float:
    """Exact mass of the half-open box under ``m``.

    Empirical: sum of weights of atoms strictly inside (lower faces excluded).
    Smoothed: per-atom tensor products of 1-D normal distribution differences.
    """
    if box.is_empty():
        return 0.0
    if isinstance(m, EmpiricalMeasure):
        if m.d != box.d:
            raise DimensionMismatch("box and measure dimensions differ")
        return float(m.weights @ box.contains(m.points))
    if isinstance(m, SmoothedMeasure):
        base = m.base
        if base.d != box.d:
            raise DimensionMismatch("box and measure dimensions differ")
        per_axis = gaussian_interval_mass(
            box.lower, box.upper, base.points, m.bandwidth
        )  # (n_atoms, d)
        return float(base.weights @ np.prod(per_axis, axis=1))
    raise TypeError(f"unsupported measure type {type(m)!r}")


def second_moment_outside_box(m: AnyMeasure, box: Box) -> float:
    """``int_{x not in box} |x|^2 dm``, exact for both measure kinds."""
    if isinstance(m, EmpiricalMeasure):
        inside = box.contains(m.points)
        r2 = np.sum(m.points**2, axis=1)
        return float(m.weights @ (r2 * ~inside))
    base, rho = m.base, m.bandwidth
    total = moment(base, 2) + base.d * rho**2
    # second moment inside the box: sum_j I2_j prod_{k != j} m_k per atom,
    # where I2_j also carries the (center_j)^2 and cross terms of |x|^2.
    lo, hi = box.lower, box.upper
    mass_ax = gaussian_interval_mass(lo, hi, base.points, rho)  # (n, d)
    first_ax = gaussian_interval_first(lo, hi, base.points, rho)
    second_ax = gaussian_interval_second(lo, hi, base.points, rho)
    c = base.points
    # int_a^b x^2 dN(c, rho^2) = c^2 m + 2 c I1 + I2 with I1, I2 centered
    x2_ax = c**2 * mass_ax + 2 * c * first_ax + second_ax
    prod_all = np.prod(mass_ax, axis=1)  # (n,)
    inside = np.zeros(base.n_atoms)
    for j in range(base.d):
        others = prod_all / np.where(mass_ax[:, j] > 0, mass_ax[:, j], 1.0)
        others = np.where(mass_ax[:, j] > 0, others, 0.0)
        inside += x2_ax[:, j] * others
    return float(total - base.weights @ inside)


# ---------------------------------------------------------------------------
# sampling


def sample(m: AnyMeasure, count: int, seed: int):
    """``count`` i.i.d. draws, deterministic given ``seed``; shape (count, d)."""
    if count < 1:
        raise MeasureError("count must be >= 1")
    rng = np.random.default_rng(seed)
    base = m.base if isinstance(m, SmoothedMeasure) else m
    idx = rng.choice(base.n_atoms, size=count, p=base.weights)
    draws = base.points[idx].copy()
    if isinstance(m, SmoothedMeasure):
        draws += m.bandwidth * rng.standard_normal((count, base.d))
    return draws


# ---------------------------------------------------------------------------
# serialization


def measure_to_json(m: EmpiricalMeasure) -> str:
    payload = {
        "d": m.d,
        "points": [[float(v) for v in row] for row in m.points],
        "weights": [float(w) for w in m.weights],
    }
    return json.dumps(payload, sort_keys=True)


def measure_from_json(text: str) -> EmpiricalMeasure:
    payload = json.loads(text)
    pts = np.asarray(payload["points"], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != payload["d"]:
        raise DimensionMismatch("points do not match declared dimension")
    return from_points(pts, np.asarray(payload["weights"], dtype=float))


def save_measure(m: EmpiricalMeasure, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(measure_to_json(m))


def _from_csv_text(text: str) -> EmpiricalMeasure:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyInput("empty CSV")
    header = None
    try:
        float(rows[0][0])
    except ValueError:
        header = [c.strip().lower() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise EmptyInput("CSV has a header but no data rows")
    data = np.asarray([[float(c) for c in r] for r in rows])
    has_weights = header is not None and header[-1] in ("w", "weight", "weights")
    if has_weights:
        return from_points(data[:, :-1], data[:, -1])
    return from_points(data)


def load_measure(path) -> EmpiricalMeasure:
    """Load a measure from JSON (``.json``) or CSV (anything else).

    CSV: one point per row; a header whose last column is named ``w``/``weight``
    marks a trailing weight column, otherwise weights are uniform.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return measure_from_json(text)
    return _from_csv_text(text)
