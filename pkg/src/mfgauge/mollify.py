"""Mollified per-player coefficients for the n-player approximation.

The n-player drift/reward coefficients are convolutions of the base
coefficients against compactly supported smooth kernels at scale 1/m:

    g_i(xbar) = m^{nd} int g(x_i - y_i, (1/n) sum_j delta_{x_j - y_j})
                prod_j Phi(m y_j) dy_j,

with the analogous formulas for b and f carrying an extra time convolution
against ``zeta(m s)`` evaluated at ``T ^ (t - s)^+``.  The kernels are the
normalized bumps ``exp(-1/(1-|y|^2))`` on the unit ball (and on [-1, 1] for
the time axis).  After substituting ``v = m y`` the integrals live on the
fixed unit cube and are computed by tensor Gauss-Legendre quadrature; the
kernel weights are normalized on the same node set, so mollifying a constant
reproduces it exactly.

For time-independent base coefficients the time convolution integrates to
one and is skipped.  The quadrature dimension cap ``nd + 1 <= 4`` keeps the
node count at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .coefficients import CoefficientSet
from .measures import MeasureError

__all__ = [
    "QuadratureBudgetExceeded",
    "MollifiedCoefficients",
    "mollify",
    "bump_value",
]

DEFAULT_ORDER = 8
DEFAULT_DIM_CAP = 4


class QuadratureBudgetExceeded(MeasureError):
    pass


def bump_value(y: np.ndarray) -> np.ndarray:
    """Unnormalized bump ``exp(-1/(1-|y|^2))`` on the open unit ball (rows of y)."""
    r2 = np.sum(np.atleast_2d(y) ** 2, axis=-1)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def _tensor_nodes(n: int, d: int, order: int):
    """Quadrature nodes (Q, n*d) and normalized weights over the n bump blocks."""
    x, w = np.polynomial.legendre.leggauss(order)
    axes = n * d
    grids = np.meshgrid(*([x] * axes), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)  # (order^axes, axes)
    wgrids = np.meshgrid(*([w] * axes), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    blocks = nodes.reshape(-1, n, d)
    for j in range(n):
        weights = weights * bump_value(blocks[:, j, :])
    keep = weights > 0
    nodes, weights = nodes[keep], weights[keep]
    weights = weights / weights.sum()
    return nodes, weights


@lru_cache(maxsize=None)
def _time_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    weights = w * bump_value(x[:, None])
    keep = weights > 0
    x, weights = x[keep], weights[keep]
    return x, weights / weights.sum()


@dataclass(frozen=True)
class MollifiedCoefficients:
    """Per-player smooth approximations ``b_i, f_i, g_i`` at kernel scale 1/m."""

    base: CoefficientSet
    n: int
    m: int
    order: int
    horizon: Optional[float]
    nodes: np.ndarray  # (Q, n*d) in [-1,1]^{nd}
    weights: np.ndarray  # (Q,)
    t_nodes: Optional[np.ndarray]
    t_weights: Optional[np.ndarray]

    @property
    def d(self) -> int:
        return self.base.d

    def _shifted_time(self, t: float) -> np.ndarray:
        # T ^ (t - s)^+ with s = u / m on the kernel support
        s = self.t_nodes / self.m
        return np.minimum(self.horizon, np.maximum(t - s, 0.0))

    def _convolve(self, kind: str, i: int, t, xbar: np.ndarray, a) -> np.ndarray:
        """Quadrature sum of the base coefficient at kernel-shifted arguments."""
        xb = np.atleast_2d(np.asarray(xbar, dtype=float))  # (B, n*d)
        B = xb.shape[0]
        blocks = xb.reshape(B, self.n, self.d)
        uniform = np.full(self.n, 1.0 / self.n)
        scalar_out = kind in ("f", "g")
        acc = np.zeros(B) if scalar_out else np.zeros((B, self.d))

        time_conv = kind in ("b", "f") and self.base.time_dependent
        if time_conv:
            times = self._shifted_time(float(t))
            t_weights = self.t_weights
        else:
            times = np.array([float(t) if t is not None else 0.0])
            t_weights = np.array([1.0])

        for q in range(self.nodes.shape[0]):
            shift = self.nodes[q].reshape(self.n, self.d) / self.m
            pts = blocks - shift  # (B, n, d)
            xi = pts[:, i, :]
            for tk, tw in zip(times, t_weights):
                wq = self.weights[q] * tw
                if kind == "g":
                    acc += wq * self.base.g(xi, pts, uniform)
                elif kind == "f":
                    acc += wq * self.base.f(tk, xi, pts, uniform, a)
                else:
                    acc += wq * self.base.b(tk, xi, pts, uniform, a)
        return acc

    def b_i(self, i: int, t, xbar, a) -> np.ndarray:
        return self._convolve("b", i, t, xbar, a)

    def f_i(self, i: int, t, xbar, a) -> np.ndarray:
        return self._convolve("f", i, t, xbar, a)

    def g_i(self, i: int, xbar) -> np.ndarray:
        return self._convolve("g", i, None, xbar, None)

    # -- explicit error estimates of the kernel approximation ---------------

    def space_gap_rhs(self, i: int) -> float:
        """Quadrature value of ``K m^{nd} int (|y_i| + mean_j |y_j|) prod Phi``."""
        blocks = self.nodes.reshape(-1, self.n, self.d)
        norms = np.linalg.norm(blocks, axis=2)  # (Q, n)
        integrand = norms[:, i] + norms.mean(axis=1)
        return self.base.K * float(self.weights @ integrand) / self.m

    def time_gap_rhs(self, t: float) -> float:
        """``K m int |t - T^(t-s)^+|^beta zeta(ms) ds``; zero when time-independent."""
        if not self.base.time_dependent:
            return 0.0
        times = self._shifted_time(t)
        return self.base.K * float(
            self.t_weights @ np.abs(t - times) ** self.base.beta
        )

    def lipschitz_rhs(self, xbar, zbar, i: int) -> float:
        """Right side of the mollified Lipschitz estimate for probe pairs."""
        xb = np.asarray(xbar, dtype=float).reshape(self.n, self.d)
        zb = np.asarray(zbar, dtype=float).reshape(self.n, self.d)
        per = np.linalg.norm(xb - zb, axis=1)
        return self.base.K * float(per[i] + per.mean())


def mollify(
    coeffs: CoefficientSet,
    n: int,
    m: int,
    *,
    order: int = DEFAULT_ORDER,
    dim_cap: int = DEFAULT_DIM_CAP,
    horizon: Optional[float] = None,
) -> MollifiedCoefficients:
    """Per-player mollified coefficients for the n-player system."""
    if n < 1 or m < 1:
        raise MeasureError("n and m must be >= 1")
    if n * coeffs.d + 1 > dim_cap:
        raise QuadratureBudgetExceeded(
            f"quadrature dimension {n * coeffs.d + 1} exceeds cap {dim_cap}"
        )
    if coeffs.time_dependent and horizon is None:
        raise MeasureError("time-dependent coefficients need a horizon")
    nodes, weights = _tensor_nodes(n, coeffs.d, order)
    t_nodes = t_weights = None
    if coeffs.time_dependent:
        t_nodes, t_weights = _time_nodes(order)
    return MollifiedCoefficients(
        base=coeffs,
        n=n,
        m=m,
        order=order,
        horizon=horizon,
        nodes=nodes,
        weights=weights,
        t_nodes=t_nodes,
        t_weights=t_weights,
    )
