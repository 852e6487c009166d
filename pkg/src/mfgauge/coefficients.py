"""Controlled McKean-Vlasov coefficient sets and the built-in registry.

A :class:`CoefficientSet` bundles drift ``b(t, x, mu, a)``, diffusion
``sigma(t, x, a)`` (independent of the measure), running reward
``f(t, x, mu, a)`` and terminal reward ``g(x, mu)``, together with the bound
and Lipschitz constant ``K``, the time Hoelder exponent ``beta`` and the
finite control set ``A``.  The measure argument is passed as raw
``(points, weights)`` arrays so that callers can evaluate the coefficients on
large batches (particle ensembles, quadrature-shifted grids) without building
measure objects in the inner loop; ``points`` may carry leading batch axes.

All evaluators must broadcast: ``x`` has shape (..., d), ``points``
(..., n_atoms, d), ``weights`` (..., n_atoms) or (n_atoms,), ``a`` scalar or
(...,).  Returns: b -> (..., d), sigma -> (..., d, m), f and g -> (...,).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from .measures import MeasureError

__all__ = [
    "CoefficientSet",
    "REGISTRY",
    "get_coefficients",
    "validate_coefficients",
]


@dataclass(frozen=True)
class CoefficientSet:
    name: str
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    K: float
    beta: float
    controls: Tuple[float, ...]
    d: int
    m: int
    time_dependent: bool = False


def _mean(points, weights):
    w = np.asarray(weights)
    return np.sum(w[..., :, None] * points, axis=-2)


# -- heat-cos: no drift, unit noise, cosine terminal reward, no control -----


def _zero_drift(t, x, points, weights, a):
    return np.zeros_like(x)


def _unit_sigma(t, x, a):
    out = np.zeros(x.shape[:-1] + (x.shape[-1], x.shape[-1]))
    idx = np.arange(x.shape[-1])
    out[..., idx, idx] = 1.0
    return out


def _zero_f(t, x, points, weights, a):
    return np.zeros(x.shape[:-1])


def _cos_g(x, points, weights):
    return np.cos(x[..., 0])


HEAT_COS = CoefficientSet(
    name="heat-cos",
    b=_zero_drift,
    sigma=_unit_sigma,
    f=_zero_f,
    g=_cos_g,
    K=1.0,
    beta=1.0,
    controls=(0.0,),
    d=1,
    m=1,
)


# -- tanh-interact: mean-reverting interaction through the ensemble mean ----


def _tanh_drift(t, x, points, weights, a):
    mean = _mean(points, weights)
    return 0.5 * np.tanh(mean - x)


TANH_INTERACT = CoefficientSet(
    name="tanh-interact",
    b=_tanh_drift,
    sigma=_unit_sigma,
    f=_zero_f,
    g=_cos_g,
    K=1.0,
    beta=1.0,
    controls=(0.0,),
    d=1,
    m=1,
)


# -- bangbang: the control is the drift, small noise, monotone terminal -----


def _control_drift(t, x, points, weights, a):
    return np.broadcast_to(np.asarray(a, dtype=float)[..., None], x.shape).copy()


def _small_sigma(t, x, a):
    return 0.25 * _unit_sigma(t, x, a)


def _tanh_g(x, points, weights):
    return np.tanh(x[..., 0])


BANGBANG = CoefficientSet(
    name="bangbang",
    b=_control_drift,
    sigma=_small_sigma,
    f=_zero_f,
    g=_tanh_g,
    K=1.0,
    beta=1.0,
    controls=(-1.0, 1.0),
    d=1,
    m=1,
)


REGISTRY: Dict[str, CoefficientSet] = {
    c.name: c for c in (HEAT_COS, TANH_INTERACT, BANGBANG)
}


def get_coefficients(key: str) -> CoefficientSet:
    try:
        return REGISTRY[key]
    except KeyError:
        raise MeasureError(
            f"unknown coefficient key {key!r}; available: {sorted(REGISTRY)}"
        ) from None


def validate_coefficients(
    coeffs: CoefficientSet, *, probes: int = 64, seed: int = 0, tol: float = 1e-9
) -> None:
    """Spot-check boundedness and (x, mu)-Lipschitz constants on random probes.

    The diffusion's measure-independence is structural (its signature has no
    measure argument), so only the numeric bounds are sampled here.
    """
    from . import transport
    from .measures import from_points

    rng = np.random.default_rng(seed)
    d = coeffs.d
    for _ in range(probes):
        t = rng.uniform(0.0, 1.0)
        x = rng.normal(0.0, 2.0, d)
        xp = x + rng.normal(0.0, 0.5, d)
        na = int(rng.integers(1, 5))
        pts = rng.normal(0.0, 2.0, (na, d))
        ptsp = pts + rng.normal(0.0, 0.5, (na, d))
        w = np.full(na, 1.0 / na)
        a = coeffs.controls[int(rng.integers(0, len(coeffs.controls)))]

        bv = coeffs.b(t, x, pts, w, a)
        sv = coeffs.sigma(t, x, a)
        fv = coeffs.f(t, x, pts, w, a)
        gv = coeffs.g(x, pts, w)
        if np.linalg.norm(bv) + np.linalg.norm(sv) > 2 * coeffs.K + tol:
            raise MeasureError(f"{coeffs.name}: |b| + |sigma| exceeds K on a probe")
        if abs(float(fv)) > coeffs.K + tol or abs(float(gv)) > coeffs.K + tol:
            raise MeasureError(f"{coeffs.name}: |f| or |g| exceeds K on a probe")

        w2, _ = transport.w2_exact(from_points(pts), from_points(ptsp))
        gap = float(np.linalg.norm(x - xp)) + w2
        if gap <= 1e-12:
            continue
        db = np.linalg.norm(coeffs.b(t, xp, ptsp, w, a) - bv)
        ds = np.linalg.norm(coeffs.sigma(t, xp, a) - sv)
        df = abs(float(coeffs.f(t, xp, ptsp, w, a) - fv))
        dg = abs(float(coeffs.g(xp, ptsp, w) - gv))
        if max(db + ds, df + dg) > coeffs.K * gap * (1.0 + 1e-6) + tol:
            raise MeasureError(f"{coeffs.name}: Lipschitz ratio exceeds K on a probe")
