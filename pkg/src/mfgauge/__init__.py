"""Numerical toolkit for Wasserstein-space control experiments.

Building blocks: weighted point-cloud measures and their Gaussian
smoothings, exact 2-Wasserstein solvers, dyadic multiscale upper bounds,
a smooth gauge-type function with closed-form measure derivatives, a
finite-domain Borwein-Preiss variational principle, McKean-Vlasov
particle simulation with policy search, and finite-difference solvers
for the mollified n-player Bellman systems that approximate the
mean-field value function.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    measures,
    transport,
    dyadic,
    gauge,
    coefficients,
    mollify,
    mfc,
    nplayer,
    cli,
)
