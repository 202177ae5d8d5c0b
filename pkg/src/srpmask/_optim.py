"""Nelder-Mead on log-transformed positive parameters."""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize

from .distributions import Family


def to_free(family: Family, params) -> np.ndarray:
    return np.array([math.log(p) if pos else p for p, pos in zip(params, family.positive)])


def to_natural(family: Family, x) -> tuple[float, ...]:
    return tuple(float(math.exp(v)) if pos else float(v) for v, pos in zip(x, family.positive))


def initial_simplex(family: Family, params, scale: float) -> np.ndarray:
    """Vertices displaced by ``scale`` times the current value of each parameter."""
    x0 = to_free(family, params)
    sim = np.tile(x0, (len(x0) + 1, 1))
    for j, (p, pos) in enumerate(zip(params, family.positive)):
        sim[j + 1, j] += math.log1p(scale) if pos else scale * max(abs(p), 1.0)
    return sim


def maximize(objective, family: Family, init, *, scale=0.1, xatol=1e-8, fatol=1e-10, maxfev=4000):
    """Maximize ``objective(params)`` over the natural parameter space.

    Returns ``(params, value, scipy_result)``.
    """

    def neg(x):
        try:
            th = to_natural(family, x)
        except OverflowError:
            return math.inf
        v = objective(th)
        return -v if np.isfinite(v) else math.inf

    res = optimize.minimize(
        neg,
        to_free(family, init),
        method="Nelder-Mead",
        options={
            "initial_simplex": initial_simplex(family, init, scale),
            "xatol": xatol,
            "fatol": fatol,
            "maxfev": maxfev,
            "maxiter": maxfev,
        },
    )
    return to_natural(family, res.x), -float(res.fun), res
