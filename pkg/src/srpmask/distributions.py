"""Parametric lifetime families.

Parameterizations
-----------------
Weibull       (shape beta, scale eta)      R(y) = exp(-(y/eta)**beta)
Gamma         (shape a, rate b)            mean a/b, variance a/b**2
Lognormal     (mu_l, sigma_l)              mean and sd of log(Y)
LogLogistic   (shape k, scale s)           R(y) = 1 / (1 + (y/s)**k)

All densities are evaluated in log space. The vectorized helpers
``logpdf`` / ``logsf`` take a family and a parameter pair and are what the
estimators call in their inner loops; the scalar functions with the longer
names check their domain and raise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

__all__ = [
    "Family",
    "LifetimeModel",
    "DomainError",
    "NoSolutionError",
    "log_density",
    "log_reliability",
    "reliability",
    "cdf",
    "quantile",
    "expected_lifetime",
    "variance",
    "moment_match",
    "sample",
    "sample_truncated_below",
    "logpdf",
    "logsf",
    "rng_stream",
]


class DomainError(ValueError):
    """Argument outside the support or invalid parameters."""


class NoSolutionError(ValueError):
    """The family cannot attain the requested moments."""


class Family(str, enum.Enum):
    WEIBULL = "weibull"
    GAMMA = "gamma"
    LOGNORMAL = "lognormal"
    LOGLOGISTIC = "loglogistic"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for fam in cls:
            if fam.value == key:
                return fam
        raise ValueError(f"unknown family {value!r}")

    @property
    def param_names(self) -> tuple[str, str]:
        return _PARAM_NAMES[self]

    @property
    def positive(self) -> tuple[bool, bool]:
        """Which parameters are constrained to be positive."""
        return (self is not Family.LOGNORMAL, True)


_PARAM_NAMES = {
    Family.WEIBULL: ("beta", "eta"),
    Family.GAMMA: ("shape", "rate"),
    Family.LOGNORMAL: ("mu", "sigma"),
    Family.LOGLOGISTIC: ("shape", "scale"),
}


@dataclass(frozen=True)
class LifetimeModel:
    family: Family
    params: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        p = tuple(float(x) for x in self.params)
        if len(p) != 2:
            raise DomainError("lifetime models take exactly two parameters")
        object.__setattr__(self, "params", p)
        if not self.is_valid():
            raise DomainError(f"invalid parameters {p} for {self.family.value}")

    def is_valid(self) -> bool:
        return _valid(self.family, self.params)

    @classmethod
    def weibull(cls, beta, eta):
        return cls(Family.WEIBULL, (beta, eta))

    @classmethod
    def lognormal(cls, mu, sigma):
        return cls(Family.LOGNORMAL, (mu, sigma))

    @classmethod
    def gamma(cls, shape, rate):
        return cls(Family.GAMMA, (shape, rate))

    @classmethod
    def loglogistic(cls, shape, scale):
        return cls(Family.LOGLOGISTIC, (shape, scale))

    def as_dict(self) -> dict:
        names = self.family.param_names
        return {"family": self.family.value, "params": dict(zip(names, self.params))}

    def __repr__(self):
        a, b = self.family.param_names
        return f"LifetimeModel({self.family.value}, {a}={self.params[0]:.6g}, {b}={self.params[1]:.6g})"


def _valid(family, params) -> bool:
    a, b = params
    if not (math.isfinite(a) and math.isfinite(b)):
        return False
    if family is Family.LOGNORMAL:
        return b > 0
    return a > 0 and b > 0


# ---------------------------------------------------------------------------
# vectorized kernels (no validation)


def logpdf(family: Family, params, y):
    """Log density evaluated elementwise; ``y`` must be positive."""
    a, b = params
    y = np.asarray(y, dtype=float)
    if family is Family.WEIBULL:
        z = y / b
        return math.log(a / b) + (a - 1.0) * np.log(z) - z**a
    if family is Family.GAMMA:
        return a * math.log(b) - special.gammaln(a) + (a - 1.0) * np.log(y) - b * y
    if family is Family.LOGNORMAL:
        ly = np.log(y)
        u = (ly - a) / b
        return -0.5 * u * u - ly - math.log(b) - 0.5 * math.log(2.0 * math.pi)
    if family is Family.LOGLOGISTIC:
        lz = np.log(y / b)
        return math.log(a / b) + (a - 1.0) * lz - 2.0 * np.logaddexp(0.0, a * lz)
    raise ValueError(family)


def logsf(family: Family, params, y):
    """Log reliability evaluated elementwise; ``y`` must be non-negative."""
    a, b = params
    y = np.asarray(y, dtype=float)
    if family is Family.WEIBULL:
        return -((y / b) ** a)
    if family is Family.GAMMA:
        q = special.gammaincc(a, b * y)
        with np.errstate(divide="ignore"):
            out = np.log(q)
        bad = q < 1e-300
        if np.any(bad):
            # deep tail: asymptotic via scipy's logsf
            from scipy import stats

            out = np.where(bad, stats.gamma.logsf(y, a, scale=1.0 / b), out)
        return out
    if family is Family.LOGNORMAL:
        with np.errstate(divide="ignore"):
            ly = np.log(y)
        return special.log_ndtr(-(ly - a) / b)
    if family is Family.LOGLOGISTIC:
        with np.errstate(divide="ignore"):
            lz = np.log(y / b)
        return -np.logaddexp(0.0, a * lz)
    raise ValueError(family)


# ---------------------------------------------------------------------------
# scalar API


def _check(model: LifetimeModel):
    if not isinstance(model, LifetimeModel):
        raise TypeError("expected a LifetimeModel")
    if not model.is_valid():
        raise DomainError(f"invalid parameters {model.params}")


def log_density(model: LifetimeModel, y: float) -> float:
    """Natural log of the density at ``y > 0``."""
    _check(model)
    if not y > 0:
        raise DomainError(f"density requires y > 0, got {y}")
    return float(logpdf(model.family, model.params, y))


def log_reliability(model: LifetimeModel, y: float) -> float:
    """Natural log of R(y); equals 0 at y = 0."""
    _check(model)
    if not y >= 0:
        raise DomainError(f"reliability requires y >= 0, got {y}")
    if y == 0:
        return 0.0
    return float(logsf(model.family, model.params, y))


def reliability(model: LifetimeModel, y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("reliability requires y >= 0")
    out = np.ones_like(y)
    pos = y > 0
    out[pos] = np.exp(logsf(model.family, model.params, y[pos]))
    return out if out.ndim else float(out)


def cdf(model: LifetimeModel, y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = -np.expm1(logsf(model.family, model.params, y[pos]))
    return out if out.ndim else float(out)


def quantile(model: LifetimeModel, p):
    """Inverse CDF; ``p`` in [0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)):
        raise DomainError("quantile requires 0 <= p < 1")
    return _isf(model, 1.0 - p)


def _isf(model: LifetimeModel, q):
    """Inverse survival function for q in (0, 1]."""
    a, b = model.params
    q = np.asarray(q, dtype=float)
    fam = model.family
    with np.errstate(divide="ignore"):
        if fam is Family.WEIBULL:
            out = b * (-np.log(q)) ** (1.0 / a)
        elif fam is Family.GAMMA:
            out = special.gammainccinv(a, q) / b
        elif fam is Family.LOGNORMAL:
            out = np.exp(a - b * special.ndtri(q))
        else:
            out = b * (1.0 / q - 1.0) ** (1.0 / a)
    return out if out.ndim else float(out)


def expected_lifetime(model: LifetimeModel) -> float:
    _check(model)
    a, b = model.params
    fam = model.family
    if fam is Family.WEIBULL:
        return b * math.exp(special.gammaln(1.0 + 1.0 / a))
    if fam is Family.GAMMA:
        return a / b
    if fam is Family.LOGNORMAL:
        return math.exp(a + 0.5 * b * b)
    if a <= 1.0:
        raise DomainError("log-logistic mean is undefined for shape <= 1")
    t = math.pi / a
    return b * t / math.sin(t)


def variance(model: LifetimeModel) -> float:
    _check(model)
    a, b = model.params
    fam = model.family
    if fam is Family.WEIBULL:
        g1 = special.gammaln(1.0 + 1.0 / a)
        g2 = special.gammaln(1.0 + 2.0 / a)
        return b * b * math.exp(2.0 * g1) * math.expm1(g2 - 2.0 * g1)
    if fam is Family.GAMMA:
        return a / (b * b)
    if fam is Family.LOGNORMAL:
        return math.expm1(b * b) * math.exp(2.0 * a + b * b)
    if a <= 2.0:
        raise DomainError("log-logistic variance is undefined for shape <= 2")
    t = math.pi / a
    return b * b * (2.0 * t / math.sin(2.0 * t) - (t / math.sin(t)) ** 2)


_BRACKET = (1e-3, 1e3)


def _bisect(fn, lo, hi):
    flo, fhi = fn(lo), fn(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        raise NoSolutionError("requested moments are outside the attainable range")
    root, res = optimize.bisect(fn, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                maxiter=400, full_output=True, disp=False)
    if not res.converged:
        raise RuntimeError("moment matching did not converge")
    return root


def moment_match(family, mean: float, var: float) -> LifetimeModel:
    """Model of ``family`` whose analytic mean and variance equal the inputs."""
    family = Family.parse(family)
    if not (mean > 0 and var > 0):
        raise DomainError("mean and variance must be positive")
    log_ratio = math.log1p(var / mean**2)  # log(1 + cv^2)
    if family is Family.WEIBULL:
        # log E[Y^2]/E[Y]^2 is decreasing in the shape
        beta = _bisect(lambda k: special.gammaln(1 + 2 / k) - 2 * special.gammaln(1 + 1 / k) - log_ratio,
                       *_BRACKET)
        return LifetimeModel.weibull(beta, mean / math.exp(special.gammaln(1 + 1 / beta)))
    if family is Family.GAMMA:
        return LifetimeModel.gamma(mean**2 / var, mean / var)
    if family is Family.LOGNORMAL:
        return LifetimeModel.lognormal(math.log(mean) - 0.5 * log_ratio, math.sqrt(log_ratio))

    def g(k):
        t = math.pi / k
        return math.log(2 * t / math.sin(2 * t)) - 2 * math.log(t / math.sin(t)) - log_ratio

    lo = max(_BRACKET[0], 2.0 + 1e-9)
    k = _bisect(g, lo, _BRACKET[1])
    t = math.pi / k
    return LifetimeModel.loglogistic(k, mean * math.sin(t) / t)


def sample(model: LifetimeModel, rng: np.random.Generator, size=None):
    """Inverse-CDF draws."""
    _check(model)
    u = rng.random(size)
    # 1 - u lies in (0, 1]
    return _isf(model, 1.0 - u)


def sample_truncated_below(model: LifetimeModel, lower, rng: np.random.Generator, size=None):
    """Draws from the family conditioned on exceeding ``lower``."""
    _check(model)
    lower = np.asarray(lower, dtype=float)
    if np.any(lower < 0):
        raise DomainError("lower bound must be non-negative")
    shape = lower.shape if size is None else np.broadcast_shapes(lower.shape, tuple(np.atleast_1d(size)))
    u = 1.0 - rng.random(shape)
    lb = np.broadcast_to(lower, shape)
    if model.family is Family.WEIBULL:
        a, b = model.params
        out = b * ((lb / b) ** a - np.log(u)) ** (1.0 / a)
    else:
        ls = np.where(lb > 0, logsf(model.family, model.params, np.where(lb > 0, lb, 1.0)), 0.0)
        ls = np.broadcast_to(ls, shape)
        out = np.asarray(_isf(model, u * np.exp(ls)))
        tail = ~np.isfinite(out) | (np.exp(ls) == 0)
        if np.any(tail):
            out = np.where(tail, _tail_inverse(model, lb, np.log(u) + ls), out)
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise RuntimeError("numeric inversion failed in truncated sampling")
    out = np.where(out > lb, out, np.nextafter(lb, np.inf))
    return out if out.ndim else float(out)


def _tail_inverse(model, lower, log_target):
    """Solve log R(y) = log_target for y > lower by bracketed root finding."""
    lower = np.broadcast_to(lower, np.shape(log_target))
    out = np.empty(np.shape(log_target))
    for idx in np.ndindex(out.shape):
        lo = max(float(lower[idx]), 1e-300)
        target = float(log_target[idx])
        fn = lambda y: float(logsf(model.family, model.params, y)) - target
        hi = lo * 2 + 1.0
        for _ in range(200):
            if fn(hi) < 0:
                break
            hi *= 2
        else:
            raise RuntimeError("numeric inversion failed in truncated sampling")
        out[idx] = optimize.brentq(fn, lo, hi, xtol=1e-12 * hi)
    return out


def rng_stream(seed, *keys) -> np.random.Generator:
    """Independent generator for ``keys`` derived from a root seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)
