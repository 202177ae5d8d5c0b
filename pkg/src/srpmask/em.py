"""Monte-Carlo EM estimation with Louis standard errors.

The E-step draws ``L`` socket assignments per system at the current
parameters; because the augmented log-likelihood only depends on which gap
durations and censored remainders an assignment produces, the Monte-Carlo
Q function collapses to a weighted censored-sample log-likelihood over the
distinct candidate durations. The M-step maximizes it with Nelder-Mead.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import _backend
from ._optim import maximize
from .data import EventHistory, Fleet
from .distributions import (
    Family,
    LifetimeModel,
    expected_lifetime,
    logpdf,
    logsf,
    quantile,
    rng_stream,
)
from .enumeration import BudgetExceededError, EnumerationBudget, exact_log_likelihood
from .latent import FleetArrays, SampleBatch, batch_log_lik, decompose, parents_from_labels, sample_batch

__all__ = [
    "EmConfig",
    "EmTrace",
    "FitReport",
    "SingularInformationError",
    "q_function",
    "run_em",
    "louis_information",
    "confidence_interval",
    "delta_method",
    "info_criteria",
    "weibull_system_derivatives",
    "duration_derivatives",
    "default_grid",
    "replicate_weights",
    "effective_sample_size",
]

log = logging.getLogger(__name__)


WEIGHTINGS = ("importance", "none")


class SingularInformationError(np.linalg.LinAlgError):
    pass


@dataclass
class EmConfig:
    L: int = 1000
    tol: float = 1e-4
    max_iters: int = 200
    seed: int | None = 0
    simplex_scale: float = 0.1
    maxfev: int = 2000
    xatol: float = 1e-8
    fatol: float = 1e-9
    # reuse the E-step uniforms across iterations (draws still follow theta_r)
    common_random_numbers: bool = True
    # "importance": reweight the sequential draws to the exact conditional
    # law of the assignments; "none": plain average over the draws
    weighting: str = "importance"
    louis_L: int | None = None
    level: float = 0.95
    exact_budget: int | None = 10**7
    backend: str | None = None

    def __post_init__(self):
        if self.L < 1 or self.max_iters < 1 or not self.tol > 0:
            raise ValueError("need L >= 1, max_iters >= 1 and tol > 0")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")


@dataclass
class EmTrace:
    params: list[tuple[float, ...]] = field(default_factory=list)
    q: list[float] = field(default_factory=list)

    def append(self, params, q):
        self.params.append(tuple(params))
        self.q.append(float(q))

    def __len__(self):
        return len(self.params)


@dataclass
class FitReport:
    model: LifetimeModel
    se: np.ndarray
    ci: np.ndarray
    level: float
    cov: np.ndarray | None
    information: np.ndarray | None
    expected_lifetime: dict
    criteria: dict
    trace: EmTrace
    q_final: float
    converged: bool
    n_iter: int
    n: int
    exact_log_lik: float | None = None
    warnings: list = field(default_factory=list)

    @property
    def family(self) -> Family:
        return self.model.family

    def reliability_band(self, grid) -> np.ndarray:
        """Rows ``(t, estimate, lower, upper)`` with pointwise delta-method bounds."""
        rows = []
        for t in np.asarray(grid, dtype=float):
            if self.cov is None:
                from .distributions import reliability

                v = float(reliability(self.model, t))
                rows.append((t, v, math.nan, math.nan))
                continue
            v, _, (lo, hi) = delta_method(self.model, self.cov, ("reliability", t), self.level)
            rows.append((t, v, min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)))
        return np.array(rows).reshape(-1, 4)

    def to_dict(self) -> dict:
        names = self.model.family.param_names
        lst = lambda a: None if a is None else np.asarray(a).tolist()
        return {
            "estimator": "em",
            "family": self.model.family.value,
            "params": dict(zip(names, self.model.params)),
            "se": dict(zip(names, lst(self.se))),
            "ci": {nm: lst(row) for nm, row in zip(names, self.ci)},
            "level": self.level,
            "cov": lst(self.cov),
            "information": lst(self.information),
            "expected_lifetime": self.expected_lifetime,
            "criteria": self.criteria,
            "q_final": self.q_final,
            "exact_log_lik": self.exact_log_lik,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n": self.n,
            "trace": {"params": [list(p) for p in self.trace.params], "q": self.trace.q},
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=kw.pop("indent", 2), **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


# ---------------------------------------------------------------------------
# Q function


def _weighted_objective(family: Family, ev_x, ev_w, cens_x, cens_w) -> Callable:
    def q(theta):
        if not (np.all(np.isfinite(theta)) and (not family.positive[0] or theta[0] > 0) and theta[1] > 0):
            return -math.inf
        with np.errstate(all="ignore"):
            v = float(np.dot(ev_w, logpdf(family, theta, ev_x)) + np.dot(cens_w, logsf(family, theta, cens_x)))
        return v if not math.isnan(v) else -math.inf

    return q


def replicate_weights(arrays: FleetArrays, batch: SampleBatch, model: LifetimeModel, weighting="importance",
                      backend=None) -> np.ndarray:
    """Per-system normalized weights of the sampled assignments, shape (n, L).

    With importance weighting a draw d gets weight proportional to
    exp(l(d)) / q(d), where q is the sequential proposal probability, so the
    weighted average targets the exact conditional expectation given the
    failure times.
    """
    n, L = batch.logq.shape
    if weighting == "none" or n == 0:
        return np.full((n, L), 1.0 / max(L, 1))
    lw = batch_log_lik(arrays, batch, model, backend) - batch.logq
    top = lw.max(axis=1, keepdims=True)
    bad = ~np.isfinite(top[:, 0])
    if bad.any():
        log.warning("%d systems have no draw with positive likelihood; using equal weights", int(bad.sum()))
        lw[bad] = 0.0
        top[bad] = 0.0
    with np.errstate(invalid="ignore"):
        w = np.exp(lw - top)
    w[~np.isfinite(w)] = 0.0
    return w / w.sum(axis=1, keepdims=True)


def effective_sample_size(weights) -> np.ndarray:
    """Kish effective sample size per system."""
    w = np.asarray(weights, dtype=float)
    return w.sum(axis=1) ** 2 / (w**2).sum(axis=1)


def _counts(arrays: FleetArrays, batch: SampleBatch, weights, backend=None):
    kern = _backend.get(backend)
    return kern.tally_weighted(np.ascontiguousarray(batch.parents, dtype=np.int32), arrays.r, int(arrays.m),
                               np.ascontiguousarray(weights, dtype=float))


def q_function(fleet: Fleet, model: LifetimeModel, assignments) -> float:
    """Average over replicates of the fleet's augmented log-likelihood.

    ``assignments[i]`` holds the L sampled assignments (1-based label tuples)
    of system i; every system must have the same number of replicates.
    """
    arrays = FleetArrays(fleet)
    Ls = {len(a) for a in assignments}
    if len(assignments) != fleet.n or len(Ls) != 1:
        raise ValueError("need the same number of assignments for every system")
    L = Ls.pop()
    parents = np.full((fleet.n, L, arrays.R), -1, dtype=np.int32)
    for i, (s, ds) in enumerate(zip(fleet.systems, assignments)):
        for l, d in enumerate(ds):
            decompose(s, d, fleet.m)  # validates
            parents[i, l, : s.r] = parents_from_labels(d)
    G, C = _backend.kernels.tally(parents, arrays.r, fleet.m)
    return _weighted_objective(model.family, *arrays.weighted(G, C, 1.0 / L))(model.params)


# ---------------------------------------------------------------------------
# EM


def run_em(fleet: Fleet, family, init=None, config: EmConfig | None = None) -> FitReport:
    """Fit ``family`` by Monte-Carlo EM and attach Louis standard errors."""
    family = Family.parse(family)
    cfg = config or EmConfig()
    theta = tuple(float(x) for x in (init if init is not None else (1.0, 1.0)))
    LifetimeModel(family, theta)
    warnings = []
    if fleet.total_failures == 0:
        msg = "fleet has no failures: the likelihood is maximized on a ridge and the parameters are not identified"
        log.warning(msg)
        warnings.append(msg)
    arrays = FleetArrays(fleet)
    rng = rng_stream(cfg.seed, 0)
    U = rng.random((arrays.n, cfg.L, arrays.R)) if cfg.common_random_numbers else None

    trace = EmTrace()
    converged = False
    q_val = math.nan
    it = 0
    for it in range(1, cfg.max_iters + 1):
        model = LifetimeModel(family, theta)
        u = U if U is not None else rng.random((arrays.n, cfg.L, arrays.R))
        batch = sample_batch(arrays, model, cfg.L, uniforms=u, backend=cfg.backend)
        w = replicate_weights(arrays, batch, model, cfg.weighting, cfg.backend)
        G, C = _counts(arrays, batch, w, cfg.backend)
        obj = _weighted_objective(family, *arrays.weighted(G, C))
        if it == 1:
            trace.append(theta, obj(theta))
        new, q_val, _ = maximize(obj, family, theta, scale=cfg.simplex_scale, xatol=cfg.xatol,
                                 fatol=cfg.fatol, maxfev=cfg.maxfev)
        trace.append(new, q_val)
        step = max(abs(a - b) for a, b in zip(new, theta))
        theta = new
        log.debug("EM iteration %d: %s Q=%.6f step=%.2e", it, theta, q_val, step)
        if step < cfg.tol:
            converged = True
            break
    if not converged:
        msg = f"EM did not converge within {cfg.max_iters} iterations"
        log.warning(msg)
        warnings.append(msg)

    model = LifetimeModel(family, theta)
    p = 2
    info = cov = None
    se = np.full(p, math.nan)
    ci = np.full((p, 2), math.nan)
    el = {"value": _safe_mean(model), "se": math.nan, "ci": [math.nan, math.nan]}
    try:
        info, cov = louis_information(fleet, model, cfg.louis_L or cfg.L, seed=cfg.seed, backend=cfg.backend,
                                      arrays=arrays, weighting=cfg.weighting)
        se = np.sqrt(np.diag(cov))
        ci = confidence_interval(np.array(model.params), cov, cfg.level)
        if math.isfinite(el["value"]):
            v, s, bounds = delta_method(model, cov, "expected_lifetime", cfg.level)
            el = {"value": v, "se": s, "ci": list(bounds)}
    except SingularInformationError as exc:
        msg = f"information matrix unusable ({exc}); intervals suppressed"
        log.warning(msg)
        warnings.append(msg)
        info = cov = None

    exact = None
    if cfg.exact_budget:
        try:
            exact = exact_log_likelihood(fleet, model, EnumerationBudget(cfg.exact_budget), backend=cfg.backend,
                                         arrays=arrays)
        except BudgetExceededError:
            exact = None

    return FitReport(
        model=model,
        se=se,
        ci=ci,
        level=cfg.level,
        cov=cov,
        information=info,
        expected_lifetime=el,
        criteria=info_criteria(p, fleet.n, q_val),
        trace=trace,
        q_final=q_val,
        converged=converged,
        n_iter=it,
        n=fleet.n,
        exact_log_lik=exact,
        warnings=warnings,
    )


def _safe_mean(model):
    try:
        return expected_lifetime(model)
    except ValueError:
        return math.nan


# ---------------------------------------------------------------------------
# derivatives


def _fd_step(theta):
    return 1e-5 * (1.0 + np.abs(np.asarray(theta, dtype=float)))


def duration_derivatives(family: Family, theta, x, kind: str):
    """Gradient (N, 2) and Hessian (N, 2, 2) of log f(x) or log R(x) in theta.

    Weibull uses closed forms, other families central differences.
    """
    family = Family.parse(family)
    x = np.asarray(x, dtype=float)
    if family is Family.WEIBULL:
        return _weibull_duration_derivs(theta, x, kind)
    fn = logpdf if kind == "pdf" else logsf
    th = np.asarray(theta, dtype=float)
    h = _fd_step(th)
    f0 = fn(family, th, x)
    grad = np.empty(x.shape + (2,))
    hess = np.empty(x.shape + (2, 2))
    e = np.eye(2)
    fp = [fn(family, th + h[j] * e[j], x) for j in range(2)]
    fm = [fn(family, th - h[j] * e[j], x) for j in range(2)]
    for j in range(2):
        grad[..., j] = (fp[j] - fm[j]) / (2 * h[j])
        hess[..., j, j] = (fp[j] - 2 * f0 + fm[j]) / h[j] ** 2
    d = (fn(family, th + h * [1, 1], x) - fn(family, th + h * [1, -1], x)
         - fn(family, th + h * [-1, 1], x) + fn(family, th - h, x)) / (4 * h[0] * h[1])
    hess[..., 0, 1] = hess[..., 1, 0] = d
    return grad, hess


def _weibull_duration_derivs(theta, x, kind):
    b, eta = theta
    lz = np.log(x / eta)
    zb = np.exp(b * lz)
    grad = np.empty(x.shape + (2,))
    hess = np.empty(x.shape + (2, 2))
    # log R = -z^b
    grad[..., 0] = -zb * lz
    grad[..., 1] = b / eta * zb
    hess[..., 0, 0] = -zb * lz * lz
    hess[..., 0, 1] = zb / eta * (1.0 + b * lz)
    hess[..., 1, 1] = -b * (b + 1.0) / eta**2 * zb
    if kind == "pdf":
        grad[..., 0] += 1.0 / b + lz
        grad[..., 1] += -b / eta
        hess[..., 0, 0] += -1.0 / b**2
        hess[..., 0, 1] += -1.0 / eta
        hess[..., 1, 1] += b / eta**2
    hess[..., 1, 0] = hess[..., 0, 1]
    return grad, hess


def weibull_system_derivatives(history: EventHistory, d, beta: float, eta: float, m: int):
    """Closed-form score and Hessian of one system's augmented Weibull log-likelihood.

    Written in the aggregated form (sums of x**beta, log(x) * x**beta, ...)
    over renewal gaps ``x`` and censored remainders. Returns ``(grad, hess)``
    ordered (beta, eta).
    """
    dec = decompose(history, d, m)
    r = history.r
    v = dec.v
    tau = history.tau
    gaps = np.array([g for gs in dec.gaps.values() for g in gs]) if v else np.zeros(0)
    rem = np.array(list(dec.remainders.values())) if v else np.zeros(0)
    le = math.log(eta)
    ie = 1.0 / eta
    ieb = ie**beta
    # remainders can be zero only in degenerate inputs; 0 * log 0 -> 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lrem = np.where(rem > 0, np.log(np.where(rem > 0, rem, 1.0)), 0.0)
    lg = np.log(gaps)
    s_pow = np.sum(gaps**beta) + np.sum(rem**beta)
    s_log = np.sum(lg * gaps**beta) + np.sum(lrem * rem**beta)
    s_log2 = np.sum(lg**2 * gaps**beta) + np.sum(lrem**2 * rem**beta)
    s_lg = np.sum(lg)
    free = m - v
    tb = tau**beta
    lt = math.log(tau)
    ind = 0.0 if v == 0 else 1.0

    d_b = ind * (r / beta + s_lg - r * le + le * ieb * s_pow - ieb * s_log) + ieb * free * tb * (le - lt)
    d_e = ind * (-r / eta - r * (beta - 1) / eta + beta * ie ** (beta + 1) * s_pow) \
        + beta * ie ** (beta + 1) * free * tb
    d_bb = ind * (-r / beta**2 - le**2 * ieb * s_pow + 2 * le * ieb * s_log - ieb * s_log2) \
        + free * ieb * tb * (-(lt**2) + 2 * lt * le - le**2)
    d_be = ind * (-r / eta + ie ** (beta + 1) * (1 - beta * le) * s_pow + beta * ie ** (beta + 1) * s_log) \
        + free * ie ** (beta + 1) * tb * (1 - beta * le + beta * lt)
    d_ee = ind * (beta * r / eta**2 - beta * (beta + 1) * ie ** (beta + 2) * s_pow) \
        - beta * (beta + 1) * ie ** (beta + 2) * free * tb
    return np.array([d_b, d_e]), np.array([[d_bb, d_be], [d_be, d_ee]])


# ---------------------------------------------------------------------------
# Louis information


def louis_information(fleet: Fleet, model_hat: LifetimeModel, L: int = 1000, seed=0, backend=None,
                      arrays: FleetArrays | None = None, batch: SampleBatch | None = None,
                      weighting: str = "importance"):
    """Observed information by Louis' identity from ``L`` sampled assignments.

    Expectations over the assignments use the same replicate weights as the
    E-step (see ``replicate_weights``).

    Returns ``(information, inverse)``; raises ``SingularInformationError`` when
    the matrix cannot be inverted or is not positive definite.
    """
    arrays = arrays or FleetArrays(fleet)
    fam, th = model_hat.family, model_hat.params
    if batch is None:
        batch = sample_batch(arrays, model_hat, L, rng_stream(seed, 1), backend=backend)
    w = replicate_weights(arrays, batch, model_hat, weighting, backend)
    kern = _backend.get(backend)
    n, R = arrays.n, arrays.R
    p = 2

    gf, hf = duration_derivatives(fam, th, arrays.pair_dur, "pdf")
    gc, hc = duration_derivatives(fam, th, arrays.cens_dur, "sf")
    g_tab = np.zeros((n, R + 1, R + 1, p))
    h_tab = np.zeros((n, R + 1, R + 1, p, p))
    g_tab[arrays.pair_i, arrays.pair_a, arrays.pair_k] = gf
    h_tab[arrays.pair_i, arrays.pair_a, arrays.pair_k] = hf
    gc_tab = np.zeros((n, R + 1, p))
    hc_tab = np.zeros((n, R + 1, p, p))
    gc_tab[arrays.cens_i, arrays.cens_a] = gc
    hc_tab[arrays.cens_i, arrays.cens_a] = hc

    parents = np.ascontiguousarray(batch.parents, dtype=np.int32)
    Cs = kern.censor_counts_per_sample(parents, arrays.r, int(arrays.m))  # (n, L, R+1)
    scores = np.einsum("ila,iap->ilp", Cs, gc_tab)
    if R:
        valid = parents >= 0
        i_idx, l_idx, k0 = np.nonzero(valid)
        np.add.at(scores, (i_idx, l_idx), g_tab[i_idx, parents[valid], k0 + 1])

    G, C = kern.tally_weighted(parents, arrays.r, int(arrays.m), w)
    I1 = -(np.einsum("iak,iakpq->pq", G, h_tab) + np.einsum("ia,iapq->pq", C, hc_tab))
    sbar = np.einsum("il,ilp->ip", w, scores)
    II = sbar.T @ sbar
    III = -np.einsum("il,ilp,ilq->pq", w, scores, scores)
    info = I1 + II + III
    info = 0.5 * (info + info.T)
    if not np.all(np.isfinite(info)):
        raise SingularInformationError("non-finite information matrix")
    try:
        inv = np.linalg.solve(info, np.eye(p))
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError(str(exc)) from None
    inv = 0.5 * (inv + inv.T)
    if np.any(np.linalg.eigvalsh(info) <= 0):
        raise SingularInformationError("information matrix is not positive definite")
    return info, inv


# ---------------------------------------------------------------------------
# intervals and criteria


def _z(level):
    return float(special.ndtri(0.5 + 0.5 * level))


def confidence_interval(estimate, information_inverse, level: float = 0.95) -> np.ndarray:
    """Wald intervals, one row ``(lower, upper)`` per parameter."""
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    var = np.diag(np.atleast_2d(np.asarray(information_inverse, dtype=float))).copy()
    if np.any(var < 0):
        raise ValueError("negative variance on the diagonal of the inverse information")
    if np.any(var == 0):
        log.warning("zero variance: degenerate confidence interval")
    half = _z(level) * np.sqrt(var)
    return np.column_stack([est - half, est + half])


def _derived(g):
    if callable(g):
        return g
    if g == "expected_lifetime":
        return expected_lifetime
    if isinstance(g, tuple) and g[0] == "reliability":
        t = float(g[1])
        from .distributions import reliability

        return lambda model: float(reliability(model, t))
    raise ValueError(f"unknown derived quantity {g!r}")


def delta_method(model_hat: LifetimeModel, information_inverse, g, level: float = 0.95):
    """Value, standard error and Wald interval of a derived quantity ``g(model)``."""
    fn = _derived(g)
    th = np.array(model_hat.params)
    h = _fd_step(th)
    grad = np.empty(2)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h[j]
        up = fn(LifetimeModel(model_hat.family, th + e))
        dn = fn(LifetimeModel(model_hat.family, th - e))
        grad[j] = (up - dn) / (2 * h[j])
    cov = np.asarray(information_inverse, dtype=float)
    var = float(grad @ cov @ grad)
    if var < 0:
        if var < -1e-12:
            raise ValueError("negative delta-method variance")
        var = 0.0
    value = float(fn(model_hat))
    se = math.sqrt(var)
    half = _z(level) * se
    return value, se, (value - half, value + half)


def info_criteria(p: int, n: int, l: float) -> dict:
    """AIC, AICc, BIC, HQIC and CAIC with natural logarithms.

    AICc is NaN when n <= p + 1.
    """
    ln = math.log(n) if n > 0 else math.nan
    aic = 2 * p - 2 * l
    aicc = aic + 2 * p * (p + 1) / (n - p - 1) if n > p + 1 else math.nan
    if p == 0:
        bic, hqic, caic = -2 * l, -2 * l, -2 * l
    else:
        bic = p * ln - 2 * l
        hqic = 2 * p * math.log(ln) - 2 * l
        caic = p * (ln + 1) - 2 * l
    return {"AIC": aic, "AICc": aicc, "BIC": bic, "HQIC": hqic, "CAIC": caic}


def default_grid(model: LifetimeModel, points: int = 200) -> np.ndarray:
    """Equally spaced times from 0 to the model's 99th percentile."""
    return np.linspace(0.0, float(quantile(model, 0.99)), points)
