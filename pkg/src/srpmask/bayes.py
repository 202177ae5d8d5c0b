"""Metropolis-within-Gibbs posterior sampling and posterior summaries.

Each iteration updates every system's socket assignment and then the
lifetime parameters by componentwise random-walk Metropolis on the free
(log) scale. The assignment update proposes a fresh draw from the
sequential conditionals; with ``assignment_update="mh"`` (default) it is
accepted with the independence-sampler ratio, which leaves the exact
conditional law of the assignments invariant, while ``"direct"`` accepts
every draw.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _backend
from ._optim import to_free, to_natural
from .data import Fleet
from .distributions import Family, LifetimeModel, expected_lifetime, logsf
from .enumeration import EnumerationBudget, _fleet_terms, check_budget
from .latent import FleetArrays, log_lik_from_tables, proposal_log_prob

__all__ = [
    "PriorComponent",
    "Prior",
    "McmcConfig",
    "PosteriorSample",
    "run_mwg",
    "posterior_summary",
    "posterior_reliability",
    "hpd_interval",
    "expected_znk_curve",
    "cpo_lpml",
    "gelman_rubin",
]

log = logging.getLogger(__name__)

ASSIGNMENT_UPDATES = ("mh", "direct")


@dataclass(frozen=True)
class PriorComponent:
    """``gamma`` with shape ``a`` and rate ``b``, or ``normal`` with mean ``a`` and sd ``b``."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("gamma", "normal"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if not (self.b > 0 and (self.kind == "normal" or self.a > 0)):
            raise ValueError("prior hyperparameters out of range")

    def logpdf(self, x: float) -> float:
        if self.kind == "gamma":
            if x <= 0:
                return -math.inf
            return self.a * math.log(self.b) - special.gammaln(self.a) + (self.a - 1) * math.log(x) - self.b * x
        z = (x - self.a) / self.b
        return -0.5 * z * z - math.log(self.b) - 0.5 * math.log(2 * math.pi)

    def sample(self, rng, size=None):
        if self.kind == "gamma":
            return rng.gamma(self.a, 1.0 / self.b, size)
        return rng.normal(self.a, self.b, size)


@dataclass(frozen=True)
class Prior:
    family: Family
    components: tuple[PriorComponent, PriorComponent]

    @classmethod
    def default(cls, family) -> "Prior":
        """Gamma(0.01, 0.01) (mean 1, variance 100) for positive parameters, N(0, 10^2) otherwise."""
        family = Family.parse(family)
        comps = tuple(PriorComponent("gamma", 0.01, 0.01) if pos else PriorComponent("normal", 0.0, 10.0)
                      for pos in family.positive)
        return cls(family, comps)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        for c, pos in zip(self.components, self.family.positive):
            if pos and c.kind != "gamma":
                raise ValueError("positive parameters need a prior on (0, inf)")

    def log_density(self, theta) -> float:
        return float(sum(c.logpdf(x) for c, x in zip(self.components, theta)))


@dataclass
class McmcConfig:
    B: int = 20000
    burn_in: int = 10000
    thin: int = 10
    n_chains: int = 4
    seed: int | None = 0
    proposal_scale: tuple[float, float] = (0.1, 0.1)
    adapt: bool = True
    adapt_window: int = 100
    assignment_update: str = "mh"
    init: tuple[float, float] | None = None
    # sd of the normal jitter (free scale) applied to ``init`` for each chain
    start_spread: float = 0.5
    keep_assignments: bool = False
    threads: int = 1
    backend: str | None = None

    def __post_init__(self):
        if not 0 <= self.burn_in < self.B:
            raise ValueError("need 0 <= burn_in < B")
        if self.thin < 1 or self.n_chains < 1:
            raise ValueError("thin and n_chains must be >= 1")
        if self.n_retained < 100:
            raise ValueError(f"only {self.n_retained} retained draws; need at least 100")
        if self.assignment_update not in ASSIGNMENT_UPDATES:
            raise ValueError(f"assignment_update must be one of {ASSIGNMENT_UPDATES}")
        if any(s <= 0 for s in self.proposal_scale):
            raise ValueError("proposal scales must be positive")

    @property
    def n_retained(self) -> int:
        return (self.B - self.burn_in) // self.thin


@dataclass
class PosteriorSample:
    family: Family
    draws: np.ndarray  # (chains, n_p, 2)
    acceptance: np.ndarray  # (chains, 2)
    assignment_acceptance: np.ndarray  # (chains,)
    loglik: np.ndarray  # (chains, n_p, n) augmented per-system contributions
    labels: np.ndarray | None = None  # (chains, n_p, n, R) when kept
    flags: list = field(default_factory=list)
    proposal_scale: np.ndarray | None = None

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_p(self) -> int:
        return self.draws.shape[1]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("chain", "draw") + self.family.param_names)
        for c in range(self.n_chains):
            for k, th in enumerate(self.draws[c]):
                w.writerow((c, k, repr(float(th[0])), repr(float(th[1]))))
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
        return text


def _log_jacobian(family: Family, theta) -> float:
    # density of x = log(theta) picks up a factor theta
    return float(sum(math.log(t) for t, pos in zip(theta, family.positive) if pos))


def _augmented(family, ev_x, ev_w, c_x, c_w):
    from .em import _weighted_objective

    return _weighted_objective(family, ev_x, ev_w, c_x, c_w)


def _chain(args):
    fleet, family, prior, cfg, chain = args
    from .distributions import rng_stream

    rng = rng_stream(cfg.seed, chain)
    kern = _backend.get(cfg.backend)
    arrays = FleetArrays(fleet)
    n, R, m = arrays.n, arrays.R, int(arrays.m)
    r = arrays.r

    init = cfg.init if cfg.init is not None else (1.0, 1.0)
    x = to_free(family, init) + cfg.start_spread * rng.standard_normal(2)
    theta = to_natural(family, x)
    scale = np.array(cfg.proposal_scale, dtype=float)

    def tables(th):
        model = LifetimeModel(family, th)
        return arrays.logf_table(model), arrays.logR_table(model)

    lf, lR = tables(theta)
    labels, parents, _, _ = kern.sample_parents(lf, r, m, rng.random((n, 1, R)))

    n_p = cfg.n_retained
    draws = np.empty((n_p, 2))
    contrib = np.empty((n_p, n))
    kept_labels = np.empty((n_p, n, R), dtype=np.int32) if cfg.keep_assignments else None
    acc = np.zeros(2)
    acc_win = np.zeros(2)
    acc_d = 0
    tries_d = 0
    ones = np.ones((n, 1))
    k_out = 0
    for t in range(cfg.B):
        # step 2: assignments
        if n and R:
            lab2, par2, lq2, _ = kern.sample_parents(lf, r, m, rng.random((n, 1, R)))
            if cfg.assignment_update == "direct":
                labels, parents = lab2, par2
            else:
                l_new = log_lik_from_tables(arrays, par2, lf, lR, cfg.backend)[:, 0]
                l_old = log_lik_from_tables(arrays, parents, lf, lR, cfg.backend)[:, 0]
                lq_old = proposal_log_prob(arrays, labels, lf)[:, 0]
                with np.errstate(invalid="ignore"):
                    log_a = (l_new - lq2[:, 0]) - (l_old - lq_old)
                log_a = np.where(np.isnan(log_a), np.where(np.isfinite(l_new), 0.0, -np.inf), log_a)
                take = np.log(rng.random(n)) < log_a
                labels = np.where(take[:, None, None], lab2, labels)
                parents = np.where(take[:, None, None], par2, parents)
                if t >= cfg.burn_in:
                    acc_d += int(take[r > 1].sum())
                    tries_d += int((r > 1).sum())

        # step 3: parameters given the assignments
        G, C = kern.tally_weighted(np.ascontiguousarray(parents, dtype=np.int32), r, m, ones)
        loglik = _augmented(family, *arrays.weighted(G, C))
        cur = loglik(theta) + prior.log_density(theta) + _log_jacobian(family, theta)
        moved = False
        for j in range(2):
            xp = x.copy()
            xp[j] += scale[j] * rng.standard_normal()
            try:
                thp = to_natural(family, xp)
                new = loglik(thp) + prior.log_density(thp) + _log_jacobian(family, thp)
            except (OverflowError, ValueError):
                new = -math.inf
            if math.log(rng.random()) < new - cur:
                x, theta, cur = xp, thp, new
                moved = True
                acc_win[j] += 1
                if t >= cfg.burn_in:
                    acc[j] += 1
        if moved:
            lf, lR = tables(theta)

        if cfg.adapt and t < cfg.burn_in and (t + 1) % cfg.adapt_window == 0:
            rate = acc_win / cfg.adapt_window
            scale = np.where(rate < 0.2, scale * 0.7, np.where(rate > 0.4, scale * 1.4, scale))
            acc_win[:] = 0

        if t >= cfg.burn_in and (t - cfg.burn_in + 1) % cfg.thin == 0:
            draws[k_out] = theta
            contrib[k_out] = log_lik_from_tables(arrays, parents, lf, lR, cfg.backend)[:, 0] if n else 0.0
            if kept_labels is not None:
                kept_labels[k_out] = labels[:, 0, :]
            k_out += 1

    post = cfg.B - cfg.burn_in
    return (draws, acc / post, acc_d / tries_d if tries_d else math.nan, contrib, kept_labels, scale)


def run_mwg(fleet: Fleet, family, prior: Prior | None = None, config: McmcConfig | None = None) -> PosteriorSample:
    """Run ``n_chains`` independent Metropolis-within-Gibbs chains."""
    family = Family.parse(family)
    prior = prior or Prior.default(family)
    if prior.family is not family:
        raise ValueError("prior family does not match")
    cfg = config or McmcConfig()
    jobs = [(fleet, family, prior, cfg, c) for c in range(cfg.n_chains)]
    if cfg.threads > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.threads, cfg.n_chains)) as pool:
            res = list(pool.map(_chain, jobs))
    else:
        res = [_chain(j) for j in jobs]
    draws = np.stack([x[0] for x in res])
    acc = np.stack([x[1] for x in res])
    flags = []
    for c, rates in enumerate(acc):
        for name, a in zip(family.param_names, rates):
            if a < 0.01 or a > 0.99:
                msg = (f"chain {c}: acceptance rate {a:.3f} for {name} is pathological; "
                       f"retune proposal_scale (currently {cfg.proposal_scale})")
                log.warning(msg)
                flags.append(msg)
    labels = np.stack([x[4] for x in res]) if cfg.keep_assignments else None
    return PosteriorSample(family, draws, acc, np.array([x[2] for x in res]), np.stack([x[3] for x in res]),
                           labels, flags, np.stack([x[5] for x in res]))


# ---------------------------------------------------------------------------
# summaries


def hpd_interval(draws, level: float = 0.95) -> tuple[float, float]:
    """Shortest interval containing ``ceil(level * n)`` of the sorted draws."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("no draws")
    k = min(n, max(1, math.ceil(level * n)))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def _summ(x, level):
    x = np.asarray(x, dtype=float)
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "hpd": list(hpd_interval(x, level))}


def _mean_draws(sample: PosteriorSample) -> np.ndarray:
    th = sample.pooled()
    out = np.empty(len(th))
    for k, p in enumerate(th):
        out[k] = expected_lifetime(LifetimeModel(sample.family, tuple(p)))
    return out


def _reliability_draws(sample: PosteriorSample, grid) -> np.ndarray:
    th = sample.pooled()
    g = np.asarray(grid, dtype=float)
    return np.exp(logsf(sample.family, (th[:, 0:1], th[:, 1:2]), g[None, :]))


def posterior_reliability(sample: PosteriorSample, grid) -> np.ndarray:
    """Posterior mean of R(t) at each grid time."""
    return _reliability_draws(sample, grid).mean(axis=0)


def posterior_summary(sample: PosteriorSample, level: float = 0.95, grid=None) -> dict:
    """Mean, SD and HPD interval of each parameter, E(Y) and (optionally) R(t)."""
    th = sample.pooled()
    if th.shape[0] < 100:
        raise ValueError("need at least 100 retained draws")
    out = {"level": level, "n_draws": int(th.shape[0])}
    for j, name in enumerate(sample.family.param_names):
        out[name] = _summ(th[:, j], level)
    try:
        out["expected_lifetime"] = _summ(_mean_draws(sample), level)
    except ValueError:
        out["expected_lifetime"] = None
    if grid is not None:
        rd = _reliability_draws(sample, grid)
        rows = []
        for t, col in zip(np.asarray(grid, dtype=float), rd.T):
            lo, hi = hpd_interval(col, level)
            rows.append([float(t), float(col.mean()), lo, hi])
        out["reliability"] = rows
    return out


def expected_znk_curve(sample: PosteriorSample, k_max: int, level: float = 0.95) -> np.ndarray:
    """Rows ``(k, mean, hpd_lower, hpd_upper)`` of E(Z_k) = k E(Y), k = 0..k_max."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ey = _mean_draws(sample)
    if not np.all(np.isfinite(ey)):
        raise ValueError("expected lifetime is undefined for some draws")
    mean = float(ey.mean())
    lo, hi = hpd_interval(ey, level)
    k = np.arange(k_max + 1, dtype=float)
    # per-draw E(Z_k) is linear in k, so are its mean and HPD bounds
    return np.column_stack([k, k * mean, k * lo, k * hi])


def cpo_lpml(sample: PosteriorSample, fleet: Fleet | None = None, marginal: bool = False,
             budget: EnumerationBudget | None = None):
    """Per-system CPO (harmonic mean of likelihood contributions) and LPML.

    By default the contributions are the augmented ones stored with the
    draws. ``marginal=True`` instead sums each system's likelihood over all
    assignments at every retained parameter draw (needs ``fleet`` and a
    feasible enumeration budget).
    """
    if marginal:
        if fleet is None:
            raise ValueError("the marginal variant needs the fleet")
        check_budget(fleet, budget)
        arrays = FleetArrays(fleet)
        ll = np.array([_fleet_terms(arrays, LifetimeModel(sample.family, tuple(p))) for p in sample.pooled()])
    else:
        ll = sample.loglik.reshape(-1, sample.loglik.shape[-1])
    floor = math.log(np.finfo(float).tiny * np.finfo(float).eps)
    bad = ~np.isfinite(ll) | (ll < floor)
    if bad.any():
        log.warning("%d draw contributions are numerically zero; floored", int(bad.sum()))
        ll = np.where(bad, floor, ll)
    # log CPO_i = -log mean_k exp(-ll_ik)
    log_cpo = -(special.logsumexp(-ll, axis=0) - math.log(ll.shape[0]))
    return np.exp(log_cpo), float(math.fsum(log_cpo))


def gelman_rubin(chains) -> np.ndarray:
    """Potential scale reduction factor per parameter.

    ``chains`` has shape (n_chains, n_draws) or (n_chains, n_draws, p).
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    c, n = x.shape[:2]
    if c < 2:
        raise ValueError("need at least two chains")
    if n < 10:
        raise ValueError("need at least 10 draws per chain")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    V = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(V / W)
    out = np.where((W == 0) & (B == 0), 1.0, out)
    return out
