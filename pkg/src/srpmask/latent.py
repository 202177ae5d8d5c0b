"""Latent socket assignments of masked failures.

An assignment ``d`` maps the k-th failure of a system to the socket that
caused it (labels 1..m). Given ``d`` the system likelihood factorizes into
per-socket renewal gaps, the censored remainder of every failing socket and
R(tau) for each socket that never failed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .data import EventHistory, Fleet
from .distributions import LifetimeModel, logpdf, logsf

__all__ = [
    "DegenerateWeightsError",
    "GapDecomposition",
    "FleetArrays",
    "SampleBatch",
    "validate_assignment",
    "decompose",
    "augmented_log_lik",
    "conditional_probs",
    "sample_assignment",
    "sample_batch",
    "parents_from_labels",
    "batch_log_lik",
    "proposal_log_prob",
]

log = logging.getLogger(__name__)


class DegenerateWeightsError(ArithmeticError):
    """Every candidate socket has zero gap density."""


@dataclass(frozen=True)
class GapDecomposition:
    gaps: dict[int, tuple[float, ...]]
    remainders: dict[int, float]
    v: int
    free: int

    @property
    def n_failures(self) -> int:
        return sum(len(g) for g in self.gaps.values())


def validate_assignment(history: EventHistory, d, m: int) -> tuple[int, ...]:
    d = tuple(int(j) for j in d)
    if len(d) != history.r:
        raise ValueError(f"assignment has length {len(d)}, history has {history.r} failures")
    if any(j < 1 or j > m for j in d):
        raise ValueError(f"socket labels must lie in 1..{m}")
    return d


def decompose(history: EventHistory, d, m: int) -> GapDecomposition:
    """Per-socket gap lists and censored remainders implied by ``d``."""
    d = validate_assignment(history, d, m)
    times: dict[int, list[float]] = {}
    for t, j in zip(history.times, d):
        times.setdefault(j, []).append(t)
    gaps = {}
    rem = {}
    for j, ts in times.items():
        prev = [0.0] + ts[:-1]
        gaps[j] = tuple(b - a for a, b in zip(prev, ts))
        rem[j] = history.tau - ts[-1]
    return GapDecomposition(gaps, rem, len(times), m - len(times))


def augmented_log_lik(history: EventHistory, d, model: LifetimeModel, m: int) -> float:
    """Log-likelihood of one system with its failures assigned by ``d``."""
    dec = decompose(history, d, m)
    fam, th = model.family, model.params
    total = dec.free * float(logsf(fam, th, history.tau))
    if dec.v:
        gaps = np.concatenate([np.asarray(g) for g in dec.gaps.values()])
        total += float(np.sum(logpdf(fam, th, gaps)))
        total += float(np.sum(logsf(fam, th, np.fromiter(dec.remainders.values(), float))))
    if math.isnan(total):
        return -math.inf
    return total


def parents_from_labels(d) -> tuple[int, ...]:
    """Index of the previous failure on the same socket (0 for none), 1-based."""
    last: dict[int, int] = {}
    out = []
    for k, j in enumerate(d, start=1):
        out.append(last.get(j, 0))
        last[j] = k
    return tuple(out)


def conditional_probs(history: EventHistory, model: LifetimeModel, prefix, k: int, m: int) -> np.ndarray:
    """Probability that failure ``k`` (1-based) came from each socket.

    The weight of socket j is f(t_k - s_j), with s_j the time of the last
    failure assigned to j by ``prefix`` (0 if none).
    """
    if not 1 <= k <= history.r:
        raise ValueError(f"k must lie in 1..{history.r}")
    prefix = tuple(int(j) for j in prefix)
    if len(prefix) != k - 1 or any(j < 1 or j > m for j in prefix):
        raise ValueError("prefix must assign the first k-1 failures to sockets 1..m")
    s = np.zeros(m)
    for t, j in zip(history.times, prefix):
        s[j - 1] = t
    lw = np.asarray(logpdf(model.family, model.params, history.times[k - 1] - s), dtype=float)
    mx = lw.max()
    if not np.isfinite(mx):
        raise DegenerateWeightsError(f"all socket weights vanish at failure {k}")
    w = np.exp(lw - mx)
    return w / w.sum()


class FleetArrays:
    """Padded array view of a fleet used by the batch kernels.

    ``t[i, 0] = 0`` and ``t[i, k]`` is the k-th failure time; ``pair_*`` index
    every gap candidate (a < k) and ``cens_*`` every censored remainder
    candidate tau - t_a (a = 0..r_i).
    """

    def __init__(self, fleet: Fleet):
        self.fleet = fleet
        self.m = fleet.m
        self.n = fleet.n
        self.r = np.array([s.r for s in fleet.systems], dtype=np.int32)
        self.R = int(self.r.max()) if self.n else 0
        R = self.R
        self.t = np.full((self.n, R + 1), np.nan)
        self.t[:, 0] = 0.0
        for i, s in enumerate(fleet.systems):
            self.t[i, 1 : s.r + 1] = s.times
        self.tau = np.array([s.tau for s in fleet.systems], dtype=float)
        ii, aa, kk = [], [], []
        for i, ri in enumerate(self.r):
            a, k = np.triu_indices(ri + 1, 1)
            ii.append(np.full(a.size, i))
            aa.append(a)
            kk.append(k)
        cat = lambda xs: np.concatenate(xs).astype(np.intp) if xs else np.zeros(0, np.intp)
        self.pair_i, self.pair_a, self.pair_k = cat(ii), cat(aa), cat(kk)
        self.pair_dur = self.t[self.pair_i, self.pair_k] - self.t[self.pair_i, self.pair_a]
        self.cens_i = cat([np.full(ri + 1, i) for i, ri in enumerate(self.r)])
        self.cens_a = cat([np.arange(ri + 1) for ri in self.r])
        self.cens_dur = self.tau[self.cens_i] - self.t[self.cens_i, self.cens_a]

    def logf_table(self, model: LifetimeModel) -> np.ndarray:
        out = np.full((self.n, self.R + 1, self.R + 1), -np.inf)
        if self.pair_dur.size:
            vals = logpdf(model.family, model.params, self.pair_dur)
            out[self.pair_i, self.pair_a, self.pair_k] = np.where(np.isnan(vals), -np.inf, vals)
        return out

    def logR_table(self, model: LifetimeModel) -> np.ndarray:
        out = np.zeros((self.n, self.R + 1))
        if self.cens_dur.size:
            out[self.cens_i, self.cens_a] = logsf(model.family, model.params, self.cens_dur)
        return out

    def weighted(self, G, C, scale=1.0):
        """Collapse count tables to (event durations, weights, censored durations, weights)."""
        wg = G[self.pair_i, self.pair_a, self.pair_k] * scale
        wc = C[self.cens_i, self.cens_a] * scale
        keep_g = wg != 0
        keep_c = wc != 0
        return self.pair_dur[keep_g], wg[keep_g], self.cens_dur[keep_c], wc[keep_c]


@dataclass
class SampleBatch:
    """L sampled assignments per system (labels 0-based, -1 padded)."""

    labels: np.ndarray
    parents: np.ndarray
    logq: np.ndarray
    n_degenerate: int = 0

    @property
    def L(self) -> int:
        return self.labels.shape[1]

    def assignments(self, i: int, r: int) -> list[tuple[int, ...]]:
        """Assignments of system ``i`` as 1-based label tuples."""
        return [tuple(int(j) + 1 for j in row[:r]) for row in self.labels[i]]


def sample_batch(arrays: FleetArrays, model: LifetimeModel, L: int, rng=None, uniforms=None,
                 backend=None) -> SampleBatch:
    """Draw ``L`` assignments for every system from the sequential conditionals."""
    kern = _backend.get(backend)
    if uniforms is None:
        uniforms = rng.random((arrays.n, L, arrays.R))
    lf = np.ascontiguousarray(arrays.logf_table(model))
    labels, parents, logq, n_deg = kern.sample_parents(lf, arrays.r, int(arrays.m), np.ascontiguousarray(uniforms))
    if n_deg:
        log.warning("%d sampling steps had vanishing weights; used uniform sockets", n_deg)
    return SampleBatch(labels, parents, logq, n_deg)


def sample_assignment(history: EventHistory, model: LifetimeModel, m: int, rng, backend=None) -> tuple[int, ...]:
    """One assignment drawn failure by failure from ``conditional_probs``."""
    arrays = FleetArrays(Fleet((history,), m))
    batch = sample_batch(arrays, model, 1, rng, backend=backend)
    return batch.assignments(0, history.r)[0]


def batch_log_lik(arrays: FleetArrays, batch: SampleBatch, model: LifetimeModel, backend=None) -> np.ndarray:
    """Augmented log-likelihood of every (system, replicate) pair, shape (n, L)."""
    return log_lik_from_tables(arrays, batch.parents, arrays.logf_table(model), arrays.logR_table(model), backend)


def log_lik_from_tables(arrays: FleetArrays, parents: np.ndarray, lf: np.ndarray, lR: np.ndarray,
                        backend=None) -> np.ndarray:
    kern = _backend.get(backend)
    n, L, R = parents.shape
    out = np.zeros((n, L))
    if R:
        valid = parents >= 0
        i_idx, l_idx, k0 = np.nonzero(valid)
        np.add.at(out, (i_idx, l_idx), lf[i_idx, parents[valid], k0 + 1])
    Cs = kern.censor_counts_per_sample(np.ascontiguousarray(parents, dtype=np.int32), arrays.r, int(arrays.m))
    with np.errstate(invalid="ignore"):
        out += np.where(Cs != 0, Cs * lR[:, None, :], 0.0).sum(axis=-1)
    return out


def proposal_log_prob(arrays: FleetArrays, labels: np.ndarray, logf: np.ndarray) -> np.ndarray:
    """log q(d) of given assignments under the sequential conditionals.

    ``labels`` is (n, L, R) with 0-based sockets (-1 padded) and ``logf`` the
    gap table of the model defining q. Steps with vanishing weights count as
    uniform, as in the sampler.
    """
    n, L, R = labels.shape
    m = arrays.m
    out = np.zeros((n, L))
    last = np.zeros((n, L, m), dtype=np.intp)
    ii = np.arange(n)[:, None, None]
    for k in range(1, R + 1):
        active = arrays.r[:, None] >= k
        v = logf[ii, last, k]  # (n, L, m)
        mx = v.max(axis=2)
        deg = ~np.isfinite(mx)
        with np.errstate(invalid="ignore"):
            lse = mx + np.log(np.exp(v - mx[..., None]).sum(axis=2))
        sel = np.where(active, labels[:, :, k - 1], 0)
        chosen = np.take_along_axis(v, sel[..., None], axis=2)[..., 0]
        step = np.where(deg, -math.log(m), chosen - np.where(deg, 0.0, lse))
        out += np.where(active, step, 0.0)
        nl = np.take_along_axis(last, sel[..., None], axis=2)
        np.put_along_axis(last, sel[..., None], np.where(active[..., None], k, nl), axis=2)
    return out
