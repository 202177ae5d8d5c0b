"""Exact likelihood by summing over every socket assignment.

Each system with r failures admits m**r assignments. Their sum is computed
exactly by a forward recursion over the set of chain-end failures (labels
enter only through the multiplicity of fresh sockets), but feasibility is
still governed by the size of the assignment space: a fleet is accepted only
while the total number of configurations stays within the budget.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _backend
from ._optim import maximize
from .data import EventHistory, Fleet
from .distributions import Family, LifetimeModel
from .latent import FleetArrays

__all__ = [
    "DEFAULT_MAX_CONFIGS",
    "EnumerationBudget",
    "BudgetExceededError",
    "NonConvergenceError",
    "configuration_counts",
    "check_budget",
    "enumerate_assignments",
    "assignment_index",
    "system_log_likelihood",
    "exact_log_likelihood",
    "exact_mle",
    "exact_assignment_posterior",
]

log = logging.getLogger(__name__)

DEFAULT_MAX_CONFIGS = 10**7


class BudgetExceededError(RuntimeError):
    def __init__(self, system_id, configs, total, max_configs):
        self.system_id = system_id
        self.configs = configs
        self.total = total
        self.max_configs = max_configs
        super().__init__(
            f"enumeration needs {total} configurations (budget {max_configs}); "
            f"system {system_id} alone has {configs}"
        )


class NonConvergenceError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class EnumerationBudget:
    max_configs: int = DEFAULT_MAX_CONFIGS

    def __post_init__(self):
        if int(self.max_configs) < 1:
            raise ValueError("max_configs must be >= 1")


def configuration_counts(fleet: Fleet) -> list[int]:
    return [fleet.m ** s.r for s in fleet.systems]


def check_budget(fleet: Fleet, budget: EnumerationBudget | None = None) -> int:
    budget = budget or EnumerationBudget()
    counts = configuration_counts(fleet)
    total = sum(counts)
    if total > budget.max_configs:
        worst = int(np.argmax(counts))
        raise BudgetExceededError(fleet.systems[worst].id, counts[worst], total, budget.max_configs)
    return total


def enumerate_assignments(r: int, m: int) -> Iterator[tuple[int, ...]]:
    """All m**r assignments in little-endian mixed-radix order (d_1 varies fastest)."""
    d = [1] * r
    for _ in range(m**r):
        yield tuple(d)
        for k in range(r):
            if d[k] < m:
                d[k] += 1
                break
            d[k] = 1


def assignment_index(d, m: int) -> int:
    return sum((j - 1) * m**k for k, j in enumerate(d))


def system_log_likelihood(history: EventHistory, model: LifetimeModel, m: int, backend=None) -> float:
    """log of the sum over all m**r assignments of the augmented likelihood."""
    arrays = FleetArrays(Fleet((history,), m))
    kern = _backend.get(backend)
    return float(kern.fleet_loglik(arrays.logf_table(model), arrays.logR_table(model), arrays.r, m)[0])


def _fleet_terms(arrays: FleetArrays, model: LifetimeModel, backend=None) -> np.ndarray:
    kern = _backend.get(backend)
    lf = np.ascontiguousarray(arrays.logf_table(model))
    lR = np.ascontiguousarray(arrays.logR_table(model))
    return kern.fleet_loglik(lf, lR, arrays.r, int(arrays.m))


def exact_log_likelihood(fleet: Fleet, model: LifetimeModel, budget: EnumerationBudget | None = None,
                         backend=None, arrays: FleetArrays | None = None) -> float:
    check_budget(fleet, budget)
    arrays = arrays or FleetArrays(fleet)
    # fixed system order keeps the reduction deterministic
    return float(math.fsum(_fleet_terms(arrays, model, backend)))


def exact_mle(fleet: Fleet, family, init=None, budget: EnumerationBudget | None = None, *,
              maxfev: int = 4000, backend=None):
    """Maximize the exact likelihood with Nelder-Mead.

    Returns ``(model, log_lik)``.
    """
    family = Family.parse(family)
    check_budget(fleet, budget)
    init = tuple(init) if init is not None else (1.0, 1.0)
    if fleet.total_failures == 0:
        log.warning("fleet has no failures: the likelihood does not identify the parameters")
    arrays = FleetArrays(fleet)
    trace = []

    def objective(th):
        try:
            model = LifetimeModel(family, th)
        except ValueError:
            return -math.inf
        v = float(math.fsum(_fleet_terms(arrays, model, backend)))
        trace.append((th, v))
        return v

    start = objective(init)
    th, val, res = maximize(objective, family, init, maxfev=maxfev)
    if not res.success and res.nfev >= maxfev:
        raise NonConvergenceError(f"Nelder-Mead did not converge in {maxfev} evaluations", trace)
    if np.isfinite(start) and val < start:
        th, val = init, start
    return LifetimeModel(family, th), val


def exact_assignment_posterior(history: EventHistory, model: LifetimeModel, m: int,
                               max_configs: int = 10**6) -> dict[tuple[int, ...], float]:
    """Exact posterior probability of every assignment of one system."""
    r = history.r
    V = m**r
    if V > max_configs:
        raise BudgetExceededError(history.id, V, V, max_configs)
    if r == 0:
        return {(): 1.0}
    arrays = FleetArrays(Fleet((history,), m))
    lf = arrays.logf_table(model)[0]
    lR = arrays.logR_table(model)[0]
    idx = np.arange(V)
    labels = (idx[:, None] // (m ** np.arange(r))[None, :]) % m
    last = np.zeros((V, m), dtype=np.intp)
    ll = np.zeros(V)
    is_parent = np.zeros((V, r + 1), dtype=bool)
    for k in range(r):
        j = labels[:, k]
        par = last[idx, j]
        ll += lf[par, k + 1]
        is_parent[idx, par] = True
        last[idx, j] = k + 1
    v = (last > 0).sum(axis=1)
    ends = ~is_parent[:, 1:]
    ll += np.where(ends, lR[1:], 0.0).sum(axis=1) + (m - v) * lR[0]
    top = ll.max()
    p = np.exp(ll - top)
    p /= p.sum()
    return {tuple(int(x) + 1 for x in row): float(q) for row, q in zip(labels, p)}
