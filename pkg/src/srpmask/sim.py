"""Fleet simulation, reliability MAE and the replicated scenario runner."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import EventHistory, Fleet
from .distributions import (
    Family,
    LifetimeModel,
    moment_match,
    quantile,
    reliability,
    rng_stream,
    sample,
    sample_truncated_below,
)
from .enumeration import BudgetExceededError, EnumerationBudget, check_budget, exact_mle

__all__ = [
    "MODES",
    "Scenario",
    "SimulatedFleet",
    "generate_fleet",
    "mae",
    "default_grid",
    "ReplicateResult",
    "run_scenarios",
    "summarize",
    "load_grid",
    "write_replicates_csv",
    "write_summary_csv",
]

log = logging.getLogger(__name__)

MODES = ("renewal", "paper-literal")
ESTIMATORS = ("em", "bayes", "enum")
CENSOR_VARIANCE = 0.05
COMPONENT_MEAN, COMPONENT_VARIANCE = 7.0, 4.0


@dataclass(frozen=True)
class Scenario:
    """One cell of a simulation grid.

    ``component_model`` defaults to the Weibull with mean 7 and variance 4 and
    ``censor_model`` to the Weibull with mean ``m_c`` and variance 0.05.
    """

    n: int
    m: int
    m_c: float
    component_model: LifetimeModel | None = None
    censor_model: LifetimeModel | None = None
    replicates: int = 1
    seed: int = 0
    mode: str = "renewal"
    id: str | None = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.replicates < 1:
            raise ValueError("n, m and replicates must be >= 1")
        if not self.m_c > 0:
            raise ValueError("m_c must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.component_model is None:
            object.__setattr__(self, "component_model", moment_match("weibull", COMPONENT_MEAN, COMPONENT_VARIANCE))
        if self.censor_model is None:
            object.__setattr__(self, "censor_model", moment_match("weibull", self.m_c, CENSOR_VARIANCE))
        if self.id is None:
            object.__setattr__(self, "id", f"n{self.n}_m{self.m}_mc{self.m_c:g}")


@dataclass(frozen=True)
class SimulatedFleet:
    """Masked fleet plus the socket labels that generated it (kept apart)."""

    fleet: Fleet
    truth: tuple[tuple[int, ...], ...]

    def truth_json(self) -> str:
        return json.dumps({"systems": [{"id": s.id, "d": list(d)} for s, d in zip(self.fleet.systems, self.truth)]},
                          indent=1)


def generate_fleet(scenario: Scenario, rng: np.random.Generator) -> SimulatedFleet:
    """Simulate ``scenario.n`` systems of ``scenario.m`` independent sockets.

    In ``renewal`` mode each replacement starts a fresh lifetime; in
    ``paper-literal`` mode the next calendar failure of a socket is drawn
    from the lifetime law truncated below at the previous failure time.
    """
    n, m = scenario.n, scenario.m
    comp = scenario.component_model
    tau = np.asarray(sample(scenario.censor_model, rng, n), dtype=float)
    clock = np.zeros((n, m))
    alive = np.ones((n, m), dtype=bool)
    events: list[list[tuple[float, int]]] = [[] for _ in range(n)]
    while alive.any():
        ii, jj = np.nonzero(alive)
        if scenario.mode == "renewal":
            nxt = clock[ii, jj] + np.asarray(sample(comp, rng, ii.size), dtype=float)
        else:
            nxt = np.atleast_1d(sample_truncated_below(comp, clock[ii, jj], rng))
        hit = nxt < tau[ii]
        for i, j, t in zip(ii[hit], jj[hit], nxt[hit]):
            events[i].append((float(t), int(j) + 1))
        clock[ii, jj] = nxt
        alive[ii[~hit], jj[~hit]] = False
    systems, truth = [], []
    for i in range(n):
        ev = sorted(events[i])
        systems.append(EventHistory(tuple(t for t, _ in ev), float(tau[i]), str(i + 1)))
        truth.append(tuple(j for _, j in ev))
    return SimulatedFleet(Fleet(tuple(systems), m), tuple(truth))


def default_grid(model: LifetimeModel, points: int = 200) -> np.ndarray:
    """Equally spaced times from 0 to the 99th percentile of ``model``."""
    return np.linspace(0.0, float(quantile(model, 0.99)), points)


def mae(estimated, truth: LifetimeModel, grid) -> float:
    """Mean absolute difference between reliability curves on ``grid``.

    ``estimated`` is a LifetimeModel, a callable t -> R(t) or an array of
    curve values aligned with ``grid``.
    """
    g = np.asarray(grid, dtype=float)
    if g.size == 0:
        raise ValueError("grid must be non-empty")
    if isinstance(estimated, LifetimeModel):
        est = np.asarray(reliability(estimated, g), dtype=float)
    elif callable(estimated):
        est = np.asarray(estimated(g), dtype=float)
    else:
        est = np.asarray(estimated, dtype=float)
        if est.shape != g.shape:
            raise ValueError("curve values must align with the grid")
    return float(np.mean(np.abs(est - np.asarray(reliability(truth, g), dtype=float))))


# ---------------------------------------------------------------------------
# scenario runner


@dataclass
class ReplicateResult:
    scenario_id: str
    replicate: int
    estimator: str
    mae: float
    runtime_s: float
    status: str
    message: str = ""


def _child_seed(seed, *keys) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _fit_one(fleet, truth_model, estimator, family, seed, options):
    """Return (curve on grid, status)."""
    from .em import EmConfig, run_em

    grid = default_grid(truth_model)
    if estimator == "em":
        cfg = EmConfig(**{**options.get("em", {}), "seed": seed})
        rep = run_em(fleet, family, options.get("init"), cfg)
        return reliability(rep.model, grid), "ok" if rep.converged else "nonconverged"
    if estimator == "enum":
        budget = EnumerationBudget(options.get("max_configs", 10**7))
        model, _ = exact_mle(fleet, family, options.get("init"), budget)
        return reliability(model, grid), "ok"
    if estimator == "bayes":
        from .bayes import McmcConfig, Prior, posterior_reliability, run_mwg

        cfg = McmcConfig(**{**options.get("bayes", {}), "seed": seed})
        post = run_mwg(fleet, family, Prior.default(family), cfg)
        return posterior_reliability(post, grid), "ok" if not post.flags else "flagged"
    raise ValueError(f"unknown estimator {estimator!r}")


def _run_replicate(args):
    sc, rep, estimators, options = args
    sim = generate_fleet(sc, rng_stream(sc.seed, rep, 0))
    truth = sc.component_model
    family = options.get("family") or truth.family.value
    grid = default_grid(truth)
    out = []
    for k, est in enumerate(estimators):
        t0 = time.perf_counter()
        try:
            if est == "enum":
                check_budget(sim.fleet, EnumerationBudget(options.get("max_configs", 10**7)))
            curve, status = _fit_one(sim.fleet, truth, est, family, _child_seed(sc.seed, rep, k + 1), options)
            res = ReplicateResult(sc.id, rep, est, mae(curve, truth, grid), time.perf_counter() - t0, status)
        except BudgetExceededError as exc:
            res = ReplicateResult(sc.id, rep, est, math.nan, time.perf_counter() - t0, "budget_exceeded", str(exc))
        except Exception as exc:  # recorded, not fatal
            log.warning("scenario %s replicate %d estimator %s failed: %s", sc.id, rep, est, exc)
            res = ReplicateResult(sc.id, rep, est, math.nan, time.perf_counter() - t0, "failed", str(exc))
        out.append(res)
    return out


def run_scenarios(scenarios, estimators=("em",), *, options: dict | None = None, threads: int = 1):
    """Replicate every scenario and fit each estimator.

    Returns a list of ``ReplicateResult`` sorted by scenario order, replicate
    and estimator order. Results do not depend on ``threads``.
    """
    estimators = tuple(estimators)
    bad = set(estimators) - set(ESTIMATORS)
    if bad:
        raise ValueError(f"unknown estimators {sorted(bad)}")
    options = dict(options or {})
    jobs = [(sc, rep, estimators, options) for sc in scenarios for rep in range(sc.replicates)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_replicate, jobs))
    else:
        chunks = [_run_replicate(j) for j in jobs]
    return [r for chunk in chunks for r in chunk]


def summarize(results) -> list[dict]:
    """Per scenario and estimator: MAE quartiles and mean, status counts, mean runtime."""
    groups: dict[tuple[str, str], list[ReplicateResult]] = {}
    for r in results:
        groups.setdefault((r.scenario_id, r.estimator), []).append(r)
    rows = []
    for (sid, est), rs in groups.items():
        vals = np.array([r.mae for r in rs if math.isfinite(r.mae)])
        q = np.percentile(vals, [25, 50, 75]) if vals.size else [math.nan] * 3
        rows.append({
            "scenario_id": sid,
            "estimator": est,
            "replicates": len(rs),
            "n_ok": sum(r.status == "ok" for r in rs),
            "n_failed": sum(r.status == "failed" for r in rs),
            "n_nonconverged": sum(r.status in ("nonconverged", "flagged") for r in rs),
            "n_budget_exceeded": sum(r.status == "budget_exceeded" for r in rs),
            "mae_mean": float(vals.mean()) if vals.size else math.nan,
            "mae_q1": float(q[0]),
            "mae_median": float(q[1]),
            "mae_q3": float(q[2]),
            "runtime_mean_s": float(np.mean([r.runtime_s for r in rs])),
        })
    return rows


REPLICATE_COLUMNS = ("scenario_id", "replicate", "estimator", "mae", "runtime_s", "status")
# runtimes stay out of the summary file so that reruns are byte-identical
SUMMARY_COLUMNS = ("scenario_id", "estimator", "replicates", "n_ok", "n_failed", "n_nonconverged",
                   "n_budget_exceeded", "mae_mean", "mae_q1", "mae_median", "mae_q3")


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def write_replicates_csv(results, path_or_buf=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATE_COLUMNS)
    for r in results:
        w.writerow((r.scenario_id, r.replicate, r.estimator, _fmt(r.mae),
                    _fmt(r.runtime_s), r.status))
    return _emit(buf.getvalue(), path_or_buf)


def write_summary_csv(rows, path_or_buf=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow(tuple(_fmt(row[c]) for c in SUMMARY_COLUMNS))
    return _emit(buf.getvalue(), path_or_buf)


def _emit(text, path_or_buf):
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(os.fspath(path_or_buf), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def _model_from_doc(doc):
    if doc is None:
        return None
    return LifetimeModel(Family.parse(doc["family"]), tuple(float(x) for x in doc["params"]))


def load_grid(source) -> tuple[list[Scenario], tuple[str, ...], dict]:
    """Read a JSON grid: ``{"scenarios": [...], "estimators": [...], ...}``.

    Each scenario takes ``n, m, m_c`` and optionally ``replicates, seed, mode,
    id, component, censor`` (models as ``{"family": ..., "params": [a, b]}``).
    Remaining top-level keys (``em``, ``bayes``, ``max_configs``, ``family``,
    ``init``) are passed to the estimators.
    """
    if isinstance(source, dict):
        doc = source
    else:
        with open(os.fspath(source), encoding="utf-8") as fh:
            doc = json.load(fh)
    try:
        scs = []
        for s in doc["scenarios"]:
            scs.append(Scenario(
                n=int(s["n"]), m=int(s["m"]), m_c=float(s["m_c"]),
                component_model=_model_from_doc(s.get("component")),
                censor_model=_model_from_doc(s.get("censor")),
                replicates=int(s.get("replicates", 1)),
                seed=int(s.get("seed", doc.get("seed", 0))),
                mode=s.get("mode", doc.get("mode", "renewal")),
                id=s.get("id"),
            ))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scenario grid: {exc}") from None
    estimators = tuple(doc.get("estimators", ("em",)))
    options = {k: v for k, v in doc.items() if k not in ("scenarios", "estimators", "seed", "mode")}
    return scs, estimators, options

