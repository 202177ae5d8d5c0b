import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from srpmask.distributions import LifetimeModel, cdf, moment_match, rng_stream
from srpmask.sim import (
    REPLICATE_COLUMNS,
    Scenario,
    default_grid,
    generate_fleet,
    load_grid,
    mae,
    run_scenarios,
    summarize,
    write_replicates_csv,
    write_summary_csv,
)


def test_scenario_defaults_and_validation():
    sc = Scenario(n=10, m=4, m_c=8)
    assert sc.id == "n10_m4_mc8"
    assert sc.component_model.params == pytest.approx(moment_match("weibull", 7, 4).params)
    with pytest.raises(ValueError):
        Scenario(n=0, m=4, m_c=8)
    with pytest.raises(ValueError):
        Scenario(n=1, m=4, m_c=0)
    with pytest.raises(ValueError):
        Scenario(n=1, m=4, m_c=4, mode="other")


def test_forced_censoring_gives_no_failures():
    sc = Scenario(n=50, m=8, m_c=4, censor_model=LifetimeModel.weibull(50.0, 0.01))
    sim = generate_fleet(sc, rng_stream(0))
    assert sim.fleet.total_failures == 0 and all(d == () for d in sim.truth)


def test_single_socket_is_one_renewal_process():
    sim = generate_fleet(Scenario(n=30, m=1, m_c=30), rng_stream(1))
    for s, d in zip(sim.fleet.systems, sim.truth):
        assert all(np.diff(s.times) > 0) and all(j == 1 for j in d)
        assert s.r == 0 or s.times[-1] < s.tau


def test_truth_sidecar_is_separate():
    sim = generate_fleet(Scenario(n=3, m=4, m_c=8), rng_stream(2))
    doc = json.loads(sim.truth_json())
    assert [len(x["d"]) for x in doc["systems"]] == [s.r for s in sim.fleet.systems]


def _oracle_mean_failures(n, m, comp, cens, seed):
    # independent discrete-event simulation drawing through scipy
    rs = np.random.default_rng(seed)
    tau = stats.weibull_min(cens.params[0], scale=cens.params[1]).rvs(n, random_state=rs)
    lifetimes = stats.weibull_min(comp.params[0], scale=comp.params[1])
    clock = np.zeros((n, m))
    count = np.zeros(n)
    live = np.ones((n, m), bool)
    while live.any():
        clock[live] += lifetimes.rvs(live.sum(), random_state=rs)
        live &= clock < tau[:, None]
        count += live.sum(axis=1)
    return count.mean()


def test_mean_failures_against_independent_simulation():
    sc = Scenario(n=20_000, m=16, m_c=8)
    sim = generate_fleet(sc, rng_stream(3))
    ours = sim.fleet.total_failures / sc.n
    ref = _oracle_mean_failures(100_000, 16, sc.component_model, sc.censor_model, 7)
    assert ours == pytest.approx(ref, rel=0.02)


def test_renewal_gaps_follow_component_law():
    comp = LifetimeModel.weibull(3.924, 7.734)
    sc = Scenario(n=400, m=20, m_c=100, component_model=comp, censor_model=LifetimeModel.weibull(400.0, 100.0))
    sim = generate_fleet(sc, rng_stream(4))
    gaps = []
    for s, d in zip(sim.fleet.systems, sim.truth):
        t = np.array(s.times)
        d = np.array(d)
        for j in range(1, sc.m + 1):
            gaps.append(np.diff(np.concatenate([[0.0], t[d == j]])))
    gaps = np.concatenate(gaps)
    assert gaps.size >= 100_000
    assert stats.kstest(gaps, lambda y: cdf(comp, y)).statistic < 0.01


def test_literal_mode_differs_and_stays_valid():
    a = generate_fleet(Scenario(n=200, m=4, m_c=20), rng_stream(5))
    b = generate_fleet(Scenario(n=200, m=4, m_c=20, mode="paper-literal"), rng_stream(5))
    assert a.fleet.total_failures != b.fleet.total_failures
    for s in b.fleet.systems:
        assert all(np.diff(s.times) > 0) and (s.r == 0 or s.times[-1] < s.tau)


@given(st.integers(1, 20), st.integers(1, 8), st.floats(0.5, 20.0), st.sampled_from(["renewal", "paper-literal"]),
       st.integers(0, 2**32 - 1))
def test_generated_histories_are_valid(n, m, m_c, mode, seed):
    sim = generate_fleet(Scenario(n=n, m=m, m_c=m_c, mode=mode), rng_stream(seed))
    assert sim.fleet.n == n and sim.fleet.m == m
    for s, d in zip(sim.fleet.systems, sim.truth):
        assert s.tau > 0 and len(d) == s.r and all(1 <= j <= m for j in d)
        assert all(a < b for a, b in zip((0.0,) + s.times, s.times + (s.tau,)))


# -- MAE ----------------------------------------------------------------------


def test_mae_examples():
    truth = LifetimeModel.weibull(1.0, 1.0)
    assert mae(truth, truth, [0.5, 1, 2]) == 0.0
    assert mae(lambda t: np.ones_like(t), truth, [1.0]) == pytest.approx(1 - math.exp(-1), abs=1e-4)
    assert mae(np.array([1.0]), truth, [1.0]) == pytest.approx(0.6321, abs=1e-4)
    with pytest.raises(ValueError):
        mae(truth, truth, [])
    with pytest.raises(ValueError):
        mae(np.ones(3), truth, [1.0])


def test_default_grid():
    g = default_grid(LifetimeModel.weibull(1.0, 1.0))
    assert g.size == 200 and g[0] == 0 and g[-1] == pytest.approx(-math.log(0.01))


@given(st.lists(st.floats(0.01, 20.0), min_size=1, max_size=30), st.floats(0.5, 5.0), st.floats(0.5, 5.0),
       st.randoms())
def test_mae_properties(grid, b, e, rnd):
    truth = LifetimeModel.weibull(2.0, 3.0)
    est = LifetimeModel.weibull(b, e)
    v = mae(est, truth, grid)
    shuffled = list(grid)
    rnd.shuffle(shuffled)
    assert v >= 0 and v == pytest.approx(mae(est, truth, shuffled), rel=1e-12, abs=1e-15)
    assert mae(truth, truth, grid) == 0


# -- runner -------------------------------------------------------------------


def test_smoke_run_em():
    res = run_scenarios([Scenario(n=10, m=4, m_c=4, replicates=5, seed=1)], ["em"], options={"em": {"L": 200}})
    assert len(res) == 5 and all(math.isfinite(r.mae) for r in res)
    assert all(r.status == "ok" for r in res)
    rows = summarize(res)
    assert rows[0]["replicates"] == 5 and rows[0]["n_ok"] == 5
    assert rows[0]["mae_q1"] <= rows[0]["mae_median"] <= rows[0]["mae_q3"]
    text = write_replicates_csv(res)
    assert text.splitlines()[0] == ",".join(REPLICATE_COLUMNS)
    again = run_scenarios([Scenario(n=10, m=4, m_c=4, replicates=5, seed=1)], ["em"], options={"em": {"L": 200}})
    assert write_summary_csv(summarize(res)) == write_summary_csv(summarize(again))


def test_enum_budget_recorded_not_fatal():
    res = run_scenarios([Scenario(n=5, m=16, m_c=8, seed=2)], ["enum", "em"],
                        options={"em": {"L": 100}, "max_configs": 10**7})
    by = {r.estimator: r for r in res}
    assert by["enum"].status == "budget_exceeded" and math.isnan(by["enum"].mae)
    assert by["em"].status == "ok" and math.isfinite(by["em"].mae)


def test_failures_are_recorded():
    res = run_scenarios([Scenario(n=3, m=2, m_c=4)], ["em"], options={"em": {"L": -1}})
    assert res[0].status == "failed" and res[0].message


def test_unknown_estimator_rejected():
    with pytest.raises(ValueError):
        run_scenarios([Scenario(n=3, m=2, m_c=4)], ["mle"])


def test_em_and_enum_agree_on_small_sockets():
    sc = Scenario(n=50, m=4, m_c=4, replicates=20, seed=11)
    res = run_scenarios([sc], ["em", "enum"], options={"em": {"L": 300}, "init": [1.0, 1.0]})
    rows = {r["estimator"]: r for r in summarize(res)}
    assert rows["em"]["n_ok"] == rows["enum"]["n_ok"] == 20
    assert abs(rows["em"]["mae_mean"] - rows["enum"]["mae_mean"]) < 0.005


def test_load_grid(tmp_path):
    doc = {"scenarios": [{"n": 10, "m": 4, "m_c": 4, "replicates": 2},
                         {"n": 5, "m": 2, "m_c": 8, "component": {"family": "gamma", "params": [2, 1]}}],
           "estimators": ["em", "enum"], "seed": 3, "em": {"L": 50}}
    p = tmp_path / "grid.json"
    p.write_text(json.dumps(doc))
    scs, ests, opts = load_grid(p)
    assert len(scs) == 2 and scs[0].seed == 3 and scs[1].component_model.family.value == "gamma"
    assert ests == ("em", "enum") and opts == {"em": {"L": 50}}
    with pytest.raises(ValueError):
        load_grid({"scenarios": [{"n": 1}]})
