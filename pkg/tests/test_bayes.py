import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from srpmask.bayes import (
    McmcConfig,
    PosteriorSample,
    Prior,
    PriorComponent,
    cpo_lpml,
    expected_znk_curve,
    gelman_rubin,
    hpd_interval,
    posterior_reliability,
    posterior_summary,
    run_mwg,
)
from srpmask.data import Fleet
from srpmask.distributions import Family, LifetimeModel, expected_lifetime, rng_stream
from srpmask.enumeration import EnumerationBudget, exact_log_likelihood
from srpmask.sim import Scenario, generate_fleet

FAST = dict(B=1500, burn_in=500, thin=10, n_chains=2, seed=1)


def _sample(draws, loglik=None, family=Family.WEIBULL):
    draws = np.asarray(draws, dtype=float)
    if loglik is None:
        loglik = np.zeros(draws.shape[:2] + (1,))
    return PosteriorSample(family, draws, np.full((draws.shape[0], 2), 0.3), np.full(draws.shape[0], 0.5), loglik)


@pytest.fixture(scope="module")
def fleet():
    sc = Scenario(n=40, m=4, m_c=8, component_model=LifetimeModel.weibull(3.0, 5.0))
    return generate_fleet(sc, rng_stream(17)).fleet


@pytest.fixture(scope="module")
def post(fleet):
    return run_mwg(fleet, "weibull", config=McmcConfig(B=4000, burn_in=1000, thin=10, n_chains=2, seed=2))


# -- summaries ----------------------------------------------------------------


def test_hpd_of_standard_normal():
    x = rng_stream(0).standard_normal(100_000)
    lo, hi = hpd_interval(x, 0.95)
    assert lo == pytest.approx(-1.96, abs=0.03) and hi == pytest.approx(1.96, abs=0.03)


def test_hpd_degenerate_and_skewed():
    assert hpd_interval(np.full(50, 2.5)) == (2.5, 2.5)
    x = rng_stream(1).exponential(1.0, 50_000)
    lo, hi = hpd_interval(x, 0.9)
    # shortest 90% interval of an exponential starts at 0
    assert lo < 0.01 and hi == pytest.approx(-math.log(0.1), rel=0.03)
    with pytest.raises(ValueError):
        hpd_interval([])


def test_znk_curve_is_linear():
    draws = np.stack([np.column_stack([np.full(100, 2.0), np.linspace(4, 6, 100)])] * 2)
    rows = expected_znk_curve(_sample(draws), 10)
    assert rows.shape == (11, 4) and np.all(rows[0, 1:] == 0)
    assert np.allclose(rows[:, 1], rows[1, 1] * rows[:, 0])
    assert np.allclose(rows[:, 2], rows[1, 2] * rows[:, 0]) and np.allclose(rows[:, 3], rows[1, 3] * rows[:, 0])
    means = [expected_lifetime(LifetimeModel.weibull(*p)) for p in draws[0]]
    assert rows[1, 1] == pytest.approx(np.mean(means))
    with pytest.raises(ValueError):
        expected_znk_curve(_sample(draws), 0)


def test_cpo_single_draw_and_lpml():
    ll = np.log(np.array([[[0.2, 0.5, 0.9]]]))
    cpo, lpml = cpo_lpml(_sample(np.ones((1, 1, 2)), ll))
    assert np.allclose(cpo, [0.2, 0.5, 0.9]) and lpml == pytest.approx(math.log(0.2 * 0.5 * 0.9))


def test_cpo_harmonic_mean():
    lik = np.array([0.1, 0.4])
    ll = np.log(lik)[None, :, None]
    cpo, _ = cpo_lpml(_sample(np.ones((1, 2, 2)), ll))
    assert cpo[0] == pytest.approx(1 / np.mean(1 / lik))


def test_lpml_invariant_to_draw_order():
    rng = rng_stream(3)
    ll = -rng.exponential(2.0, (1, 200, 5))
    a = cpo_lpml(_sample(np.ones((1, 200, 2)), ll))[1]
    b = cpo_lpml(_sample(np.ones((1, 200, 2)), ll[:, rng.permutation(200)]))[1]
    assert a == pytest.approx(b, rel=1e-12)


def test_cpo_floors_zero_contributions(caplog):
    ll = np.array([[[-np.inf], [0.0]]])
    cpo, lpml = cpo_lpml(_sample(np.ones((1, 2, 2)), ll))
    assert np.isfinite(lpml) and cpo[0] > 0


def test_gelman_rubin_cases():
    rng = rng_stream(4)
    same = np.tile(rng.standard_normal(500), (3, 1))
    assert gelman_rubin(same)[0] == pytest.approx(1.0, abs=0.01)
    stationary = rng.standard_normal((4, 2000))
    assert gelman_rubin(stationary)[0] < 1.01
    shifted = stationary + np.arange(4)[:, None] * 3
    assert gelman_rubin(shifted)[0] > 1.5
    assert gelman_rubin(np.ones((2, 20)))[0] == 1.0
    with pytest.raises(ValueError):
        gelman_rubin(np.ones((1, 20)))
    with pytest.raises(ValueError):
        gelman_rubin(np.ones((2, 5)))


# -- priors and configuration -------------------------------------------------


def test_default_prior_and_validation():
    p = Prior.default("lognormal")
    assert p.components[0].kind == "normal" and p.components[1].kind == "gamma"
    w = Prior.default("weibull")
    ref = 2 * stats.gamma(0.01, scale=100).logpdf(2.0)
    assert w.log_density((2.0, 2.0)) == pytest.approx(ref)
    with pytest.raises(ValueError):
        Prior("weibull", (PriorComponent("normal", 0, 1), PriorComponent("gamma", 1, 1)))
    with pytest.raises(ValueError):
        PriorComponent("gamma", -1, 1)


def test_config_validation():
    assert McmcConfig().n_retained == 1000
    with pytest.raises(ValueError):
        McmcConfig(B=1000, burn_in=500, thin=10)
    with pytest.raises(ValueError):
        McmcConfig(B=100, burn_in=200)
    with pytest.raises(ValueError):
        McmcConfig(assignment_update="gibbs")


# -- sampler ------------------------------------------------------------------


def test_run_shapes_and_positivity(post, fleet):
    assert post.draws.shape == (2, 300, 2) and post.loglik.shape == (2, 300, fleet.n)
    assert np.all(post.draws > 0)
    assert np.all((post.acceptance > 0.1) & (post.acceptance < 0.7))
    assert not post.flags
    text = post.to_csv()
    assert text.splitlines()[0] == "chain,draw,beta,eta" and len(text.splitlines()) == 601


def test_posterior_near_exact_mle(post, fleet):
    s = posterior_summary(post, grid=[0.0, 5.0])
    th = post.pooled()
    b = EnumerationBudget(10**30)
    assert s["beta"]["hpd"][0] < 3.0 < s["beta"]["hpd"][1]
    assert s["eta"]["hpd"][0] < 5.0 < s["eta"]["hpd"][1]
    assert s["reliability"][0][1:] == [1.0, 1.0, 1.0]
    assert gelman_rubin(post.draws).max() < 1.1
    assert exact_log_likelihood(fleet, LifetimeModel.weibull(*th.mean(axis=0)), b) > \
        exact_log_likelihood(fleet, LifetimeModel.weibull(3.0, 5.0), b) - 3


def test_deterministic(fleet):
    cfg = McmcConfig(**FAST)
    a = run_mwg(fleet, "weibull", config=cfg)
    b = run_mwg(fleet, "weibull", config=cfg)
    assert np.array_equal(a.draws, b.draws)


def test_more_data_shrinks_posterior_masked():
    truth = LifetimeModel.weibull(3.0, 5.0)
    sds = []
    for n in (15, 120):
        f = generate_fleet(Scenario(n=n, m=4, m_c=8, component_model=truth), rng_stream(6)).fleet
        s = run_mwg(f, "weibull", config=McmcConfig(**FAST))
        sds.append(s.pooled()[:, 0].std())
    assert sds[1] < sds[0]


def test_no_failures_recovers_prior():
    # a negligible observation window leaves the prior essentially untouched
    fleet = Fleet.from_lists([[]], [1e-9], 2)
    prior = Prior("gamma", (PriorComponent("gamma", 20, 10), PriorComponent("gamma", 5, 2)))
    cfg = McmcConfig(B=101_000, burn_in=1000, thin=10, n_chains=1, seed=3)
    s = run_mwg(fleet, "gamma", prior, cfg)
    x = s.pooled()
    assert x.shape[0] == 10_000 == cfg.n_retained
    assert stats.kstest(x[:, 0], stats.gamma(20, scale=0.1).cdf).statistic < 0.02
    assert stats.kstest(x[:, 1], stats.gamma(5, scale=0.5).cdf).statistic < 0.02


def test_posterior_sd_shrinks_like_root_n():
    truth = LifetimeModel.weibull(2.0, 3.0)
    sds = []
    for n in (50, 200, 800):
        f = generate_fleet(Scenario(n=n, m=1, m_c=6, component_model=truth), rng_stream(n)).fleet
        s = run_mwg(f, "weibull", config=McmcConfig(B=3000, burn_in=1000, thin=5, n_chains=2, seed=1))
        sds.append(s.pooled().std(axis=0))
    for lo, hi in zip(sds[1:], sds[:-1]):
        assert np.all(np.abs(hi / lo / 2.0 - 1.0) < 0.3)


def test_posterior_mean_matches_grid_integration():
    # two sockets, enough failures to overlap; the exact posterior is a 2-d integral
    truth = LifetimeModel.weibull(2.0, 2.0)
    fleet = generate_fleet(Scenario(n=12, m=2, m_c=4, component_model=truth), rng_stream(8)).fleet
    prior = Prior("weibull", (PriorComponent("gamma", 2, 1), PriorComponent("gamma", 2, 1)))
    bs = np.linspace(0.3, 6.0, 90)
    es = np.linspace(0.5, 5.0, 90)
    lp = np.array([[exact_log_likelihood(fleet, LifetimeModel.weibull(b, e)) + prior.log_density((b, e))
                    for e in es] for b in bs])
    p = np.exp(lp - lp.max())
    p /= p.sum()
    mb, me = (p.sum(axis=1) * bs).sum(), (p.sum(axis=0) * es).sum()
    sb = math.sqrt((p.sum(axis=1) * (bs - mb) ** 2).sum())
    s = run_mwg(fleet, "weibull", prior, McmcConfig(B=12000, burn_in=2000, thin=5, n_chains=2, seed=5))
    th = s.pooled()
    assert th[:, 0].mean() == pytest.approx(mb, abs=0.15 * sb + 0.02)
    assert th[:, 1].mean() == pytest.approx(me, rel=0.03)


# -- properties ---------------------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0.0, 30.0), min_size=2, max_size=20),
       st.sampled_from(list(Family)))
def test_posterior_reliability_non_increasing(seed, grid, family):
    rng = rng_stream(seed)
    a = rng.uniform(0.5, 4.0, (2, 50)) if family is not Family.LOGNORMAL else rng.uniform(-1, 2, (2, 50))
    draws = np.stack([a, rng.uniform(0.3, 5.0, (2, 50))], axis=-1)
    g = np.sort(grid)
    r = posterior_reliability(_sample(draws, family=family), g)
    assert np.all(np.diff(r) <= 1e-15) and np.all((r >= 0) & (r <= 1))


@given(st.integers(1, 10**6), st.integers(0, 10**6), st.integers(1, 100))
def test_retained_count_arithmetic(B, burn, thin):
    if not burn < B or (B - burn) // thin < 100:
        with pytest.raises(ValueError):
            McmcConfig(B=B, burn_in=burn, thin=thin)
        return
    cfg = McmcConfig(B=B, burn_in=burn, thin=thin)
    kept = [t for t in range(B) if t >= burn and (t - burn + 1) % thin == 0]
    assert cfg.n_retained == len(kept) == (B - burn) // thin


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200), st.floats(0.05, 0.99))
def test_hpd_is_shortest_covering_window(xs, level):
    x = np.sort(xs)
    lo, hi = hpd_interval(x, level)
    k = math.ceil(level * len(x))
    assert np.sum((x >= lo) & (x <= hi)) >= k
    best = min(x[i + k - 1] - x[i] for i in range(len(x) - k + 1))
    assert hi - lo == best
