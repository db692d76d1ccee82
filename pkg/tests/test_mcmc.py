import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from nbarhmm.mcmc import (
    McmcConfig, default_groups, diagnostics, effective_sample_size, fit, initialize,
    split_rhat, write_trace_csv,
)
from nbarhmm.params import constraints_ok, published_means
from nbarhmm.synthetic import DESK_COVARIATES, GeneratorSpec, desk_truth, make_skeletons, simulate_panels

SHORT = dict(n_iterations=600, n_burnin=300, adapt_interval=25)


@pytest.fixture(scope="module")
def small_data():
    truth = desk_truth()
    sk, _ = make_skeletons(3, 120, 11, DESK_COVARIATES, ceasefire_share=0.8, ceasefire_rate=0.02)
    return simulate_panels(GeneratorSpec(truth), sk, 12)


def test_default_groups_partition():
    g = default_groups(8)
    assert [len(x) for x in g] == [48, 16, 6]
    assert sorted(i for x in g for i in x) == list(range(70))


@pytest.mark.parametrize("kw", [
    dict(n_iterations=10, n_burnin=10), dict(thin=0), dict(target_accept=(0.6, 0.5)),
    dict(proposal="nuts"),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        McmcConfig(**kw)


def test_bad_groups_rejected():
    with pytest.raises(ValueError):
        McmcConfig(groups=[[0, 1]]).resolved_groups(8)


def test_same_seed_same_draws(small_data):
    a = fit(small_data, config=McmcConfig(seed=3, **SHORT))
    b = fit(small_data, config=McmcConfig(seed=3, **SHORT))
    c = fit(small_data, config=McmcConfig(seed=4, **SHORT))
    assert_array_equal(a.draws, b.draws)
    assert_array_equal(a.log_post, b.log_post)
    assert not np.array_equal(a.draws, c.draws)


@pytest.mark.parametrize("proposal", ["spherical", "diagonal", "covariance"])
def test_draws_respect_constraints(small_data, proposal):
    d = fit(small_data, config=McmcConfig(seed=1, proposal=proposal, **SHORT))
    assert d.draws.shape == (300, 38)
    assert all(constraints_ok(t, 4) for t in d.draws)
    assert np.all(np.isfinite(d.log_post))
    c = d.constrained()
    assert np.all(c[:, 32:36] > 0)
    assert np.all(c[:, -2:] > 0) and np.all(c[:, -2:].sum(axis=1) < 1)


def test_adaptation_freezes_after_burnin(small_data):
    d = fit(small_data, config=McmcConfig(seed=2, **SHORT))
    post = d.step_sizes[~d.window_in_burnin]
    assert len(post) == 12
    assert np.all(post == post[0])
    assert d.window_in_burnin.sum() == 12


def test_thinning_and_summary(small_data, tmp_path):
    d = fit(small_data, config=McmcConfig(seed=2, thin=3, **SHORT))
    assert len(d.draws) == 100
    s = d.summary()
    assert s["n_draws"] == 100
    assert set(s["parameters"]) >= {"a1", "c", "pi3", "zeta[2->1][cf]"}
    d.write_summary(tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text())["config"]["thin"] == 3
    d.write_csv(tmp_path / "d.csv")
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 101
    write_trace_csv(d, tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + 100 * 38
    pm = d.posterior_mean()
    assert pm.satisfies_constraints()


def test_initialize_is_deterministic(small_data):
    a = initialize(small_data, 5)
    b = initialize(small_data, 5)
    assert_array_equal(a.to_vector(), b.to_vector())


def test_infeasible_init_rejected(small_data):
    p = published_means().restrict(DESK_COVARIATES)
    p.a[:] = [3.0, 2.0, 1.0]            # breaks the ordering, so the target is -inf
    with pytest.raises(ValueError):
        fit(small_data, config=McmcConfig(**SHORT), init=p)


def test_ess_of_iid_and_ar1():
    rng = np.random.default_rng(0)
    n = 20000
    iid = rng.normal(size=(4, n // 4, 1))
    assert effective_sample_size(iid)[0] == pytest.approx(n, rel=0.1)
    phi = 0.8
    x = np.empty(n)
    x[0] = rng.normal()
    e = rng.normal(size=n) * np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    expect = n * (1 - phi) / (1 + phi)
    assert effective_sample_size(x[None, :, None])[0] == pytest.approx(expect, rel=0.2)


def test_rhat_detects_disagreeing_chains():
    rng = np.random.default_rng(1)
    good = rng.normal(size=(4, 1000, 2))
    assert np.all(split_rhat(good) < 1.01)
    bad = good + np.array([0, 0, 3, 3])[:, None, None]
    assert np.all(split_rhat(bad) > 1.5)
    rep = diagnostics(bad)
    assert len(rep.flagged) == 2
    with pytest.raises(ValueError):
        diagnostics(rng.normal(size=(50, 3)))
