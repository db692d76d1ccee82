import numpy as np
import pytest
from scipy import stats

from nbarhmm.model import total_log_likelihood
from nbarhmm.params import ParameterSet, published_means
from nbarhmm.posterior import LogPosterior, PriorSpec, log_posterior

from conftest import random_panel, random_params


def test_prior_density_matches_scipy():
    theta = np.random.default_rng(0).normal(0, 10, 70)
    expect = stats.norm(0, 20).logpdf(theta).sum()
    assert PriorSpec().log_density(theta) == pytest.approx(expect, rel=1e-12)
    assert LogPosterior([], n_covariates=8).log_prior(theta) == pytest.approx(expect, rel=1e-12)


def test_posterior_is_prior_plus_likelihood():
    rng = np.random.default_rng(1)
    p = random_params(rng)
    panels = [random_panel(rng, 30, country_id=str(i)) for i in range(3)]
    lp = log_posterior(p, panels)
    expect = PriorSpec().log_density(p.to_unconstrained()) + total_log_likelihood(p, panels)
    assert lp == pytest.approx(expect, rel=1e-11)
    assert log_posterior(p.to_unconstrained(), panels) == pytest.approx(lp, rel=1e-13)


def test_constraint_violation_scores_minus_infinity():
    p = published_means()
    bad = ParameterSet(p.zeta, p.beta, [0.5, 0.1, 1.0], p.c, p.pi, validate=False)
    assert np.isneginf(log_posterior(bad, []))
    assert np.isfinite(log_posterior(p, []))


def test_prior_sd_vector_and_validation():
    sd = np.full(70, 5.0)
    assert PriorSpec(sd).sds(70)[3] == 5.0
    with pytest.raises(ValueError):
        PriorSpec(0.0)
    with pytest.raises(ValueError):
        LogPosterior([])
