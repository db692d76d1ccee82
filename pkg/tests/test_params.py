import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from nbarhmm.params import (
    FULL_COVARIATES, ConstraintError, ParameterSet, constraints_ok, n_parameters,
    parameter_names, pi_from_logits, published_means, unconstrained_names,
)

from conftest import random_params


def test_dimension_is_seventy_for_full_design():
    p = published_means()
    assert n_parameters(8) == 70
    assert len(p.to_unconstrained()) == 70
    assert len(p.to_vector()) == 70
    assert len(parameter_names(FULL_COVARIATES)) == 70
    assert len(unconstrained_names(FULL_COVARIATES)) == 70


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_unconstrained_round_trip(seed, d):
    covs = FULL_COVARIATES[:d]
    p = random_params(np.random.default_rng(seed), covs)
    q = ParameterSet.from_unconstrained(p.to_unconstrained(), covariates=covs)
    assert_allclose(q.zeta, p.zeta)
    assert_allclose(q.beta, p.beta)
    assert_allclose(q.a, p.a, rtol=1e-12)
    assert_allclose(q.c, p.c, rtol=1e-12)
    assert_allclose(q.pi, p.pi, rtol=1e-12)


def test_constraints_rejected():
    p = published_means()
    with pytest.raises(ConstraintError):
        ParameterSet(p.zeta, p.beta, [0.2, 0.1, 1.0], p.c, p.pi)
    beta = p.beta.copy()
    beta[0, 0], beta[1, 0] = beta[1, 0], beta[0, 0] - 1
    with pytest.raises(ConstraintError):
        ParameterSet(p.zeta, beta, p.a, p.c, p.pi)
    loose = ParameterSet(p.zeta, beta, p.a, p.c, p.pi, validate=False)
    assert not loose.satisfies_constraints()
    assert not constraints_ok(loose.to_unconstrained(), 8)
    assert constraints_ok(p.to_unconstrained(), 8)


def test_equal_a_allowed():
    p = published_means()
    ParameterSet(p.zeta, p.beta, [0.1, 0.1, 0.1], p.c, p.pi)


@pytest.mark.parametrize("bad", [
    dict(a=[0.0, 0.1, 1.0]), dict(c=-1.0), dict(pi=[0.5, 0.3, 0.3]),
])
def test_invalid_values(bad):
    p = published_means()
    kw = dict(zeta=p.zeta, beta=p.beta, a=p.a, c=p.c, pi=p.pi)
    kw.update(bad)
    with pytest.raises(ValueError):
        ParameterSet(**kw)


def test_intercept_must_come_first():
    with pytest.raises(ValueError, match="intercept"):
        ParameterSet(np.zeros((6, 2)), np.zeros((2, 2)), [1, 2, 3], 1.0, [0.5, 0.25, 0.25],
                     covariates=("cf", "intercept"))


def test_json_round_trip(tmp_path):
    p = published_means()
    path = tmp_path / "p.json"
    p.to_json(path)
    q = ParameterSet.from_json(path)
    assert np.array_equal(q.to_vector(), p.to_vector())
    assert q.covariates == p.covariates
    assert ParameterSet.from_json(p.to_json()).covariates == p.covariates


def test_restrict_keeps_columns():
    p = published_means().restrict(("intercept", "cf"))
    assert p.zeta.shape == (6, 2)
    assert p.zeta[2, 1] == pytest.approx(1.243)
    assert p.beta[1, 0] == pytest.approx(-3.849)


def test_pi_from_logits_sums_to_one():
    pi = pi_from_logits([800.0, -800.0])
    assert pi.sum() == pytest.approx(1.0)
    assert np.all(np.isfinite(pi))


def test_published_state1_rows_match_reported_baselines():
    p = published_means()
    e = np.exp([0.0, p.zeta[0, 0], p.zeta[1, 0]])
    row = e / e.sum()
    assert_allclose(row[1], 0.0006276, rtol=1e-12)
    assert_allclose(row[2], 6e-7, rtol=1e-12)
