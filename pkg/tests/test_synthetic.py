import numpy as np
import pytest
from numpy.testing import assert_array_equal

from nbarhmm.mcmc import McmcConfig
from nbarhmm.model import autoregressive_coefficient
from nbarhmm.panel import apply_label_rule, ingest, write_ceasefires_csv, write_covariates_csv, write_events_csv
from nbarhmm.params import published_means
from nbarhmm.synthetic import (
    DESK_COVARIATES, GeneratorSpec, RetryBudgetExceeded, coverage_study, desk_truth,
    make_skeletons, replication_seeds, simulate_country, simulate_dataset, simulate_panels,
)


@pytest.fixture(scope="module")
def desk_skeletons():
    sk, _ = make_skeletons(4, 150, 3, DESK_COVARIATES, ceasefire_share=0.8, ceasefire_rate=0.02)
    return sk


def test_skeletons_are_standardized_and_seeded(desk_skeletons):
    again, _ = make_skeletons(4, 150, 3, DESK_COVARIATES, ceasefire_share=0.8, ceasefire_rate=0.02)
    assert all(a.equals(b) for a, b in zip(desk_skeletons, again))
    v = np.concatenate([s.column("v2x") for s in desk_skeletons])
    assert abs(v.mean()) < 1e-12 and abs(v.std() - 1) < 1e-12
    assert all(s.population is not None for s in desk_skeletons)


def test_simulation_is_seeded_and_capped(desk_skeletons):
    spec = GeneratorSpec(desk_truth())
    a = simulate_panels(spec, desk_skeletons, 9)
    b = simulate_panels(spec, desk_skeletons, 9)
    for p, q, sk in zip(a, b, desk_skeletons):
        assert_array_equal(p.deaths, q.deaths)
        assert np.all(p.deaths <= 0.0006 * sk.population)
        assert_array_equal(p.label, apply_label_rule(p.deaths))


def test_states_returned_with_counts(desk_skeletons):
    panel, states = simulate_country(GeneratorSpec(desk_truth()), desk_skeletons[0], 4, return_states=True)
    assert states.shape == (150,) and set(np.unique(states)) <= {1, 2, 3}


def test_retry_budget(desk_skeletons):
    sk = desk_skeletons[0]
    tiny = type(sk)(sk.country_id, sk.weeks, sk.deaths, sk.x, sk.covariates, sk.label,
                    np.full(len(sk), 1.0))
    truth = desk_truth()
    truth.a[:] = [50.0, 60.0, 70.0]
    with pytest.raises(RetryBudgetExceeded, match="population cap"):
        simulate_country(GeneratorSpec(truth, max_country_retries=3), tiny, 1)


def test_generator_requires_population(desk_skeletons):
    sk = desk_skeletons[0]
    bare = type(sk)(sk.country_id, sk.weeks, sk.deaths, sk.x, sk.covariates)
    with pytest.raises(ValueError, match="population"):
        simulate_country(GeneratorSpec(desk_truth()), bare, 1)
    with pytest.raises(ValueError):
        GeneratorSpec(desk_truth(), cap_fraction=0.0)


def test_desk_truth_state2_is_stationary(desk_skeletons):
    truth = desk_truth()
    for sk in desk_skeletons:
        for x in sk.x:
            assert autoregressive_coefficient(truth, 2, x) < 1.0


def test_dataset_raw_tables_ingest_to_same_panels(tmp_path):
    ds = simulate_dataset(GeneratorSpec(published_means()), 3, 260, 5)
    write_events_csv(ds.events, tmp_path / "e.csv")
    write_ceasefires_csv(ds.ceasefires, tmp_path / "c.csv")
    write_covariates_csv(ds.covariates, tmp_path / "v.csv")
    panels, report = ingest(tmp_path / "e.csv", tmp_path / "c.csv", tmp_path / "v.csv")
    assert all(a.equals(b) for a, b in zip(panels, ds.panels))
    assert report.to_dict() == ds.report.to_dict()


def test_replication_seeds_are_stable():
    a = [s.generate_state(2).tolist() for s in replication_seeds(7, 3)]
    b = [s.generate_state(2).tolist() for s in replication_seeds(7, 3)]
    assert a == b and a[0] != a[1]


def test_tiny_coverage_study(desk_skeletons, tmp_path):
    cfg = McmcConfig(n_iterations=300, n_burnin=150, adapt_interval=25)
    rep = coverage_study(GeneratorSpec(desk_truth()), 2, cfg, desk_skeletons[:2], seed=1)
    assert rep.replications + len(rep.failures) == 2
    assert rep.intervals.shape == (rep.replications, 38, 2)
    assert np.all(rep.contained <= rep.replications)
    rep.write_csv(tmp_path / "grid.csv")
    rows = (tmp_path / "grid.csv").read_text().splitlines()
    assert rows[0] == "parameter,intercept,pre_cf,cf,v2x"
    assert len(rows) == 1 + 6 + 2 + 6
    rep.write_long_csv(tmp_path / "long.csv")
    assert len((tmp_path / "long.csv").read_text().splitlines()) == 39
    again = coverage_study(GeneratorSpec(desk_truth()), 2, cfg, desk_skeletons[:2], seed=1)
    assert_array_equal(again.intervals, rep.intervals)
