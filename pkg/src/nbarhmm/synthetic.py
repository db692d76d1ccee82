"""Synthetic panels from known parameters and the credible-interval
coverage experiment.

Replication seeds are derived from a master seed with
``np.random.SeedSequence(master).spawn(replications)``; replication ``r``
then spawns one child for data generation and one for the MCMC chain.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mcmc import McmcConfig, fit, initialize
from .model import N_LAGS, log_transitions
from .panel import StandardizationReport, apply_label_rule, assemble_panels, week_grid
from .params import (
    BETA_ROWS, FULL_COVARIATES, TRANSITIONS, ParameterSet, parameter_names, published_means,
)
from .posterior import PriorSpec

logger = logging.getLogger(__name__)

DEFAULT_CAP_FRACTION = 0.0006
DESK_COVARIATES = ("intercept", "pre_cf", "cf", "v2x")


class RetryBudgetExceeded(RuntimeError):
    pass


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """Fresh ``SeedSequence`` from an int, a sequence of ints or another
    ``SeedSequence`` (whose spawn counter is not consumed)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(seed)


@dataclass
class GeneratorSpec:
    params: ParameterSet
    cap_fraction: float = DEFAULT_CAP_FRACTION
    max_country_retries: int = 200

    def __post_init__(self):
        if not self.cap_fraction > 0:
            raise ValueError("cap_fraction must be positive")


def _simulate_once(params, X, rng, limit):
    """One attempt; returns None as soon as a week breaks the cap."""
    n = len(X)
    P = np.exp(log_transitions(params.zeta, X))
    rho = np.exp(X @ params.beta.T)
    p = params.p
    s = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    u = rng.random(n)
    s[0] = min(int(np.searchsorted(np.cumsum(params.pi), u[0], side="right")), 2)
    for k in range(1, n):
        s[k] = min(int(np.searchsorted(np.cumsum(P[k, s[k - 1]]), u[k], side="right")), 2)
    for k in range(n):
        r = params.a[s[k]]
        if k >= N_LAGS and s[k] > 0:
            r += rho[k, s[k] - 1] * y[k - N_LAGS:k].mean()
        try:
            y[k] = rng.negative_binomial(r, p)
        except ValueError:      # size beyond the sampler's range: far over any cap
            return None
        if y[k] > limit[k]:
            return None
    return s, y


def simulate_country(spec: GeneratorSpec, skeleton: CountryPanel, seed, return_states=False):
    """Draw states and counts on a covariate skeleton.

    The first four weeks are drawn without the autoregressive term. A draw
    in which any week exceeds ``cap_fraction * population`` is discarded and
    the whole country regenerated, up to ``max_country_retries`` times.
    """
    if skeleton.population is None:
        raise ValueError(f"{skeleton.country_id}: skeleton needs population per week")
    params = spec.params
    if tuple(skeleton.covariates) != params.covariates:
        raise ValueError("skeleton covariates do not match parameters")
    rng = np.random.default_rng(seed)
    limit = spec.cap_fraction * skeleton.population
    for _ in range(spec.max_country_retries):
        draw = _simulate_once(params, skeleton.x, rng, limit)
        if draw is not None:
            s, y = draw
            panel = skeleton.with_deaths(y)
            return (panel, s + 1) if return_states else panel
    raise RetryBudgetExceeded(
        f"{skeleton.country_id}: no draw within the population cap after "
        f"{spec.max_country_retries} attempts"
    )


def apply_synthetic_labels(panel: CountryPanel) -> CountryPanel:
    return panel.with_labels(apply_label_rule(panel.deaths))


def synthetic_raw_inputs(n_countries: int, n_weeks: int, seed, start="1989-01-02",
                         ceasefire_share=0.4, ceasefire_rate=0.01):
    """Raw ceasefire and annual covariate tables resembling the real design.

    Annual polyarchy follows a bounded random walk, GDP per capita and
    population grow log-linearly, and a ``ceasefire_share`` of countries
    see ceasefires at ``ceasefire_rate`` per week. Returns ``(weeks,
    ceasefires, covariates)`` in the shapes produced by ``read_ceasefires``
    and ``read_covariates``.
    """
    rng = np.random.default_rng(seed)
    weeks = week_grid(start, n_weeks)
    first = int(str(weeks[0])[:4]) - 1
    last = int(str(weeks[-1])[:4])
    ceasefires, covariates = {}, {}
    for i in range(n_countries):
        cid = f"SYN{i:03d}"
        years = range(first, last + 1)
        v = np.clip(rng.uniform(0.1, 0.9) + np.cumsum(rng.normal(0, 0.04, len(years))), 0.01, 0.99)
        gdp = np.exp(rng.normal(8.0, 1.0) + 0.02 * np.arange(len(years)))
        pop = np.exp(rng.normal(np.log(1e7), 1.2) + 0.02 * np.arange(len(years)))
        covariates[cid] = {y: (float(v[j]), float(gdp[j]), float(pop[j])) for j, y in enumerate(years)}
        events = []
        if rng.random() < ceasefire_share:
            idx = np.flatnonzero(rng.random(n_weeks) < ceasefire_rate)
            events = [weeks[k] + int(rng.integers(0, 7)) for k in idx]
        ceasefires[cid] = events
    return weeks, ceasefires, covariates


def make_skeletons(n_countries: int, n_weeks: int, seed, covariates=FULL_COVARIATES,
                   start="1989-01-02", report: StandardizationReport = None,
                   ceasefire_share=0.4, ceasefire_rate=0.01):
    """Covariate panels with zero deaths built from ``synthetic_raw_inputs``.

    Returns ``(skeletons, report)`` with continuous columns standardized over
    the pool and only ``covariates`` kept.
    """
    weeks, ceasefires, annual = synthetic_raw_inputs(
        n_countries, n_weeks, seed, start, ceasefire_share, ceasefire_rate,
    )
    zeros = np.zeros(n_weeks, dtype=np.int64)
    events = {cid: (weeks, zeros) for cid in annual}
    panels, report = assemble_panels(events, ceasefires, annual, report)
    panels = [p.restrict(covariates).with_labels(np.zeros(n_weeks, dtype=bool)) for p in panels]
    return panels, report


def simulate_panels(spec: GeneratorSpec, skeletons, seed, label=True, return_states=False):
    """One synthetic data set: every skeleton simulated with its own seed.

    With ``return_states`` the generating paths (values 1..3) come back as a
    second list.
    """
    children = as_seed_sequence(seed).spawn(len(skeletons))
    out, paths = [], []
    for sk, ss in zip(skeletons, children):
        panel, s = simulate_country(spec, sk, ss, return_states=True)
        out.append(apply_synthetic_labels(panel) if label else panel)
        paths.append(s)
    return (out, paths) if return_states else out


@dataclass
class SyntheticDataset:
    """Raw tables, model-ready panels and the generating paths."""

    events: dict
    ceasefires: dict
    covariates: dict
    panels: list
    states: list
    report: StandardizationReport


def simulate_dataset(spec: GeneratorSpec, n_countries: int, n_weeks: int, seed,
                     start="1989-01-02", ceasefire_share=0.4, ceasefire_rate=0.01,
                     label=True) -> SyntheticDataset:
    """Synthetic raw inputs plus counts drawn from ``spec``.

    Ingesting the returned raw tables reproduces ``panels`` on the full
    design; ``panels`` keep only the generating covariates.
    """
    cov_ss, death_ss = as_seed_sequence(seed).spawn(2)
    skeletons, report = make_skeletons(
        n_countries, n_weeks, cov_ss, spec.params.covariates, start, None,
        ceasefire_share, ceasefire_rate,
    )
    _, ceasefires, annual = synthetic_raw_inputs(
        n_countries, n_weeks, cov_ss, start, ceasefire_share, ceasefire_rate,
    )
    panels, states = simulate_panels(spec, skeletons, death_ss, label, return_states=True)
    events = {p.country_id: (p.weeks, p.deaths) for p in panels}
    return SyntheticDataset(events, ceasefires, annual, panels, states, report)


def write_states_csv(panels, paths, path):
    """Generating state per country-week."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country_id", "week_start", "state"])
        for p, s in zip(panels, paths):
            for k in range(len(p)):
                w.writerow([p.country_id, str(p.weeks[k]), int(s[k])])


def design_truth(covariates=DESK_COVARIATES) -> ParameterSet:
    """Published means restricted to a covariate subset."""
    return published_means().restrict(covariates)


# rows follow TRANSITIONS; columns follow DESK_COVARIATES
DESK_ZETA = np.array([
    [-3.5, 1.5, 1.0, -0.3],
    [-5.0, 1.0, 0.0, 0.0],
    [-3.0, -0.3, 1.2, -0.9],
    [-3.0, 1.0, 0.5, -0.4],
    [-2.0, -0.5, 0.4, -0.5],
    [-1.0, -0.3, 0.2, -0.7],
])
DESK_BETA_SLOPE = 0.2


def desk_truth() -> ParameterSet:
    """Generating values for small coverage studies on ``DESK_COVARIATES``.

    Emission intercepts, flag effects, ``a``, ``c`` and ``pi`` are the
    published means. Transitions use ``DESK_ZETA``: every move happens often
    enough in ten countries of a few years for its coefficients to be
    learnable, and no coefficient is so large that the logit saturates.
    Without the higher polynomial terms the published linear polyarchy
    slopes of beta make state 2 explosive for ordinary covariate values, so
    those slopes keep their sign with magnitude ``DESK_BETA_SLOPE``.
    """
    p = design_truth(DESK_COVARIATES)
    beta = p.beta.copy()
    beta[:, 3] = np.sign(beta[:, 3]) * DESK_BETA_SLOPE
    return ParameterSet(DESK_ZETA.copy(), beta, p.a, p.c, p.pi, covariates=p.covariates)


# -- coverage ------------------------------------------------------------------

@dataclass
class CoverageReport:
    names: list
    covariates: tuple
    contained: np.ndarray          # per-parameter count of intervals holding truth
    replications: int              # successful replications
    nominal: float = 0.95
    failures: list = field(default_factory=list)
    intervals: np.ndarray = None   # (replications, params, 2)
    truth: np.ndarray = None

    @property
    def coverage(self) -> np.ndarray:
        return self.contained / max(self.replications, 1)

    def write_csv(self, path):
        """Grid laid out like the coverage table: one row per parameter
        block, one column per covariate; scalars in the first column."""
        cov = self.coverage
        d = len(self.covariates)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", *self.covariates])
            rows = [f"zeta[{t}]" for t in TRANSITIONS] + [f"beta[{b}]" for b in BETA_ROWS]
            for r, name in enumerate(rows):
                w.writerow([name, *(f"{v:.4f}" for v in cov[r * d:(r + 1) * d])])
            for j, name in enumerate(["a1", "a2", "a3", "c", "pi2", "pi3"]):
                w.writerow([name, f"{cov[8 * d + j]:.4f}", *([""] * (d - 1))])

    def to_dict(self) -> dict:
        return {
            "nominal": self.nominal,
            "replications": self.replications,
            "covariates": list(self.covariates),
            "parameters": {
                name: {"truth": float(self.truth[j]), "contained": int(self.contained[j]),
                       "coverage": float(self.coverage[j])}
                for j, name in enumerate(self.names)
            },
            "failures": self.failures,
        }

    def write_long_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "truth", "contained", "replications", "coverage"])
            for j, name in enumerate(self.names):
                w.writerow([name, repr(float(self.truth[j])), int(self.contained[j]),
                            self.replications, f"{self.coverage[j]:.4f}"])


def _one_replication(args):
    spec, skeletons, fit_config, prior, rep_seed, init_mode, level = args
    gen_ss, fit_ss = as_seed_sequence(rep_seed).spawn(2)
    panels = simulate_panels(spec, skeletons, gen_ss)
    fit_seed = int(fit_ss.generate_state(1)[0])
    cfg = McmcConfig(**{**fit_config.to_dict(), "seed": fit_seed,
                        "target_accept": tuple(fit_config.target_accept)})
    if init_mode == "truth":
        init = spec.params
    else:
        init = initialize(panels, fit_seed, prior)
    draws = fit(panels, prior, cfg, init=init)
    return draws.credible_intervals(level)


def replication_seeds(master_seed, replications):
    return as_seed_sequence(master_seed).spawn(replications)


def coverage_study(spec: GeneratorSpec, replications: int, fit_config: McmcConfig,
                   skeletons, seed=0, prior: PriorSpec = None, init="truth",
                   level=0.95, workers=1) -> CoverageReport:
    """Fraction of central credible intervals that contain the generating value.

    ``init="truth"`` starts each chain at the generating parameters;
    ``"default"`` uses ``initialize``. Failed replications are recorded in
    ``failures`` and excluded from the counts.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    prior = prior or PriorSpec()
    truth = spec.params.to_vector()
    seeds = replication_seeds(seed, replications)
    jobs = [(spec, skeletons, fit_config, prior, ss, init, level) for ss in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_one_replication, j) for j in jobs]
            results = []
            for f in futures:
                try:
                    results.append(f.result())
                except Exception as exc:    # recorded, replication skipped
                    results.append(exc)
    else:
        results = []
        for r, job in enumerate(jobs):
            try:
                results.append(_one_replication(job))
            except Exception as exc:
                results.append(exc)
            logger.info("coverage replication %d/%d done", r + 1, replications)
    intervals, failures = [], []
    for r, res in enumerate(results):
        if isinstance(res, Exception):
            failures.append({"replication": r, "error": f"{type(res).__name__}: {res}"})
        else:
            intervals.append(res)
    intervals = np.array(intervals).reshape(-1, len(truth), 2)
    contained = ((intervals[:, :, 0] <= truth) & (truth <= intervals[:, :, 1])).sum(axis=0)
    return CoverageReport(
        names=parameter_names(spec.params.covariates), covariates=spec.params.covariates,
        contained=contained, replications=len(intervals), nominal=level,
        failures=failures, intervals=intervals, truth=truth,
    )
