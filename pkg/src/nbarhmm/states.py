"""Latent-state inference at fixed parameters: exact smoothing, the
pairwise Gibbs state sampler, covariate-only transition curves and
forecasting."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._kernels import pair_gibbs
from .model import N_LAGS, log_factors, log_transitions
from .params import ParameterSet

DEFAULT_CAP_FRACTION = 0.0006


@dataclass
class StatePosterior:
    """Per-week state probabilities (columns: states 1, 2, 3)."""

    probs: np.ndarray
    sweeps: int = 0
    seed: int = None
    country_id: str = ""
    weeks: np.ndarray = None


def _require_length(panel):
    if len(panel) <= N_LAGS:
        raise ValueError(f"{panel.country_id}: need at least {N_LAGS + 1} weeks")


def forward_backward(params: ParameterSet, panel) -> np.ndarray:
    """Exact smoothing probabilities (n, 3) on the masked factors."""
    _require_length(panel)
    logpi, logP, logD = log_factors(params, panel)
    n = len(panel)
    P = np.exp(logP)
    m = logD.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise ValueError(f"{panel.country_id}: a week admits no state")
    D = np.exp(logD - m)
    alpha = np.empty((n, 3))
    a = np.exp(logpi) * D[0]
    alpha[0] = a / a.sum()
    for k in range(1, n):
        a = (alpha[k - 1] @ P[k]) * D[k]
        s = a.sum()
        if not s > 0:
            raise ValueError(f"{panel.country_id}: zero-probability observation sequence")
        alpha[k] = a / s
    beta = np.ones(3)
    post = np.empty((n, 3))
    post[-1] = alpha[-1]
    for k in range(n - 2, -1, -1):
        beta = P[k + 1] @ (D[k + 1] * beta)
        beta /= beta.sum()
        g = alpha[k] * beta
        post[k] = g / g.sum()
    return post


def _initial_path(logD, label):
    states = np.argmax(logD, axis=1).astype(np.int64)
    states[:N_LAGS] = 0
    states[label] = 0
    return states


def state_space_sampler(params: ParameterSet, panel, sweeps: int, seed: int,
                        burn_fraction: float = 0.1) -> StatePosterior:
    """Visit proportions from Gibbs sweeps over overlapping week pairs.

    Each sweep redraws ``(s_k, s_k+1)`` for ``k = 1 .. n-1`` from its exact
    full conditional; the first ``burn_fraction`` of sweeps is discarded.
    """
    _require_length(panel)
    if sweeps < 1:
        raise ValueError("sweeps must be positive")
    logpi, logP, logD = log_factors(params, panel)
    states = _initial_path(logD, panel.label)
    burn = int(burn_fraction * sweeps)
    counts = pair_gibbs(
        np.ascontiguousarray(logpi), np.ascontiguousarray(logP),
        np.ascontiguousarray(logD), states, int(sweeps), burn, int(seed),
    )
    if counts.shape[0] == 0:
        raise ValueError(f"{panel.country_id}: labels admit no state path")
    probs = counts / counts.sum(axis=1, keepdims=True)
    return StatePosterior(probs, sweeps, seed, panel.country_id, panel.weeks)


def viterbi(params: ParameterSet, panel) -> np.ndarray:
    """Most probable state path (values 1..3) under the masked factors."""
    _require_length(panel)
    logpi, logP, logD = log_factors(params, panel)
    n = len(panel)
    score = logpi + logD[0]
    back = np.zeros((n, 3), dtype=np.int64)
    for k in range(1, n):
        cand = score[:, None] + logP[k]
        back[k] = np.argmax(cand, axis=0)
        score = cand[back[k], np.arange(3)] + logD[k]
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for k in range(n - 1, 0, -1):
        path[k - 1] = back[k, path[k]]
    return path + 1


def probability_curves(params: ParameterSet, panel) -> np.ndarray:
    """Week-by-week transition matrices (n, 3, 3) from covariates alone."""
    return np.exp(log_transitions(params.zeta, panel.x))


# -- forecasting ---------------------------------------------------------------

@dataclass
class Forecast:
    horizon: int
    states: np.ndarray      # (M, horizon), values 1..3
    counts: np.ndarray      # (M, horizon)
    quantile_levels: tuple = (0.025, 0.25, 0.5, 0.75, 0.975)
    quantiles: np.ndarray = field(default=None)   # (levels, horizon)
    truncated: int = 0

    def __post_init__(self):
        if self.quantiles is None:
            self.quantiles = np.quantile(self.counts, self.quantile_levels, axis=0)

    @property
    def state_probs(self) -> np.ndarray:
        return np.stack([(self.states == s).mean(axis=0) for s in (1, 2, 3)], axis=1)


def future_design(panel, horizon: int, scenario=None) -> np.ndarray:
    """Covariates for the weeks after the panel.

    Continuous covariates carry the last observed row forward and flags are
    zero, unless ``scenario`` (horizon x d) is supplied.
    """
    d = len(panel.covariates)
    if scenario is not None:
        scenario = np.asarray(scenario, dtype=float)
        if scenario.shape != (horizon, d):
            raise ValueError(f"scenario must have shape ({horizon}, {d}), got {scenario.shape}")
        return scenario
    x = np.repeat(panel.x[-1:], horizon, axis=0)
    for name in ("pre_cf", "cf"):
        if name in panel.covariates:
            x[:, panel.covariates.index(name)] = 0.0
    return x


def forecast(params: ParameterSet, panel, horizon: int, M: int, seed: int,
             cap: float = DEFAULT_CAP_FRACTION, scenario=None, population=None,
             max_redraws: int = 1000) -> Forecast:
    """Simulate future states and counts for ``M`` replicates.

    The terminal state is drawn from the smoothing law at the last observed
    week. Counts above ``cap * population`` are redrawn up to
    ``max_redraws`` times and then truncated to the cap.
    """
    if horizon < 1 or M < 1:
        raise ValueError("horizon and M must be positive")
    if population is None:
        population = panel.population[-1] if panel.population is not None else np.inf
    pop = np.broadcast_to(np.asarray(population, dtype=float), (horizon,))
    xf = future_design(panel, horizon, scenario)
    rng = np.random.default_rng(seed)
    last = forward_backward(params, panel)[-1]
    s = rng.choice(3, size=M, p=last / last.sum())
    lags = np.tile(panel.deaths[-N_LAGS:].astype(float), (M, 1))
    P = np.exp(log_transitions(params.zeta, xf))
    rho = np.exp(xf @ params.beta.T)          # (horizon, 2)
    p = params.p
    states = np.empty((M, horizon), dtype=np.int64)
    counts = np.empty((M, horizon), dtype=np.int64)
    truncated = 0
    for h in range(horizon):
        cum = np.cumsum(P[h][s], axis=1)
        s = (rng.random(M)[:, None] > cum).sum(axis=1).clip(0, 2)
        rr = params.a[s] + np.where(s == 0, 0.0, rho[h, np.maximum(s - 1, 0)]) * lags.mean(axis=1)
        y = rng.negative_binomial(rr, p)
        limit = cap * pop[h]
        bad = y > limit
        tries = 0
        while bad.any() and tries < max_redraws:
            y[bad] = rng.negative_binomial(rr[bad], p)
            bad = y > limit
            tries += 1
        if bad.any():
            truncated += int(bad.sum())
            y[bad] = int(np.floor(limit))
        states[:, h] = s + 1
        counts[:, h] = y
        lags = np.column_stack([lags[:, 1:], y])
    return Forecast(horizon, states, counts, truncated=truncated)


# -- whole panels ----------------------------------------------------------------

def derive_seeds(seed, n: int) -> list:
    """``n`` independent integer seeds spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


def decode_panels(params: ParameterSet, panels, sweeps: int, seed: int,
                  method: str = "sampler", burn_fraction: float = 0.1) -> list:
    """State probabilities for every panel.

    ``method="sampler"`` runs ``state_space_sampler`` with one spawned seed
    per country; ``"exact"`` uses ``forward_backward``.
    """
    if method not in ("sampler", "exact"):
        raise ValueError("method must be 'sampler' or 'exact'")
    out = []
    for panel, s in zip(panels, derive_seeds(seed, len(panels))):
        if method == "exact":
            out.append(StatePosterior(forward_backward(params, panel), 0, None,
                                      panel.country_id, panel.weeks))
        else:
            out.append(state_space_sampler(params, panel, sweeps, s, burn_fraction))
    return out


def forecast_panels(params: ParameterSet, panels, horizon: int, M: int, seed: int,
                    cap: float = DEFAULT_CAP_FRACTION) -> list:
    """``(country_id, Forecast)`` for every panel, one spawned seed each."""
    return [
        (panel.country_id, forecast(params, panel, horizon, M, s, cap=cap))
        for panel, s in zip(panels, derive_seeds(seed, len(panels)))
    ]


def scenario_design(covariates, **values) -> np.ndarray:
    """Covariate row with the intercept set, named entries from ``values``
    (standardized units) and everything else zero, i.e. at the pooled mean
    with flags off."""
    covariates = tuple(covariates)
    unknown = set(values) - set(covariates)
    if unknown:
        raise ValueError(f"unknown covariates {sorted(unknown)}")
    x = np.zeros(len(covariates))
    x[0] = 1.0
    for name, v in values.items():
        x[covariates.index(name)] = float(v)
    return x


def default_scenarios(covariates) -> dict:
    """Baseline plus each flag switched on alone."""
    out = {"baseline": scenario_design(covariates)}
    for name in ("pre_cf", "cf"):
        if name in covariates:
            out[name] = scenario_design(covariates, **{name: 1.0})
    return out


# -- CSV outputs -----------------------------------------------------------------

def write_state_csv(posteriors, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country_id", "week_start", "p1", "p2", "p3"])
        for sp in posteriors:
            for k, row in enumerate(sp.probs):
                w.writerow([sp.country_id, str(sp.weeks[k]), *(repr(float(v)) for v in row)])


def write_curves_csv(params, panels, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country_id", "week_start", *(f"p{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3))])
        for panel in panels:
            curves = probability_curves(params, panel)
            for k in range(len(panel)):
                w.writerow([panel.country_id, str(panel.weeks[k]),
                            *(repr(float(v)) for v in curves[k].ravel())])


def write_scenario_curves_csv(params, scenarios: dict, path):
    """One row per named covariate scenario with its transition matrix."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", *(f"p{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3))])
        for name, x in scenarios.items():
            m = np.exp(log_transitions(params.zeta, np.atleast_2d(x)))[0]
            w.writerow([name, *(repr(float(v)) for v in m.ravel())])


def write_forecast_csv(forecasts, path):
    """``forecasts``: iterable of (country_id, Forecast)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["country_id", "step", "mean", *(f"q{lv}" for lv in Forecast.quantile_levels),
                  "p_state1", "p_state2", "p_state3"]
        w.writerow(header)
        for cid, fc in forecasts:
            sp = fc.state_probs
            for h in range(fc.horizon):
                w.writerow([cid, h + 1, repr(float(fc.counts[:, h].mean())),
                            *(repr(float(v)) for v in fc.quantiles[:, h]),
                            *(repr(float(v)) for v in sp[h])])


__all__ = [
    "StatePosterior", "Forecast", "forward_backward", "state_space_sampler", "viterbi",
    "probability_curves", "forecast", "future_design", "derive_seeds", "decode_panels",
    "forecast_panels", "scenario_design", "default_scenarios",
]
