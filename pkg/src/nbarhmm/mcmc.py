"""Adaptive Metropolis-within-Gibbs sampling of the model parameters.

Each iteration updates the parameter blocks in turn with a symmetric
Gaussian random walk on unconstrained coordinates. During burn-in the
per-block step size is multiplied or divided by ``adapt_factor`` whenever
the acceptance rate of the last window leaves ``target_accept``; after
burn-in the kernel is fixed. The ``diagonal`` and ``covariance`` proposals
shape each block by the empirical covariance of the third quarter of
burn-in, after which only the step sizes keep adapting.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .params import (
    ParameterSet, n_parameters, parameter_names, pi_from_logits, unconstrained_names,
)
from .posterior import LogPosterior, PriorSpec

logger = logging.getLogger(__name__)

PROPOSALS = ("spherical", "diagonal", "covariance")


def default_groups(n_covariates: int) -> list[list[int]]:
    """zeta | beta | (log a, log c, pi logits)."""
    d = n_covariates
    return [
        list(range(0, 6 * d)),
        list(range(6 * d, 8 * d)),
        list(range(8 * d, 8 * d + 6)),
    ]


@dataclass
class McmcConfig:
    n_iterations: int = 20000        # total, burn-in included
    n_burnin: int = 10000
    thin: int = 1
    seed: int = 0
    groups: list = None              # default_groups(d) when None
    target_accept: tuple = (0.3, 0.5)
    adapt_interval: int = 50
    adapt_factor: float = 1.1
    initial_step: float | list = 0.05
    proposal: str = "spherical"

    def __post_init__(self):
        if self.n_iterations <= self.n_burnin:
            raise ValueError("n_iterations must exceed n_burnin")
        if self.thin < 1 or self.adapt_interval < 1:
            raise ValueError("thin and adapt_interval must be positive")
        lo, hi = self.target_accept
        if not 0.0 < lo < hi < 1.0:
            raise ValueError(f"bad target_accept {self.target_accept}")
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}")
        self.target_accept = (float(lo), float(hi))

    def resolved_groups(self, n_covariates):
        groups = self.groups or default_groups(n_covariates)
        flat = sorted(i for g in groups for i in g)
        if flat != list(range(n_parameters(n_covariates))):
            raise ValueError("groups must partition all parameter coordinates")
        return [np.asarray(g, dtype=np.int64) for g in groups]

    def steps(self, n_groups):
        s = np.broadcast_to(np.asarray(self.initial_step, dtype=float), (n_groups,)).copy()
        if np.any(s <= 0):
            raise ValueError("initial_step must be positive")
        return s

    def to_dict(self):
        out = asdict(self)
        out["target_accept"] = list(self.target_accept)
        return out


@dataclass
class PosteriorDraws:
    """Kept MCMC draws in unconstrained coordinates plus tuning history.

    ``acceptance`` and ``step_sizes`` hold one row per adaptation window and
    one column per block; ``window_in_burnin`` flags windows before the
    freeze.
    """

    draws: np.ndarray
    covariates: tuple
    log_post: np.ndarray
    acceptance: np.ndarray
    step_sizes: np.ndarray
    window_in_burnin: np.ndarray
    config: McmcConfig
    initial: np.ndarray = None
    extra: dict = field(default_factory=dict)

    @property
    def names(self):
        return unconstrained_names(self.covariates)

    def constrained(self) -> np.ndarray:
        """Draws mapped to (zeta, beta, a, c, pi2, pi3) coordinates."""
        d = len(self.covariates)
        out = self.draws.copy()
        out[:, 8 * d: 8 * d + 4] = np.exp(self.draws[:, 8 * d: 8 * d + 4])
        logits = np.column_stack([np.zeros(len(out)), self.draws[:, -2:]])
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        out[:, -2:] = (w / w.sum(axis=1, keepdims=True))[:, 1:]
        return out

    def post_burnin_acceptance(self) -> np.ndarray:
        rows = self.acceptance[~self.window_in_burnin]
        return rows.mean(axis=0) if len(rows) else np.full(self.acceptance.shape[1], np.nan)

    def credible_intervals(self, level=0.95) -> np.ndarray:
        tail = (1.0 - level) / 2.0
        return np.quantile(self.constrained(), [tail, 1.0 - tail], axis=0).T

    def posterior_mean(self) -> ParameterSet:
        m = self.constrained().mean(axis=0)
        d = len(self.covariates)
        pi = np.array([1.0 - m[-2] - m[-1], m[-2], m[-1]])
        return ParameterSet(
            m[: 6 * d].reshape(6, d), m[6 * d: 8 * d].reshape(2, d),
            m[8 * d: 8 * d + 3], m[8 * d + 3], pi, covariates=self.covariates,
        )

    def summary(self, quantiles=(0.025, 0.25, 0.5, 0.75, 0.975)) -> dict:
        c = self.constrained()
        q = np.quantile(c, quantiles, axis=0)
        names = parameter_names(self.covariates)
        return {
            "n_draws": int(len(c)),
            "parameters": {
                name: {
                    "mean": float(c[:, j].mean()),
                    "median": float(np.median(c[:, j])),
                    "sd": float(c[:, j].std(ddof=1)) if len(c) > 1 else 0.0,
                    "quantiles": {str(qq): float(q[i, j]) for i, qq in enumerate(quantiles)},
                }
                for j, name in enumerate(names)
            },
            "acceptance_post_burnin": self.post_burnin_acceptance().tolist(),
            "final_step_sizes": self.step_sizes[-1].tolist() if len(self.step_sizes) else [],
            "config": self.config.to_dict(),
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "log_post", *self.names])
            for i, row in enumerate(self.draws):
                w.writerow([i, repr(float(self.log_post[i])), *(repr(float(v)) for v in row)])

    def write_summary(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def initialize(panels, seed: int, prior: PriorSpec = None, covariates=None,
               max_attempts: int = 100) -> ParameterSet:
    """Deterministic, constraint-satisfying start with a finite posterior."""
    panels = list(panels)
    if covariates is None:
        if not panels:
            raise ValueError("covariates are required when no panels are given")
        covariates = panels[0].covariates
    covariates = tuple(covariates)
    d = len(covariates)
    target = LogPosterior(panels, prior, d)
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        zeta = np.zeros((6, d))
        zeta[:, 0] = rng.normal(0.0, 0.1, 6)
        beta = np.zeros((2, d))
        beta[:, 0] = np.sort(rng.normal(0.0, 0.1, 2))
        a = np.sort(np.array([0.001, 0.1, 5.0]) * np.exp(rng.normal(0.0, 0.1, 3)))
        c = 0.05 * np.exp(rng.normal(0.0, 0.1))
        logits = np.log(np.array([0.03, 0.01]) / 0.96) + rng.normal(0.0, 0.1, 2)
        params = ParameterSet(zeta, beta, a, c, pi_from_logits(logits), covariates=covariates)
        if np.isfinite(target(params.to_unconstrained())):
            return params
    raise RuntimeError(f"no finite-posterior initialization in {max_attempts} attempts")


def _shape_matrix(kind, cov, k):
    if kind == "diagonal":
        return np.diag(np.sqrt(np.diag(cov))) * (2.38 / np.sqrt(k))
    return np.linalg.cholesky(cov + 1e-10 * np.eye(k)) * (2.38 / np.sqrt(k))


def fit(panels, prior: PriorSpec = None, config: McmcConfig = None,
        init: ParameterSet = None, covariates=None) -> PosteriorDraws:
    """Run one adaptive Metropolis-within-Gibbs chain.

    With no panels the target is the prior alone (``covariates`` then fixes
    the dimension). ``init`` defaults to ``initialize(panels, config.seed)``.
    """
    panels = list(panels)
    config = config or McmcConfig()
    prior = prior or PriorSpec()
    if init is None:
        init = initialize(panels, config.seed, prior, covariates)
    covariates = init.covariates
    d = len(covariates)
    target = LogPosterior(panels, prior, d)
    groups = config.resolved_groups(d)
    step = config.steps(len(groups))
    shapes = [np.eye(len(g)) for g in groups]

    theta = init.to_unconstrained()
    lp = target(theta)
    if not np.isfinite(lp):
        raise ValueError("initial log posterior is not finite; choose a new initialization")

    rng = np.random.default_rng(config.seed)
    n_keep = (config.n_iterations - config.n_burnin) // config.thin
    dim = len(theta)
    draws = np.empty((n_keep, dim))
    lps = np.empty(n_keep)
    acc_rows, step_rows, in_burn = [], [], []
    window_acc = np.zeros(len(groups))
    window_n = 0
    lo, hi = config.target_accept
    # covariance-shaped proposals learn their shape over the third quarter of
    # burn-in; the last quarter tunes step sizes against the frozen shape
    learn_from = config.n_burnin // 2
    freeze_at = (3 * config.n_burnin) // 4
    run_n, run_mean, run_m2 = 0, np.zeros(dim), np.zeros((dim, dim))
    shaped = False
    kept = 0

    for it in range(config.n_iterations):
        for b, idx in enumerate(groups):
            prop = theta.copy()
            prop[idx] += step[b] * (shapes[b] @ rng.standard_normal(len(idx)))
            lp_new = target(prop)
            if np.log(rng.random()) < lp_new - lp:
                theta, lp = prop, lp_new
                window_acc[b] += 1
        window_n += 1
        burning = it < config.n_burnin

        if config.proposal != "spherical" and learn_from <= it < freeze_at:
            run_n += 1
            delta = theta - run_mean
            run_mean += delta / run_n
            run_m2 += np.outer(delta, theta - run_mean)

        if window_n == config.adapt_interval:
            rate = window_acc / window_n
            acc_rows.append(rate)
            in_burn.append(burning)
            if burning:
                step = np.where(rate < lo, step / config.adapt_factor, step)
                step = np.where(rate > hi, step * config.adapt_factor, step)
                if config.proposal != "spherical" and it < freeze_at and run_n > 2 * dim:
                    cov = run_m2 / (run_n - 1)
                    for b, idx in enumerate(groups):
                        shapes[b] = _shape_matrix(config.proposal, cov[np.ix_(idx, idx)], len(idx))
                    if not shaped:
                        step[:] = 1.0
                        shaped = True
            step_rows.append(step.copy())
            window_acc[:] = 0
            window_n = 0

        if not burning and (it - config.n_burnin) % config.thin == config.thin - 1:
            if kept < n_keep:
                draws[kept] = theta
                lps[kept] = lp
                kept += 1

    ncol = len(groups)
    return PosteriorDraws(
        draws=draws[:kept], covariates=covariates, log_post=lps[:kept],
        acceptance=np.array(acc_rows).reshape(-1, ncol),
        step_sizes=np.array(step_rows).reshape(-1, ncol),
        window_in_burnin=np.array(in_burn, dtype=bool),
        config=config, initial=init.to_unconstrained(),
    )


# -- convergence diagnostics --------------------------------------------------

@dataclass
class DiagnosticsReport:
    names: list
    ess: np.ndarray
    rhat: np.ndarray
    n_chains: int
    n_draws: int
    min_ess: float = 100.0
    max_rhat: float = 1.05

    @property
    def flagged(self) -> list:
        return [
            n for n, e, r in zip(self.names, self.ess, self.rhat)
            if not (e >= self.min_ess) or not (r < self.max_rhat)
        ]

    def to_dict(self):
        return {
            "n_chains": self.n_chains, "n_draws": self.n_draws,
            "ess": dict(zip(self.names, map(float, self.ess))),
            "rhat": dict(zip(self.names, map(float, self.rhat))),
            "flagged": self.flagged,
        }


def _as_chains(draws):
    if isinstance(draws, PosteriorDraws):
        return draws.draws[None], draws.names
    if isinstance(draws, (list, tuple)) and draws and isinstance(draws[0], PosteriorDraws):
        n = min(len(d.draws) for d in draws)
        return np.stack([d.draws[:n] for d in draws]), draws[0].names
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError("draws must be (draws, params) or (chains, draws, params)")
    return arr, [f"x{j}" for j in range(arr.shape[2])]


def _autocorr(x):
    """Autocorrelation of each column of ``x`` (n, p) via FFT."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=0)
    ac = np.fft.irfft(f * np.conjugate(f), size, axis=0)[:n]
    with np.errstate(invalid="ignore", divide="ignore"):
        return ac / ac[0]


def split_rhat(chains) -> np.ndarray:
    """Split-R-hat per coordinate for (chains, draws, params)."""
    m, n, _ = chains.shape
    half = n // 2
    split = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    n = half
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.sqrt(((n - 1) / n * w + b / n) / w)


def effective_sample_size(chains) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    m, n, p = chains.shape
    acs = np.stack([_autocorr(chains[c]) for c in range(m)])      # (m, n, p)
    var_c = chains.var(axis=1, ddof=1)                             # (m, p)
    w = var_c.mean(axis=0)
    b_over_n = chains.mean(axis=1).var(axis=0, ddof=1) if m > 1 else np.zeros(p)
    var_plus = (n - 1) / n * w + b_over_n
    out = np.empty(p)
    for j in range(p):
        if not var_plus[j] > 0:
            out[j] = 1.0
            continue
        rho = 1.0 - (w[j] - (var_c[:, j, None] * acs[:, :, j]).mean(axis=0)) / var_plus[j]
        rho[0] = 1.0
        total = 0.0
        prev = np.inf
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            total += pair
            prev = pair
            t += 2
        tau = max(-1.0 + 2.0 * total, 1.0 / np.log10(max(m * n, 10)))
        out[j] = m * n / tau
    return out


def diagnostics(draws, min_ess=100.0, max_rhat=1.05) -> DiagnosticsReport:
    """Per-coordinate ESS and split-R-hat.

    Accepts a ``PosteriorDraws``, a list of them (one per chain), or an
    array shaped (draws, params) or (chains, draws, params).
    """
    chains, names = _as_chains(draws)
    m, n, _ = chains.shape
    if m < 2 and n < 200:
        raise ValueError(f"need >= 2 chains or >= 200 draws, got {m} x {n}")
    if n < 4:
        raise ValueError("too few draws per chain")
    return DiagnosticsReport(
        names=list(names), ess=effective_sample_size(chains), rhat=split_rhat(chains),
        n_chains=m, n_draws=n, min_ess=min_ess, max_rhat=max_rhat,
    )


def write_trace_csv(draws: PosteriorDraws, path):
    """Long-format trace for plotting: iteration, parameter, value."""
    c = draws.constrained()
    names = parameter_names(draws.covariates)
    thin, burn = draws.config.thin, draws.config.n_burnin
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "parameter", "value"])
        for i in range(len(c)):
            it = burn + (i + 1) * thin
            for j, name in enumerate(names):
                w.writerow([it, name, repr(float(c[i, j]))])
