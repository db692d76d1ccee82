"""Transition matrices, negative-binomial emissions and the marginal
likelihood of one country's series.

Weeks are 0-based internally. Week ``k`` enters through the transition
matrix evaluated at its own covariates; the first ``N_LAGS`` weeks carry no
emission term and serve only as lags for later weeks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from ._kernels import batch_log_likelihood, forward_segments
from .params import TRANSITION_INDEX, ParameterSet, constraints_ok

N_LAGS = 4
MAX_BRUTE_FORCE_WEEKS = 12


@dataclass
class TransitionMatrix:
    matrix: np.ndarray   # (3, 3), rows sum to 1
    q: np.ndarray        # (6,) log-rates, one per off-diagonal transition


@dataclass
class EmissionContext:
    r: float
    p: float
    rho: float
    lag_mean: float

    @property
    def mean(self) -> float:
        return self.r * (1.0 - self.p) / self.p


def transition_matrix(params: ParameterSet, x) -> TransitionMatrix:
    """Row-wise multinomial logit with the diagonal as reference category."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.n_covariates,):
        raise ValueError(f"x must have length {params.n_covariates}")
    with np.errstate(invalid="ignore", over="ignore"):
        q = params.zeta @ x
        finite = [np.all(np.isfinite(params.zeta[:, j] * x[j])) for j in range(len(x))]
    if not np.all(np.isfinite(q)):
        bad = [j for j, ok in enumerate(finite) if not ok]
        raise FloatingPointError(f"non-finite transition log-rate; covariate index {bad or '?'}")
    logits = np.zeros((3, 3))
    for j, (i, k) in enumerate(TRANSITION_INDEX):
        logits[i, k] = q[j]
    m = logits - logsumexp(logits, axis=1, keepdims=True)
    return TransitionMatrix(np.exp(m), q)


def emission_rate(params: ParameterSet, state: int, lag4, x) -> EmissionContext:
    """NB size for ``state`` (1, 2 or 3) given the previous four counts."""
    if state not in (1, 2, 3):
        raise ValueError(f"state must be 1, 2 or 3, got {state}")
    lag_mean = float(np.mean(lag4))
    if state == 1:
        rho = 0.0
    else:
        with np.errstate(over="raise"):
            try:
                rho = float(np.exp(params.beta[state - 2] @ np.asarray(x, dtype=float)))
            except FloatingPointError:
                raise FloatingPointError("overflow in autoregressive rate") from None
    r = params.a[state - 1] + rho * lag_mean
    if not np.isfinite(r):
        raise FloatingPointError("overflow in autoregressive rate")
    return EmissionContext(r=r, p=params.p, rho=rho, lag_mean=lag_mean)


def nb_log_pmf(y, ctx: EmissionContext = None, *, r=None, p=None):
    """Log negative-binomial pmf, valid for non-integer size ``r``.

    Accepts either an ``EmissionContext`` or explicit ``r`` and ``p``.
    """
    if ctx is not None:
        r, p = ctx.r, ctx.p
    y = np.asarray(y, dtype=float)
    out = gammaln(r + y) - gammaln(r) - gammaln(y + 1.0) + r * np.log(p) + y * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def autoregressive_coefficient(params: ParameterSet, state: int, x) -> float:
    """Coefficient rho/c on the lagged mean in the conditional mean.

    Values >= 1 mean the mean recursion has no finite fixed point.
    """
    ctx = emission_rate(params, state, [0, 0, 0, 0], x)
    return ctx.rho / params.c


def is_explosive(params: ParameterSet, state: int, x) -> bool:
    return autoregressive_coefficient(params, state, x) >= 1.0


# -- vectorized factors ------------------------------------------------------

def lag_means(deaths) -> np.ndarray:
    """Mean of the previous four counts per week (zero for the first four)."""
    y = np.asarray(deaths, dtype=float)
    out = np.zeros(len(y))
    if len(y) > N_LAGS:
        cs = np.concatenate([[0.0], np.cumsum(y)])
        k = np.arange(N_LAGS, len(y))
        out[N_LAGS:] = (cs[k] - cs[k - N_LAGS]) / N_LAGS
    return out


def log_transitions(zeta, X) -> np.ndarray:
    """(n, 3, 3) log transition matrices for covariate rows ``X``."""
    q = np.asarray(X, dtype=float) @ zeta.T
    logits = np.zeros((len(q), 3, 3))
    for j, (i, k) in enumerate(TRANSITION_INDEX):
        logits[:, i, k] = q[:, j]
    m = logits.max(axis=2, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=2, keepdims=True)))


def log_emissions(beta, a, c, X, y, lagmean, emits, label, lgy1=None) -> np.ndarray:
    """(n, 3) log emission factors with label masking.

    ``emits`` marks weeks that carry an emission term; labelled weeks get
    -inf for states 2 and 3 whether or not they emit.
    """
    n = len(y)
    with np.errstate(over="ignore"):
        rho = np.exp(X @ beta.T)                   # (n, 2)
    r = np.empty((n, 3))
    r[:, 0] = a[0]
    with np.errstate(invalid="ignore"):
        r[:, 1:] = a[1:] + np.where(lagmean[:, None] > 0, rho * lagmean[:, None], 0.0)
    yy = y[:, None]
    if lgy1 is None:
        lgy1 = gammaln(y + 1.0)
    logp = np.log(c) - np.log1p(c)
    log1mp = -np.log1p(c)
    with np.errstate(invalid="ignore", over="ignore"):
        ld = gammaln(r + yy) - gammaln(r) - lgy1[:, None] + r * logp + yy * log1mp
    ld[~np.isfinite(r)] = -np.inf
    ld[~emits] = 0.0
    ld[label, 1:] = -np.inf
    return ld


def log_factors(params: ParameterSet, panel):
    """``(log pi, log P (n,3,3), log D (n,3))`` for one panel."""
    y = np.asarray(panel.deaths, dtype=float)
    emits = np.arange(len(y)) >= N_LAGS
    logP = log_transitions(params.zeta, panel.x)
    logD = log_emissions(
        params.beta, params.a, params.c, panel.x, y, lag_means(y), emits, panel.label,
    )
    return np.log(params.pi), logP, logD


def forward_log_likelihood(logpi, logP, logD) -> float:
    """Scaled forward pass over precomputed log factors."""
    starts = np.array([0, len(logD)], dtype=np.int64)
    return float(forward_segments(
        np.ascontiguousarray(logpi, dtype=float),
        np.ascontiguousarray(logP, dtype=float),
        np.ascontiguousarray(logD, dtype=float), starts,
    )[0])


def _check_length(panel):
    if len(panel) <= N_LAGS:
        raise ValueError(f"{panel.country_id}: need at least {N_LAGS + 1} weeks, got {len(panel)}")


def marginal_log_likelihood(params: ParameterSet, panel) -> float:
    """log p(y_5, ..., y_n) with the latent path summed out."""
    _check_length(panel)
    return forward_log_likelihood(*log_factors(params, panel))


def brute_force_log_likelihood(params: ParameterSet, panel) -> float:
    """Reference value by enumerating every label-consistent state path."""
    _check_length(panel)
    n = len(panel)
    if n > MAX_BRUTE_FORCE_WEEKS:
        raise ValueError(f"refusing to enumerate 3^{n} paths (limit n <= {MAX_BRUTE_FORCE_WEEKS})")
    y = panel.deaths
    trans = np.array([np.log(transition_matrix(params, panel.x[k]).matrix) for k in range(n)])
    emit = np.zeros((n, 3))
    for k in range(N_LAGS, n):
        for s in (1, 2, 3):
            ctx = emission_rate(params, s, y[k - N_LAGS:k], panel.x[k])
            emit[k, s - 1] = nb_log_pmf(y[k], ctx)
    terms = []
    for path in itertools.product(range(3), repeat=n):
        if any(panel.label[k] and path[k] != 0 for k in range(n)):
            continue
        v = np.log(params.pi[path[0]]) + emit[0, path[0]]
        for k in range(1, n):
            v += trans[k, path[k - 1], path[k]] + emit[k, path[k]]
        terms.append(v)
    if not terms:
        return -np.inf
    return float(logsumexp(terms))


# -- many panels at once -----------------------------------------------------

class PanelBatch:
    """Concatenated panels for repeated likelihood evaluation.

    Everything that depends only on the data (lag means, log y!, masks) is
    computed once; each call rebuilds the factors for all country-weeks in
    one vectorized pass and runs the compiled forward recursion.
    """

    def __init__(self, panels):
        panels = list(panels)
        for p in panels:
            _check_length(p)
        self.panels = panels
        self.n_covariates = panels[0].x.shape[1] if panels else None
        lengths = [len(p) for p in panels]
        self.starts = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        if panels:
            self.X = np.ascontiguousarray(np.vstack([p.x for p in panels]))
            self.y = np.concatenate([p.deaths for p in panels]).astype(float)
            self.lagmean = np.concatenate([lag_means(p.deaths) for p in panels])
            self.emits = np.concatenate([np.arange(len(p)) >= N_LAGS for p in panels])
            self.label = np.concatenate([p.label for p in panels])
            self.lgy1 = gammaln(self.y + 1.0)

    def __len__(self):
        return len(self.panels)

    def log_likelihoods(self, params: ParameterSet) -> np.ndarray:
        return self._eval(params.zeta, params.beta, params.a, params.c, np.log(params.pi))

    def log_likelihood_theta(self, theta) -> float:
        """Total log-likelihood at unconstrained coordinates ``theta``."""
        if not self.panels:
            return 0.0
        d = self.n_covariates
        zeta = theta[: 6 * d].reshape(6, d)
        beta = theta[6 * d: 8 * d].reshape(2, d)
        tail = theta[8 * d:]
        logits = np.array([0.0, tail[4], tail[5]])
        mx = logits.max()
        logpi = logits - (mx + np.log(np.exp(logits - mx).sum()))
        return float(np.sum(self._eval(zeta, beta, np.exp(tail[:3]), np.exp(tail[3]), logpi)))

    def _eval(self, zeta, beta, a, c, logpi):
        if not self.panels:
            return np.zeros(0)
        return batch_log_likelihood(
            self.X, self.y, self.lagmean, self.emits, self.label, self.lgy1, self.starts,
            np.ascontiguousarray(zeta, dtype=float), np.ascontiguousarray(beta, dtype=float),
            np.asarray(a, dtype=float), float(c), np.asarray(logpi, dtype=float),
        )


def total_log_likelihood(params: ParameterSet, panels) -> float:
    """Sum of per-country terms, reduced in the given country order."""
    if not panels:
        return 0.0
    return float(np.sum(PanelBatch(panels).log_likelihoods(params)))


__all__ = [
    "TransitionMatrix", "EmissionContext", "transition_matrix", "emission_rate",
    "nb_log_pmf", "autoregressive_coefficient", "is_explosive", "log_factors",
    "forward_log_likelihood", "marginal_log_likelihood", "brute_force_log_likelihood",
    "PanelBatch", "total_log_likelihood", "constraints_ok",
]
