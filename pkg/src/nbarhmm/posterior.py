"""Log posterior: likelihood over all countries plus independent Gaussian
priors on unconstrained coordinates, truncated by the ordering constraints."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PanelBatch
from .params import ParameterSet, constraints_ok, n_parameters

DEFAULT_PRIOR_SD = 20.0


@dataclass
class PriorSpec:
    """Per-coordinate prior standard deviations (scalar broadcasts)."""

    sd: float | np.ndarray = DEFAULT_PRIOR_SD

    def __post_init__(self):
        if np.any(np.asarray(self.sd) <= 0):
            raise ValueError("prior sd must be positive")

    def sds(self, n: int) -> np.ndarray:
        sd = np.broadcast_to(np.asarray(self.sd, dtype=float), (n,))
        return np.array(sd)

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        sd = self.sds(len(theta))
        z = theta / sd
        return float(-0.5 * z @ z - np.sum(np.log(sd)) - 0.5 * len(theta) * np.log(2 * np.pi))


class LogPosterior:
    """Callable log posterior over unconstrained coordinates.

    Builds the panel batch once so repeated evaluation (as in MCMC) only pays
    for the factor construction and the forward pass.
    """

    def __init__(self, panels, prior: PriorSpec = None, n_covariates=None):
        panels = list(panels)
        self.batch = PanelBatch(panels)
        if panels:
            n_covariates = panels[0].x.shape[1]
        if n_covariates is None:
            raise ValueError("n_covariates is required when no panels are given")
        self.n_covariates = n_covariates
        self.dim = n_parameters(n_covariates)
        self.prior = prior or PriorSpec()
        self._sd = self.prior.sds(self.dim)
        self._norm = -np.sum(np.log(self._sd)) - 0.5 * self.dim * np.log(2 * np.pi)

    def log_prior(self, theta) -> float:
        z = theta / self._sd
        return float(-0.5 * z @ z + self._norm)

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not constraints_ok(theta, self.n_covariates):
            return -np.inf
        lp = self.log_prior(theta)
        if not self.batch.panels:
            return lp
        ll = self.batch.log_likelihood_theta(theta)
        if not np.isfinite(ll):
            return -np.inf
        return lp + ll


def log_posterior(params, panels, prior: PriorSpec = None, n_covariates=None) -> float:
    """Unnormalized log posterior.

    ``params`` may be a ``ParameterSet`` or an unconstrained coordinate
    vector; anything violating the ordering constraints scores -inf.
    """
    if isinstance(params, ParameterSet):
        n_covariates = params.n_covariates
        theta = params.to_unconstrained()
    else:
        theta = np.asarray(params, dtype=float)
        if n_covariates is None:
            n_covariates = (len(theta) - 6) // 8
    return LogPosterior(panels, prior, n_covariates)(theta)
