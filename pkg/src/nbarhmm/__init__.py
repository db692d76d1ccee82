"""Bayesian three-state hidden Markov model for weekly count panels with
covariate-driven transitions and autoregressive negative-binomial emissions."""
from .mcmc import McmcConfig, PosteriorDraws, diagnostics, fit, initialize
from .model import (
    PanelBatch, brute_force_log_likelihood, marginal_log_likelihood, total_log_likelihood,
    transition_matrix,
)
from .panel import (
    CountryPanel, PanelValidationError, StandardizationReport, apply_label_rule,
    build_indicators, ingest, read_panel_csv, standardize_covariates, write_panel_csv,
)
from .params import FULL_COVARIATES, ConstraintError, ParameterSet, published_means
from .posterior import LogPosterior, PriorSpec, log_posterior
from .states import forecast, forward_backward, probability_curves, state_space_sampler, viterbi
from .synthetic import GeneratorSpec, RetryBudgetExceeded, coverage_study, simulate_country

__version__ = "0.1.0"
