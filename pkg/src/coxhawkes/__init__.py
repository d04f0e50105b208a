"""Spatiotemporal Hawkes process with a log-Gaussian Cox background."""

from .domain import Domain, Event, EventError, EventSet, GPHyper, ModelKind, TriggerParams, validate_events
from .gp import Grid1D, Grid2D, GridField, LowRankBasis, precompute_basis, sample_field
from .inference import McmcConfig, PosteriorSamples, SamplerError, ess, fit, hmc_sample, posterior_field, r_hat
from .likelihood import (
    Background,
    ParamState,
    Posterior,
    PriorSpec,
    grad_log_posterior,
    log_likelihood,
    log_posterior,
)
from .predict import ExperimentConfig, predict_next_events, rmse, run_misspecification_experiment
from .simulate import SimConfig, SimResult, ks_residual_test, simulate

__version__ = "0.1.0"
