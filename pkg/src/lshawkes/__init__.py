"""Simulation and localized B-spline least-squares estimation for locally stationary Hawkes processes."""

from .estimate import (
    EstimatorConfig, FitResult, LocalHawkesEstimator, StationaryHawkesEstimator, fit_local,
    fit_stationary, ise,
)
from .events import EventStream, load_events, save_events
from .harness import ExperimentConfig, Rule, run_experiment, validate_pipeline
from .model import (
    ModelSpec, builtin_family, load_model, preset, spectral_radius, validate_model,
)
from .moments import compute_chi, compute_Lambda, moment_table
from .simulate import RngStream, simulate_cluster, simulate_thinning
from .splines import SplineBasis, project_truth

__version__ = "0.1.0"
