"""Reproducible experiments: configs, runners, reports."""
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .experiments import (
    RUNNERS,
    SUMMARIZERS,
    run_convergence,
    run_experiment,
    run_identity_checks,
    run_obstruction,
    run_saturation,
    run_small_time_demo,
    run_trotter,
)
from .report import Report, emit

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "Report",
    "RUNNERS",
    "SUMMARIZERS",
    "emit",
    "load_config",
    "run_convergence",
    "run_experiment",
    "run_identity_checks",
    "run_obstruction",
    "run_saturation",
    "run_small_time_demo",
    "run_trotter",
]
