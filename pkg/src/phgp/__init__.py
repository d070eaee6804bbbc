"""Gaussian-process learning of a nonlinear port-Hamiltonian wave equation."""

from .config import ConfigError, ExperimentConfig
from .hyper import HyperBasis, HyperParams, param_count
from .rollout import simulate_posterior, simulate_true, trajectory_error
from .train import build_posterior, extract_snapshots, optimize
from .wave import assemble_system, experiment_law

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "HyperBasis",
    "HyperParams",
    "assemble_system",
    "build_posterior",
    "experiment_law",
    "extract_snapshots",
    "optimize",
    "param_count",
    "simulate_posterior",
    "simulate_true",
    "trajectory_error",
]
