"""Recursive least-squares estimators with exponential and directional
forgetting, information-matrix bound monitoring, and a wing-rock test bed."""

from .estimators import AlgoParams, Algorithm, EstimatorState, StepOutput, check_delta_admissible, init, lyapunov, step
from .harness import ExperimentConfig, builtin_case, run

__all__ = [
    "AlgoParams",
    "Algorithm",
    "EstimatorState",
    "ExperimentConfig",
    "StepOutput",
    "builtin_case",
    "check_delta_admissible",
    "init",
    "lyapunov",
    "run",
    "step",
]
__version__ = "0.1.0"
