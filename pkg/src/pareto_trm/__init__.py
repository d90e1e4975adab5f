"""Derivative-free multiobjective trust-region optimization with fully linear
surrogate models (RBF, Lagrange, finite-difference Taylor)."""

from .criticality import CriticalityResult, omega_of_gradients, true_omega
from .driver import AlgoConfig, RunReport, run
from .problem import (
    EvaluationDatabase,
    FeasibleSet,
    MOProblem,
    evaluate,
    project_to_box,
    scale_to_unit,
    unscale_from_unit,
)
from .steps import StepConfig
from .surrogates import MODEL_SPECS, ModelSpec, SurrogateBundle, build_bundle
from .testbed import TestProblemSpec, make_problem, solution_quality

__all__ = [
    "AlgoConfig",
    "CriticalityResult",
    "EvaluationDatabase",
    "FeasibleSet",
    "MODEL_SPECS",
    "MOProblem",
    "ModelSpec",
    "RunReport",
    "StepConfig",
    "SurrogateBundle",
    "TestProblemSpec",
    "build_bundle",
    "evaluate",
    "make_problem",
    "omega_of_gradients",
    "project_to_box",
    "run",
    "scale_to_unit",
    "solution_quality",
    "true_omega",
    "unscale_from_unit",
]

__version__ = "0.1.0"
