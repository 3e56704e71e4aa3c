"""Symbolic-option hierarchical reinforcement learning with planning, semantic skill reuse
and natural-language constraints, on the Office World gridworld."""

from .kernels import BACKEND
from .symbolic import ActionModel, Domain, Proposition, SymbolicState, SymbolicTransition, apply, is_executable
from .planner import Plan, PlanningProblem, solve, validate_plan
from .controller import ControllerConfig, MetaController
from .config import ExperimentConfig, load_config
from .harness import run_experiment, summarize

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ActionModel", "Domain", "Proposition", "SymbolicState", "SymbolicTransition", "apply",
    "is_executable", "Plan", "PlanningProblem", "solve", "validate_plan", "ControllerConfig", "MetaController",
    "ExperimentConfig", "load_config", "run_experiment", "summarize",
]
