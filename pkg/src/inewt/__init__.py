"""Incremental Newton and incremental Gauss-Newton for finite sums, with executable convergence checks."""

from .engine import NumericalError, RunConfig, RunResult, run, run_cycle
from .gaussnewton import run_ekfs
from .problems import Problem, NLLSProblem, load_problem, make_problem, save_problem
from .stepsize import ConstantNormalized, LinearGrowth, PowerSchedule, Unit, VariableBisection

__all__ = [
    "NumericalError", "RunConfig", "RunResult", "run", "run_cycle", "run_ekfs",
    "Problem", "NLLSProblem", "load_problem", "make_problem", "save_problem",
    "ConstantNormalized", "LinearGrowth", "PowerSchedule", "Unit", "VariableBisection",
]
