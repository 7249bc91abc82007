"""Sparse recovery from partially saturated measurements, with a CT overexposure toolkit."""

from .sensing import (
    InvalidSpecError,
    SaturatedObservations,
    SyntheticProblemSpec,
    generate_problem,
    snr_db,
)
from .solvers import SolverParams, solve_lasso, solve_m1bitcsc, solve_m1bitcsr, solve_rdcs

__version__ = "0.1.0"
