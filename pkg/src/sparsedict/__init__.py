"""Online sparse dictionary learning with iterative shrinkage solvers."""

__version__ = "0.1.0"

from .estimators import OnlineDictionaryLearning, ShrinkageCoder
from .learn import LearnConfig, learn_dictionary, update_dictionary
from .solvers import BpdnProblem, bpdn_objective, kkt_residual, soft_threshold, solve
from .types import (
    DimensionError,
    Dictionary,
    FormatError,
    GrayImage,
    SolverError,
    SolverId,
    SolverSettings,
)

__all__ = [
    "BpdnProblem",
    "DimensionError",
    "Dictionary",
    "FormatError",
    "GrayImage",
    "LearnConfig",
    "OnlineDictionaryLearning",
    "ShrinkageCoder",
    "SolverError",
    "SolverId",
    "SolverSettings",
    "bpdn_objective",
    "kkt_residual",
    "learn_dictionary",
    "soft_threshold",
    "solve",
    "update_dictionary",
]
