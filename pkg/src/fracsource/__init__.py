"""Time-fractional diffusion with separated sources: forward solvers and
reconstruction of the source from boundary flux."""

from .errors import (
    AccuracyError,
    FracSourceError,
    InvalidArgumentError,
    NumericError,
)
from .mittag_leffler import MLParams, ml, solution_kernel

__all__ = ["AccuracyError", "FracSourceError", "InvalidArgumentError", "MLParams", "NumericError", "ml",
           "solution_kernel"]
__version__ = "0.1.0"
