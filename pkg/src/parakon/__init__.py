"""parakon: numerical checks for power concavity of parabolic PDE solutions
under Minkowski combination of their domains."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    DomainError,
    NumericalError,
    ParakonError,
    SingularGradientError,
    ThresholdError,
    UsageError,
)
from .means import PowerParams, Weights, p_mean, parabolic_combination  # noqa: F401
