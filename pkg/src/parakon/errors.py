"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 2, numerical
failures -> 3, threshold failures -> 4.
"""


class ParakonError(Exception):
    """Base class for all toolkit errors."""


class UsageError(ParakonError):
    """Caller violated an interface contract (shapes, ranges, config)."""


class DomainError(ParakonError):
    """An argument is outside the mathematical domain of the operation."""


class SingularGradientError(DomainError):
    """Operator evaluated at xi = 0; use the singular envelope instead.

    Raised by pointwise operator evaluation to direct callers to
    ``eval_h`` / ``eval_h_tilde``.
    """


class NumericalError(ParakonError):
    """A computation produced NaN/overflow or lost scheme monotonicity."""


class ThresholdError(ParakonError):
    """A quantitative acceptance threshold was not met."""
