"""Weighted power means and the parabolic combination of space-time points.

The mean ``M_p(a; lam)`` runs from ``min`` (p = -inf) through the geometric
mean (p = 0) to ``max`` (p = +inf).  p = 0 and p = +-inf always use the
closed-form cases, never a numeric limit.  Conventions on ``[0, inf)^m``:
zero entries evaluate literally for p > 0, force the result 0 for p = 0,
and force the result 0 for p < 0.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, UsageError

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Weights:
    """A point of the open simplex: m >= 2 strictly positive entries summing to 1.

    Entries whose sum deviates from 1 by at most 1e-12 are renormalized on
    construction; larger deviations are rejected.
    """

    values: np.ndarray

    def __init__(self, values: Sequence[float]):
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise UsageError(f"need at least 2 weights, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("weights must be finite")
        if np.any(vals <= 0.0):
            raise DomainError(f"weights must be strictly positive, got {vals}")
        s = float(vals.sum())
        if abs(s - 1.0) > WEIGHT_TOL:
            raise UsageError(f"weights sum to {s!r}, expected 1 within {WEIGHT_TOL}")
        object.__setattr__(self, "values", vals / s)
        self.values.setflags(write=False)

    @property
    def m(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    @staticmethod
    def pair(lam1: float) -> "Weights":
        """Two-point weights (lam1, 1 - lam1)."""
        return Weights([lam1, 1.0 - lam1])


@dataclass(frozen=True)
class PowerParams:
    """Concavity exponent p (extended real, <= 1), time exponent alpha in (0, 1],
    and the optional transform parameter k."""

    p: float
    alpha: float
    k: Optional[float] = field(default=None)

    def __post_init__(self):
        if math.isnan(self.p) or self.p > 1.0 or self.p == math.inf:
            raise DomainError(f"p must lie in [-inf, 1], got {self.p}")
        if not (0.0 < self.alpha <= 1.0):
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.k is not None and not math.isfinite(self.k):
            raise DomainError(f"k must be finite when present, got {self.k}")

    def h1_satisfied(self) -> bool:
        """Whether the time-convexity condition on (p, alpha, k) holds."""
        if self.k is None:
            raise UsageError("k is not set on these parameters")
        from .hypothesis import check_H1

        return check_H1(self.p, self.alpha, self.k)


def _coerce_weights(lam) -> np.ndarray:
    if isinstance(lam, Weights):
        return lam.values
    return Weights(lam).values


def p_mean(a, lam, p: float) -> float:
    """Weighted power mean M_p(a; lam) of a nonnegative tuple.

    Parameters
    ----------
    a : sequence of m nonnegative finite reals
    lam : Weights or sequence coercible to Weights
    p : extended real (use math.inf / -math.inf for the extremes)

    Returns
    -------
    float
        The mean, with the zero-entry conventions described in the module
        docstring.

    Raises
    ------
    DomainError
        On negative or non-finite entries.
    UsageError
        On a length mismatch with the weights.
    """
    w = _coerce_weights(lam)
    vals = np.asarray(a, dtype=float)
    if vals.ndim != 1 or vals.size != w.size:
        raise UsageError(f"expected {w.size} values, got shape {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise DomainError("entries must be finite")
    if np.any(vals < 0.0):
        raise DomainError(f"entries must be nonnegative, got {vals}")

    if np.all(vals == vals[0]):  # idempotence, exact for every p
        return float(vals[0])
    if math.isinf(p):
        return float(vals.max()) if p > 0 else float(vals.min())
    if p == 0.0:
        if np.any(vals == 0.0):
            return 0.0
        return float(np.exp(np.dot(w, np.log(vals))))
    if p < 0.0 and np.any(vals == 0.0):
        return 0.0
    if p == 1.0:
        return float(np.dot(w, vals))

    # log-space evaluation keeps large |p| from over/underflowing
    pos = vals > 0.0
    z = np.log(w[pos]) + p * np.log(vals[pos])
    top = z.max()
    return float(np.exp((top + np.log(np.exp(z - top).sum())) / p))


def parabolic_combination(points, lam, alpha: float):
    """Combine m space-time points: weighted average in space, alpha-mean in time.

    ``points`` is a sequence of (x, t) pairs with matching spatial dimension
    and t >= 0.  Returns ``(sum_i lam_i x_i, M_alpha(t; lam))``.
    """
    w = _coerce_weights(lam)
    if not (0.0 < alpha <= 1.0):
        raise UsageError(f"alpha must lie in (0, 1], got {alpha}")
    if len(points) != w.size:
        raise UsageError(f"expected {w.size} points, got {len(points)}")
    xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in points]
    ts = np.asarray([t for _, t in points], dtype=float)
    if np.any(ts < 0.0):
        raise DomainError(f"times must be nonnegative, got {ts}")
    dims = {x.shape for x in xs}
    if len(dims) != 1:
        raise UsageError(f"inconsistent spatial shapes {dims}")
    x_out = sum(wi * xi for wi, xi in zip(w, xs))
    t_out = p_mean(ts, Weights(w), alpha)
    return x_out, t_out
