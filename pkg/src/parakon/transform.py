"""The change of variables v = u^p(x, t^(1/alpha)) (log u for p = 0), the
transformed operators it induces, and grid-level forward/inverse resampling.

The transformed operator evaluates the base entry at the chain-rule
arguments; its own singular envelope scales the base envelope by r^k.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, SingularGradientError, UsageError
from .operators import OperatorSpec, eval_F, eval_h
from .solver import GridFunction


@dataclass(frozen=True)
class TransformedOperator:
    base: OperatorSpec
    k: float
    p: float
    alpha: float

    def __post_init__(self):
        if not math.isfinite(self.p) or self.p > 1.0:
            raise DomainError(f"transform needs finite p <= 1, got {self.p}")
        if not (0.0 < self.alpha <= 1.0):
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not math.isfinite(self.k):
            raise DomainError(f"k must be finite, got {self.k}")


def eval_G(T: TransformedOperator, x, t: float, r: float, xi, X) -> float:
    """Transformed operator value at (x, t, r, xi, X) in the new variables."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if float(xi @ xi) == 0.0:
        raise SingularGradientError(
            "xi = 0: evaluate the transformed envelope eval_h_tilde instead"
        )
    if t <= 0:
        raise DomainError(f"transformed time must be positive, got {t}")
    n = xi.size
    M = np.atleast_2d(np.asarray(X, dtype=float))
    if M.shape != (n, n):
        raise UsageError(f"Hessian argument must be {n}x{n}, got {M.shape}")
    p, k, alpha = T.p, T.k, T.alpha
    t_orig = t ** (1.0 / alpha)
    if p == 0.0:
        er = math.exp(r)
        return math.exp(k * r) * eval_F(
            T.base, x, t_orig, er, er * xi, er * (M + np.outer(xi, xi))
        )
    if r <= 0:
        raise DomainError(f"transformed value must be positive for p != 0, got r={r}")
    r_orig = r ** (1.0 / p)
    grad = (1.0 / p) * r ** (1.0 / p - 1.0) * xi
    hess = (1.0 / p) * r ** (1.0 / p - 1.0) * M + (
        (1.0 - p) / (p * p)
    ) * r ** (1.0 / p - 2.0) * np.outer(xi, xi)
    return r**k * eval_F(T.base, x, t_orig, r_orig, grad, hess)


def eval_h_tilde(T: TransformedOperator, x, t: float, r: float) -> float:
    """Transformed singular envelope r^k h(x, t^(1/alpha), r^(1/p))."""
    if t <= 0:
        raise DomainError(f"transformed time must be positive, got {t}")
    if T.p == 0.0:
        return math.exp(T.k * r) * eval_h(T.base, x, t ** (1.0 / T.alpha), math.exp(r))
    if r <= 0:
        raise DomainError(f"transformed value must be positive for p != 0, got r={r}")
    return r**T.k * eval_h(T.base, x, t ** (1.0 / T.alpha), r ** (1.0 / T.p))


def laplacian_closed_form(T: TransformedOperator, x, t: float, r: float, xi, X) -> float:
    """Closed form of the transformed Laplacian entry at k = 3 - 1/p, used as
    an independent cross-check of eval_G."""
    if T.base.kind != "laplacian" or T.p == 0.0:
        raise UsageError("closed form applies to the Laplacian entry with p != 0")
    if abs(T.k - (3.0 - 1.0 / T.p)) > 1e-12:
        raise UsageError("closed form applies at k = 3 - 1/p")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    M = np.atleast_2d(np.asarray(X, dtype=float))
    p = T.p
    f = float(np.asarray(T.base.source(
        np.atleast_1d(np.asarray(x, float)),
        t ** (1.0 / T.alpha),
        r ** (1.0 / p),
        (1.0 / p) * r ** (1.0 / p - 1.0) * xi,
    )))
    return (
        -(r * r / p) * float(np.trace(M))
        - ((1.0 - p) / (p * p)) * r * float(xi @ xi)
        - r ** (3.0 - 1.0 / p) * (f + T.base.eps)
    )


# ---------------------------------------------------------------------------
# grid-level transforms


def _resample_nodes(gf: GridFunction, query_times: np.ndarray) -> np.ndarray:
    """Monotone cubic (PCHIP) resampling of every node's time series."""
    if gf.nt < 2:
        return np.repeat(gf.values, len(query_times), axis=0)
    interp = PchipInterpolator(gf.times, gf.values, axis=0, extrapolate=False)
    q = np.clip(query_times, 0.0, gf.t_final)
    return np.asarray(interp(q))


def forward_transform(u: GridFunction, p: float, alpha: float,
                      n_tau: Optional[int] = None) -> GridFunction:
    """v(x, tau) = u(x, tau^(1/alpha))^p (log u for p = 0) on a uniform
    tau-grid.

    For p <= 0 the boundary and initial values of u are zero and v blows up
    there; those entries are stored as 0 placeholders and flagged in
    meta["blowup_boundary"], and interior nodes with u <= 0 at tau > 0 are
    rejected.
    """
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if not math.isfinite(p) or p > 1.0:
        raise DomainError(f"transform needs finite p <= 1, got {p}")
    n_tau = n_tau or min(u.nt, 129)
    if n_tau < 2:
        raise UsageError("need at least two tau slices")
    tau_final = u.t_final**alpha
    dtau = tau_final / (n_tau - 1)
    taus = dtau * np.arange(n_tau)
    resampled = _resample_nodes(u, taus ** (1.0 / alpha))

    mask = u.raster.mask
    meta = dict(u.meta, p=p, alpha=alpha, time_variable="tau")
    if p > 0:
        vals = np.maximum(resampled, 0.0) ** p
        return GridFunction(u.raster, dtau, vals, meta)

    interior = resampled[1:, mask]
    if np.any(interior <= 0.0):
        n_bad, flat = np.argwhere(interior <= 0.0)[0]
        node = tuple(np.argwhere(mask)[flat])
        raise DomainError(
            f"u must be positive on interior nodes for p <= 0; "
            f"u={interior[n_bad, flat]:g} at node {node}, tau-slice {n_bad + 1}"
        )
    vals = np.zeros_like(resampled)
    body = resampled[1:, mask]
    vals[1:, mask] = np.log(body) if p == 0.0 else body**p
    meta["blowup_boundary"] = True
    return GridFunction(u.raster, dtau, vals, meta)


def inverse_transform(v: GridFunction, p: float, alpha: float,
                      n_t: Optional[int] = None) -> GridFunction:
    """Exact inverse map: u(x, t) = v(x, t^alpha)^(1/p) (exp v for p = 0),
    resampled onto a uniform t-grid; boundary and initial data return to 0."""
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if not math.isfinite(p) or p > 1.0:
        raise DomainError(f"transform needs finite p <= 1, got {p}")
    n_t = n_t or v.nt
    if n_t < 2:
        raise UsageError("need at least two time slices")
    t_final = v.t_final ** (1.0 / alpha)
    dt = t_final / (n_t - 1)
    ts = dt * np.arange(n_t)
    resampled = _resample_nodes(v, ts**alpha)

    mask = v.raster.mask
    meta = {km: vv for km, vv in v.meta.items() if km not in ("time_variable", "blowup_boundary")}
    meta["time_variable"] = "t"
    if p > 0:
        vals = np.maximum(resampled, 0.0) ** (1.0 / p)
        return GridFunction(v.raster, dt, vals, meta)
    vals = np.zeros_like(resampled)
    body = resampled[1:, mask]
    vals[1:, mask] = np.exp(body) if p == 0.0 else np.maximum(body, 1e-300) ** (1.0 / p)
    return GridFunction(v.raster, dt, vals, meta)
