"""Catalog of degenerate elliptic operators F(x, t, r, xi, X).

Each entry knows its pointwise value away from xi = 0 (``eval_F``), its
singular envelope at xi = 0 (``eval_h``), and ships with sampling checks
for degenerate ellipticity and properness.  All entries carry a source
term f >= 0 and an accumulated downward perturbation eps.
"""

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DomainError, SingularGradientError, UsageError

KINDS = (
    "laplacian",
    "qlap",
    "pucci_minus",
    "pucci_plus",
    "quasilinear",
    "finsler",
    "porous",
)


@dataclass(frozen=True)
class SourceTerm:
    """Nonnegative source f(x, t, r, xi), vectorization-friendly."""

    fn: Callable
    label: str

    def __call__(self, x, t, r, xi):
        return self.fn(x, t, r, xi)

    def __repr__(self):
        return f"SourceTerm({self.label!r})"

    @staticmethod
    def zero():
        return SourceTerm(lambda x, t, r, xi: 0.0, "constant:0")

    @staticmethod
    def constant(c: float):
        if c < 0:
            raise DomainError(f"source must be nonnegative, got {c}")
        return SourceTerm(lambda x, t, r, xi: c, f"constant:{c:g}")

    @staticmethod
    def linear_r(c: float):
        if c < 0:
            raise DomainError(f"source must be nonnegative, got {c}")
        return SourceTerm(lambda x, t, r, xi: c * r, f"linear-r:{c:g}")

    @staticmethod
    def quadratic_r(c: float):
        if c < 0:
            raise DomainError(f"source must be nonnegative, got {c}")
        return SourceTerm(lambda x, t, r, xi: c * r * r, f"quadratic-r:{c:g}")

    @staticmethod
    def space_poly(coeffs):
        """Polynomial in s = sum of coordinates: f = c0 + c1*s + c2*s^2 + ..."""
        cs = [float(c) for c in coeffs]

        def fn(x, t, r, xi):
            s = np.asarray(x, dtype=float).sum(axis=-1)
            out = np.zeros_like(s, dtype=float)
            for c in reversed(cs):
                out = out * s + c
            return out

        return SourceTerm(fn, "space:poly(" + ",".join(f"{c:g}" for c in cs) + ")")


def parse_source(text: str) -> SourceTerm:
    """Build a source from config strings like "constant:1", "linear-r:0.5",
    "quadratic-r:1", "space:poly(1,-0.5)"."""
    text = text.strip()
    if text in ("zero", "0"):
        return SourceTerm.zero()
    m = re.fullmatch(r"constant:([-\d.eE+]+)", text)
    if m:
        return SourceTerm.constant(float(m.group(1)))
    m = re.fullmatch(r"linear-r:([-\d.eE+]+)", text)
    if m:
        return SourceTerm.linear_r(float(m.group(1)))
    m = re.fullmatch(r"quadratic-r:([-\d.eE+]+)", text)
    if m:
        return SourceTerm.quadratic_r(float(m.group(1)))
    m = re.fullmatch(r"space:poly\(([^)]*)\)", text)
    if m:
        return SourceTerm.space_poly([float(c) for c in m.group(1).split(",")])
    raise UsageError(f"unrecognized source string {text!r}")


@dataclass(frozen=True)
class OperatorSpec:
    """One catalog entry; immutable, evaluation is pure."""

    kind: str
    source: SourceTerm = field(default_factory=SourceTerm.zero)
    eps: float = 0.0
    q: Optional[float] = None          # qlap, in (1, inf]
    a: Optional[float] = None          # pucci, 0 < a <= b
    b: Optional[float] = None
    sigma: Optional[float] = None      # porous, > 1
    coeff: Optional[Callable] = None   # quasilinear/finsler: (x, xi) -> PSD matrix
    coeff_label: str = ""
    coeff_bound: Optional[float] = None  # max eigenvalue bound of coeff, for CFL

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown operator kind {self.kind!r}")
        if self.eps < 0:
            raise DomainError(f"perturbation must be >= 0, got {self.eps}")
        if self.kind == "qlap":
            if self.q is None or not (1.0 < self.q):
                raise DomainError(f"qlap needs q in (1, inf], got {self.q}")
        if self.kind in ("pucci_minus", "pucci_plus"):
            if self.a is None or self.b is None or not (0.0 < self.a <= self.b):
                raise DomainError(f"pucci needs 0 < a <= b, got a={self.a}, b={self.b}")
        if self.kind == "porous":
            if self.sigma is None or not (self.sigma > 1.0):
                raise DomainError(f"porous needs sigma > 1, got {self.sigma}")
        if self.kind in ("quasilinear", "finsler") and self.coeff is None:
            raise UsageError(f"{self.kind} entries need an analytic coefficient matrix")
        _sample_source_sign(self.source)

    def label(self) -> str:
        if self.kind == "laplacian":
            base = "laplacian"
        elif self.kind == "qlap":
            base = "qlap:inf" if self.q == math.inf else f"qlap:{self.q:g}"
        elif self.kind == "pucci_minus":
            base = f"pucci-:{self.a:g},{self.b:g}"
        elif self.kind == "pucci_plus":
            base = f"pucci+:{self.a:g},{self.b:g}"
        elif self.kind == "porous":
            base = f"porous:{self.sigma:g}"
        else:
            base = f"{self.kind}:{self.coeff_label}"
        if self.eps:
            base += f"(eps={self.eps:g})"
        return base

    def gradient_singular(self, dim: int = 2) -> bool:
        """Whether the principal part depends on the gradient direction.

        The normalized q-Laplacian is direction-free in one dimension
        (the factor is q - 1 for every nonzero gradient)."""
        if self.kind == "qlap":
            return dim >= 2
        return self.kind in ("quasilinear", "finsler")

    def lambda_bound(self, u_max: Optional[float] = None) -> float:
        """Diffusion-coefficient bound used by the CFL condition."""
        if self.kind == "laplacian":
            return 1.0
        if self.kind == "qlap":
            return 1.0 if self.q == math.inf else max(1.0, self.q - 1.0)
        if self.kind in ("pucci_minus", "pucci_plus"):
            return self.b
        if self.kind in ("quasilinear", "finsler"):
            if self.coeff_bound is None:
                raise UsageError("quasilinear entries need coeff_bound for the CFL rule")
            return self.coeff_bound
        if self.kind == "porous":
            if u_max is None:
                raise UsageError("porous CFL needs the current max of u")
            return max(self.sigma * max(u_max, 0.0) ** (self.sigma - 1.0), 1e-30)
        raise UsageError(self.kind)


def _sample_source_sign(source: SourceTerm) -> None:
    rng = np.random.default_rng(0)
    for n in (1, 2):
        x = rng.uniform(0.0, 1.0, size=(16, n))
        t = rng.uniform(0.0, 2.0, size=16)
        r = rng.uniform(0.0, 2.0, size=16)
        xi = rng.uniform(-1.0, 1.0, size=(16, n))
        for i in range(16):
            val = float(np.asarray(source(x[i], t[i], r[i], xi[i])))
            if val < -1e-12:
                raise DomainError(
                    f"source {source.label!r} is negative ({val}) at x={x[i]}, r={r[i]}"
                )


# -- catalog constructors ---------------------------------------------------


def laplacian(source: SourceTerm = None) -> OperatorSpec:
    return OperatorSpec("laplacian", source or SourceTerm.zero())


def qlap(q: float, source: SourceTerm = None) -> OperatorSpec:
    return OperatorSpec("qlap", source or SourceTerm.zero(), q=q)


def pucci_minus(a: float, b: float, source: SourceTerm = None) -> OperatorSpec:
    return OperatorSpec("pucci_minus", source or SourceTerm.zero(), a=a, b=b)


def pucci_plus(a: float, b: float, source: SourceTerm = None) -> OperatorSpec:
    """Maximal Pucci operator; kept as the negative control for the
    convexity-type hypothesis checks."""
    return OperatorSpec("pucci_plus", source or SourceTerm.zero(), a=a, b=b)


def porous(sigma: float, source: SourceTerm = None) -> OperatorSpec:
    return OperatorSpec("porous", source or SourceTerm.zero(), sigma=sigma)


def finsler_weighted(weights, source: SourceTerm = None) -> OperatorSpec:
    """Finsler entry for the weighted l2 gauge J(xi) = sqrt(sum w_i xi_i^2);
    the coefficient matrix (half the Hessian of J^2) is diag(w) exactly."""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise DomainError(f"gauge weights must be positive, got {w}")
    W = np.diag(w)
    return OperatorSpec(
        "finsler",
        source or SourceTerm.zero(),
        coeff=lambda x, xi: W[: len(xi), : len(xi)],
        coeff_label="w=" + ",".join(f"{v:g}" for v in w),
        coeff_bound=float(w.max()),
    )


def quasilinear(coeff: Callable, source: SourceTerm = None, label: str = "custom",
                coeff_bound: Optional[float] = None) -> OperatorSpec:
    return OperatorSpec(
        "quasilinear",
        source or SourceTerm.zero(),
        coeff=coeff,
        coeff_label=label,
        coeff_bound=coeff_bound,
    )


def parse_operator(text: str, source: SourceTerm = None) -> OperatorSpec:
    """Build an operator from config strings like "laplacian", "qlap:3",
    "qlap:inf", "pucci-:1,2", "pucci+:1,2", "porous:2", "finsler:w=1,4"."""
    text = text.strip()
    if text == "laplacian":
        return laplacian(source)
    m = re.fullmatch(r"qlap:(inf|[\d.eE+-]+)", text)
    if m:
        return qlap(math.inf if m.group(1) == "inf" else float(m.group(1)), source)
    m = re.fullmatch(r"pucci([-+]):([\d.eE+-]+),([\d.eE+-]+)", text)
    if m:
        ctor = pucci_minus if m.group(1) == "-" else pucci_plus
        return ctor(float(m.group(2)), float(m.group(3)), source)
    m = re.fullmatch(r"porous:([\d.eE+-]+)", text)
    if m:
        return porous(float(m.group(1)), source)
    m = re.fullmatch(r"finsler:w=([\d.,eE+-]+)", text)
    if m:
        return finsler_weighted([float(v) for v in m.group(1).split(",")], source)
    raise UsageError(
        f"unrecognized operator string {text!r}; quasilinear entries need the API"
    )


# -- pointwise evaluation ---------------------------------------------------


def _as_matrix(X, n: int) -> np.ndarray:
    M = np.atleast_2d(np.asarray(X, dtype=float))
    if M.shape != (n, n):
        raise UsageError(f"Hessian argument must be {n}x{n}, got {M.shape}")
    return M


def pucci_extremes(X: np.ndarray, a: float, b: float) -> Tuple[float, float]:
    """(M^-, M^+): extremal traces inf/sup of tr(AX) over aI <= A <= bI."""
    e = np.linalg.eigvalsh(X)
    pos = e[e >= 0].sum()
    neg = e[e < 0].sum()
    return a * pos + b * neg, b * pos + a * neg


def eval_F(spec: OperatorSpec, x, t: float, r: float, xi, X) -> float:
    """F(x, t, r, xi, X) minus the accumulated perturbation.

    Raises SingularGradientError at xi = 0 (use eval_h there) and
    DomainError for r < 0.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    n = xi.size
    norm2 = float(xi @ xi)
    if norm2 == 0.0:
        raise SingularGradientError("xi = 0: evaluate the singular envelope eval_h instead")
    if r < 0:
        raise DomainError(f"r must be >= 0, got {r}")
    M = _as_matrix(X, n)
    f = float(np.asarray(spec.source(np.atleast_1d(np.asarray(x, float)), t, r, xi)))

    if spec.kind == "laplacian":
        principal = -float(np.trace(M))
    elif spec.kind == "qlap":
        quad = float(xi @ M @ xi) / norm2
        if spec.q == math.inf:
            principal = -quad
        else:
            principal = -(float(np.trace(M)) + (spec.q - 2.0) * quad)
    elif spec.kind == "pucci_minus":
        principal = -pucci_extremes(M, spec.a, spec.b)[0]
    elif spec.kind == "pucci_plus":
        principal = -pucci_extremes(M, spec.a, spec.b)[1]
    elif spec.kind in ("quasilinear", "finsler"):
        A = np.asarray(spec.coeff(np.atleast_1d(np.asarray(x, float)), xi), dtype=float)
        principal = -float(np.tensordot(A, M))
    elif spec.kind == "porous":
        s = spec.sigma
        if r == 0.0 and s < 2.0:
            raise DomainError("porous entry is singular at r = 0 for sigma < 2")
        principal = -s * r ** (s - 1.0) * float(np.trace(M)) \
            - s * (s - 1.0) * r ** (s - 2.0) * norm2
    else:  # pragma: no cover
        raise UsageError(spec.kind)
    return principal - f - spec.eps


def eval_h(spec: OperatorSpec, x, t: float, r: float) -> float:
    """Singular envelope h(x, t, r): the common semicontinuous envelope value
    of F at (xi, X) = (0, 0), which is -f(x, t, r, 0) - eps for every entry."""
    if r < 0:
        raise DomainError(f"r must be >= 0, got {r}")
    xpt = np.atleast_1d(np.asarray(x, dtype=float))
    f = float(np.asarray(spec.source(xpt, t, r, np.zeros_like(xpt))))
    return -f - spec.eps


def perturb(spec: OperatorSpec, eps: float) -> OperatorSpec:
    """Lower F by eps > 0 (accumulates with prior perturbations)."""
    if eps <= 0:
        raise UsageError(f"perturbation must be positive, got {eps}")
    return replace(spec, eps=spec.eps + eps)


# -- structural sampling checks ---------------------------------------------


@dataclass(frozen=True)
class MarginReport:
    """Outcome of a sampling check: min margin >= -tol means pass."""

    checked: int
    violations: int
    min_margin: float
    witness: Optional[dict] = None

    def passed(self, tol: float = 1e-10) -> bool:
        return self.violations == 0 and self.min_margin >= -tol


def _sample_args(rng, n: int, spec: OperatorSpec):
    x = rng.uniform(0.0, 1.0, size=n)
    t = rng.uniform(0.0, 2.0)
    r = rng.uniform(0.1, 2.0)
    xi = rng.uniform(-1.0, 1.0, size=n)
    while float(xi @ xi) < 1e-4:
        xi = rng.uniform(-1.0, 1.0, size=n)
    return x, t, r, xi


def verify_ellipticity(spec: OperatorSpec, sample_count: int = 1000, seed: int = 0,
                       tol: float = 1e-10) -> MarginReport:
    """Sample check of degenerate ellipticity: adding a PSD increment to the
    Hessian argument must not increase F."""
    if sample_count < 1:
        raise UsageError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    worst, witness, violations = math.inf, None, 0
    for _ in range(sample_count):
        n = int(rng.integers(1, 3))
        x, t, r, xi = _sample_args(rng, n, spec)
        X2 = rng.uniform(-2.0, 2.0, size=(n, n))
        X2 = (X2 + X2.T) / 2.0
        V = rng.uniform(-1.0, 1.0, size=(n, n))
        P = V @ V.T
        margin = eval_F(spec, x, t, r, xi, X2) - eval_F(spec, x, t, r, xi, X2 + P)
        if margin < worst:
            worst = margin
            witness = {"x": x, "t": t, "r": r, "xi": xi, "X2": X2, "P": P}
        if margin < -tol:
            violations += 1
    return MarginReport(sample_count, violations, worst,
                        witness if violations else None)


def verify_properness(spec: OperatorSpec, c: float, sample_count: int = 1000,
                      seed: int = 0, tol: float = 1e-10) -> MarginReport:
    """Sample check of properness: r -> F(..., r, ...) + c*r must be
    nondecreasing."""
    if sample_count < 1:
        raise UsageError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    worst, witness, violations = math.inf, None, 0
    for _ in range(sample_count):
        n = int(rng.integers(1, 3))
        x, t, _, xi = _sample_args(rng, n, spec)
        r1, r2 = sorted(rng.uniform(0.1, 2.0, size=2))
        X = rng.uniform(-2.0, 2.0, size=(n, n))
        X = (X + X.T) / 2.0
        margin = (eval_F(spec, x, t, r2, xi, X) + c * r2) - (
            eval_F(spec, x, t, r1, xi, X) + c * r1
        )
        if margin < worst:
            worst = margin
            witness = {"x": x, "t": t, "r1": r1, "r2": r2, "xi": xi, "X": X}
        if margin < -tol:
            violations += 1
    return MarginReport(sample_count, violations, worst,
                        witness if violations else None)
