"""Structural hypothesis checks: the (p, alpha, k) time-convexity gate, the
block-matrix constraint linking the Hessians, and sample-based audits of the
convexity-type inequality between transformed operators.

Samplers take explicit seeds; reports carry per-sample rows for CSV export
and merge by worst margin.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, NumericalError, UsageError
from .geometry import ConvexPolygon, Domain, Interval, Region
from .means import Weights
from .operators import OperatorSpec, SourceTerm
from .transform import TransformedOperator, eval_G

REL_VIOLATION_TOL = 1e-8
KEY2_TOL = 1e-10

UNIT_SQUARE = ConvexPolygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def check_H1(p: float, alpha: float, k: float) -> bool:
    """Exact closed-form gate: 1/p - 1 + k <= 0 or alpha*(1/p - 1 + k) >= 1.

    For p = 0 the gate is vacuous and always passes.
    """
    if not (0.0 < alpha <= 1.0):
        raise UsageError(f"alpha must lie in (0, 1], got {alpha}")
    if p == 0.0:
        return True
    z = 1.0 / p - 1.0 + k
    return z <= 0.0 or alpha * z >= 1.0


def default_k(spec: OperatorSpec, p: float) -> float:
    """Transform parameter that makes the catalog entry's principal part
    convex in the required sense: 3 - sigma/p for the porous entry
    (restoring its admissible (p, alpha) region), 3 - 1/p otherwise,
    and 1 at p = 0."""
    if p == 0.0:
        return 1.0
    if p > 1.0 or not math.isfinite(p):
        raise DomainError(f"need finite p <= 1, got {p}")
    if spec.kind == "porous":
        return 3.0 - spec.sigma / p
    return 3.0 - 1.0 / p


# ---------------------------------------------------------------------------
# the block-matrix constraint


@dataclass(frozen=True)
class Key2Instance:
    """Matrices (Y, X_1..X_m) tied by the sign-adjusted block inequality."""

    lam: Weights
    Y: np.ndarray
    X: Tuple[np.ndarray, ...]
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise UsageError(f"sign must be +1 or -1, got {self.sign}")
        n = self.Y.shape[0]
        if self.Y.shape != (n, n):
            raise UsageError("Y must be square")
        if len(self.X) != self.lam.m:
            raise UsageError("need one X_i per weight")
        for Xi in self.X:
            if Xi.shape != (n, n):
                raise UsageError("all X_i must match the shape of Y")

    @property
    def m(self) -> int:
        return self.lam.m

    @property
    def n(self) -> int:
        return self.Y.shape[0]


def verify_key2(inst: Key2Instance) -> float:
    """Sign-adjusted minimum eigenvalue of (lam lam^T kron Y) - blockdiag(lam_i X_i);
    >= 0 means the instance is valid."""
    lam = inst.lam.values
    big = np.kron(np.outer(lam, lam), inst.Y)
    m, n = inst.m, inst.n
    for i in range(m):
        sl = slice(i * n, (i + 1) * n)
        big[sl, sl] -= lam[i] * inst.X[i]
    return float(np.linalg.eigvalsh(inst.sign * big).min())


def mean_matrix_margin(inst: Key2Instance) -> float:
    """Margin of the averaged consequence sign*(sum lam_i X_i) <= sign*Y
    (take every block-test vector equal)."""
    avg = sum(w * Xi for w, Xi in zip(inst.lam.values, inst.X))
    return float(np.linalg.eigvalsh(inst.sign * (inst.Y - avg)).min())


def sample_key2(n: int, m: int, lam: Optional[Weights], sign: int, count: int,
                mode: str = "concave-core", seed: int = 0,
                scale: float = 2.0) -> List[Key2Instance]:
    """Draw valid instances.

    concave-core is constructive (100% yield): Y = -sign * A A^T and
    X_i = Y - sign * Q_i with Q_i PSD.  rejection draws dense symmetric
    matrices and filters by the eigenvalue test; it gives up with a
    diagnostic when the yield drops below 0.1%.
    """
    if count < 1:
        raise UsageError("count must be >= 1")
    if mode not in ("concave-core", "rejection"):
        raise UsageError(f"unknown sampling mode {mode!r}")
    if mode == "rejection" and (n > 4 or m > 4):
        raise UsageError("rejection mode is limited to n <= 4, m <= 4")
    rng = np.random.default_rng(seed)
    out: List[Key2Instance] = []

    def draw_weights():
        return lam if lam is not None else Weights(rng.dirichlet(np.ones(m) * 2.0))

    if mode == "concave-core":
        for _ in range(count):
            w = draw_weights()
            A = rng.uniform(-1.0, 1.0, size=(n, n)) * math.sqrt(scale / n)
            Y = -sign * (A @ A.T)
            Xs = []
            for _ in range(m):
                # log-uniform increment scale reaches the X_i ~ Y boundary of
                # the family, where the interesting near-tight instances live
                s = 10.0 ** rng.uniform(-4.0, math.log10(scale))
                B = rng.uniform(-1.0, 1.0, size=(n, n)) * math.sqrt(s / n)
                Xs.append(Y - sign * (B @ B.T))
            out.append(Key2Instance(w, Y, tuple(Xs), sign))
        return out

    attempts = 0
    max_attempts = max(count * 5000, 20000)
    while len(out) < count:
        attempts += 1
        if attempts > max_attempts or (
            attempts >= 2000 and len(out) < attempts * 1e-3
        ):
            raise NumericalError(
                f"rejection sampler yield too low: {len(out)}/{attempts} accepted "
                f"(n={n}, m={m}); use concave-core mode"
            )
        w = draw_weights()
        Y = rng.uniform(-scale, scale, size=(n, n))
        Y = (Y + Y.T) / 2
        Xs = []
        for _ in range(m):
            Xi = rng.uniform(-scale, scale, size=(n, n))
            Xs.append((Xi + Xi.T) / 2)
        inst = Key2Instance(w, Y, tuple(Xs), sign)
        if verify_key2(inst) >= -KEY2_TOL:
            out.append(inst)
    return out


# ---------------------------------------------------------------------------
# hypothesis audit reports


@dataclass
class HypothesisReport:
    """Audit outcome; worst_margin is relative (margin / (1 + |LHS| + |RHS|))."""

    checked: int = 0
    violations: int = 0
    skipped: int = 0
    worst_margin: float = math.inf
    witness: Optional[dict] = None
    rows: List[tuple] = field(default_factory=list)
    label: str = ""

    def record(self, margin_rel: float, lhs: float, rhs: float, witness: dict,
               keep_row: bool) -> None:
        self.checked += 1
        if keep_row:
            self.rows.append((len(self.rows), margin_rel, lhs, rhs))
        if margin_rel < self.worst_margin:
            self.worst_margin = margin_rel
            if margin_rel < -REL_VIOLATION_TOL:
                self.witness = witness
        if margin_rel < -REL_VIOLATION_TOL:
            self.violations += 1

    def passed(self) -> bool:
        return self.violations == 0

    def merged_with(self, other: "HypothesisReport") -> "HypothesisReport":
        out = HypothesisReport(
            checked=self.checked + other.checked,
            violations=self.violations + other.violations,
            skipped=self.skipped + other.skipped,
            worst_margin=min(self.worst_margin, other.worst_margin),
            witness=self.witness if self.worst_margin <= other.worst_margin else other.witness,
            label=self.label or other.label,
        )
        out.rows = self.rows + [(len(self.rows) + i, *r[1:]) for i, r in enumerate(other.rows)]
        return out


def write_report_csv(report: HypothesisReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("sample_id,margin,lhs,rhs\n")
        for row in report.rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
        if report.witness is not None:
            fh.write("# witness: " + _witness_line(report.witness) + "\n")


def _witness_line(witness: dict) -> str:
    parts = []
    for key, val in witness.items():
        arr = np.asarray(val).ravel()
        body = np.array2string(arr, separator=";", precision=6, max_line_width=10**9)
        parts.append(f"{key}={body}")
    return " ".join(parts)


def _draw_interior(domain: Domain, rng) -> np.ndarray:
    lo, hi = domain.bounding_box()
    for _ in range(1000):
        x = rng.uniform(lo, hi)
        if domain.contains(x, tol=1e-9) is Region.INTERIOR:
            return x
    raise NumericalError(f"could not sample an interior point of {domain!r}")


def check_H2(spec_lam: OperatorSpec, specs: Sequence[OperatorSpec],
             domains: Sequence[Domain], k: float, p: float, alpha: float,
             lam: Optional[Weights], count: int, seed: int = 0,
             mode: str = "concave-core", keep_rows: bool = True) -> HypothesisReport:
    """Sample the convexity inequality between the transformed combined
    operator and the weighted transformed members.

    Each sample draws interior points, times and values per member domain, a
    shared nonzero gradient, and a valid matrix instance; the combined
    arguments are the weighted means.  Margins are RHS - LHS, normalized.
    """
    m = len(specs)
    if len(domains) != m:
        raise UsageError("need one domain per member operator")
    dims = {d.dim for d in domains}
    if len(dims) != 1:
        raise UsageError(f"domains have mixed dimensions {dims}")
    n = dims.pop()
    if lam is not None and lam.m != m:
        raise UsageError(f"weights have m={lam.m}, expected {m}")
    sign = 1 if p >= 0 else -1
    h1_ok = check_H1(p, alpha, k)

    T_lam = TransformedOperator(spec_lam, k, p, alpha)
    T_i = [TransformedOperator(s, k, p, alpha) for s in specs]
    rng = np.random.default_rng(seed)
    report = HypothesisReport(label=f"H2[{spec_lam.label()};k={k:g},p={p:g},a={alpha:g}]")
    if not h1_ok:
        report.label += " (warning: H1 fails)"

    for _ in range(count):
        w = lam if lam is not None else Weights(rng.dirichlet(np.ones(m) * 2.0))
        inst = sample_key2(n, m, w, sign, 1, mode=mode,
                           seed=int(rng.integers(0, 2**31)))[0]
        xs = [_draw_interior(d, rng) for d in domains]
        ts = rng.uniform(0.1, 2.0, size=m)
        rs = rng.uniform(0.1, 2.0, size=m)
        xi = rng.uniform(-1.0, 1.0, size=n)
        norm = np.linalg.norm(xi)
        if norm < 1e-12:
            xi[0] = 1.0
            norm = 1.0
        xi *= rng.uniform(0.1, 2.0) / norm
        x_bar = sum(wi * x for wi, x in zip(w.values, xs))
        t_bar = float(w.values @ ts)
        r_bar = float(w.values @ rs)
        try:
            lhs = eval_G(T_lam, x_bar, t_bar, r_bar, xi, inst.Y)
            rhs = sum(
                wi * eval_G(Ti, x, t, r, xi, Xi)
                for wi, Ti, x, t, r, Xi in zip(w.values, T_i, xs, ts, rs, inst.X)
            )
        except (DomainError, OverflowError, FloatingPointError):
            report.skipped += 1
            continue
        scale = 1.0 + abs(lhs) + abs(rhs)
        witness = {
            "x": np.array(xs), "t": ts, "r": rs, "xi": xi,
            "Y": inst.Y, "X": np.array(inst.X), "lam": w.values,
            "lhs": lhs, "rhs": rhs,
        }
        report.record((rhs - lhs) / scale, lhs, rhs, witness, keep_rows)
    return report


def check_H2b(spec: OperatorSpec, k: float, p: float, alpha: float,
              lam: Optional[Weights] = None, count: int = 1000,
              domain: Optional[Domain] = None, seed: int = 0,
              mode: str = "concave-core") -> HypothesisReport:
    """Single-operator, single-convex-domain variant with m = n + 2 members,
    the member count the concavity application works with."""
    domain = domain if domain is not None else UNIT_SQUARE
    if isinstance(domain, Interval):
        n = 1
    elif isinstance(domain, ConvexPolygon):
        n = 2
    else:
        raise UsageError("H2b needs a convex exact domain (interval or polygon)")
    m = n + 2
    if lam is not None and lam.m != m:
        raise UsageError(f"H2b with n={n} needs m={m} weights")
    report = check_H2(spec, [spec] * m, [domain] * m, k, p, alpha, lam, count,
                      seed=seed, mode=mode)
    report.label = f"H2b[{spec.label()};k={k:g},p={p:g},a={alpha:g}]"
    return report


def check_semilinear_condition(f_lam: SourceTerm, f_list: Optional[Sequence[SourceTerm]],
                               p: float, alpha: float, count: int = 1000,
                               m: int = 2, seed: int = 0,
                               domain: Optional[Domain] = None,
                               r_fixed: Optional[float] = None,
                               keep_rows: bool = True) -> HypothesisReport:
    """Sample the concave-combination inequality for the transformed source
    g(x, t, r, xi) = r^(3-1/p) f(x, t^(1/alpha), r^(1/p), (1/p) r^(1/p-1) xi)
    (exponential form at p = 0): combined >= weighted member sum.

    r_fixed pins every member value to one r (degenerate-r samples, probing
    concavity in (x, t) alone)."""
    if f_list is None:
        f_list = [f_lam] * m
    m = len(f_list)
    domain = domain if domain is not None else UNIT_SQUARE
    n = domain.dim
    rng = np.random.default_rng(seed)

    def g(src: SourceTerm, x, t, r, xi):
        if p == 0.0:
            er = math.exp(r)
            return er * float(np.asarray(src(x, t ** (1.0 / alpha), er, er * xi)))
        return r ** (3.0 - 1.0 / p) * float(np.asarray(src(
            x, t ** (1.0 / alpha), r ** (1.0 / p),
            (1.0 / p) * r ** (1.0 / p - 1.0) * xi,
        )))

    report = HypothesisReport(label=f"semilinear[{f_lam.label};p={p:g},a={alpha:g}]")
    for _ in range(count):
        w = Weights(rng.dirichlet(np.ones(m) * 2.0))
        xs = [_draw_interior(domain, rng) for _ in range(m)]
        ts = rng.uniform(0.1, 2.0, size=m)
        rs = np.full(m, r_fixed) if r_fixed is not None else rng.uniform(0.1, 2.0, size=m)
        xi = rng.uniform(-1.0, 1.0, size=n)
        x_bar = sum(wi * x for wi, x in zip(w.values, xs))
        t_bar = float(w.values @ ts)
        r_bar = float(w.values @ rs)
        try:
            lhs_members = sum(wi * g(src, x, t, r, xi) for wi, src, x, t, r in
                              zip(w.values, f_list, xs, ts, rs))
            combined = g(f_lam, x_bar, t_bar, r_bar, xi)
        except (DomainError, OverflowError, FloatingPointError):
            report.skipped += 1
            continue
        scale = 1.0 + abs(combined) + abs(lhs_members)
        witness = {"x": np.array(xs), "t": ts, "r": rs, "xi": xi,
                   "combined": combined, "members": lhs_members, "lam": w.values}
        report.record((combined - lhs_members) / scale, combined, lhs_members,
                      witness, keep_rows)
    return report
