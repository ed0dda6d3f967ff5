"""Config-driven experiment harness.

Each named experiment runs one scenario end to end, writes CSV tables and
SVG figures into the output directory, and records a machine-readable
summary (key=value lines).  Identical config + seed gives byte-identical
CSV output.
"""

import difflib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import plots
from .envelope import compare_envelope, compute_U, concavity_deficit, lipschitz_estimate
from .errors import DomainError, ParakonError, UsageError
from .geometry import ConvexPolygon, Domain, Interval, Raster, load_polygon, minkowski_combination, rasterize
from .hypothesis import (
    check_H1,
    check_H2,
    check_H2b,
    check_semilinear_condition,
    default_k,
    write_report_csv,
)
from .means import Weights
from .operators import OperatorSpec, parse_operator, parse_source
from .solver import (
    SchemeConfig,
    cfl_dt,
    check_boundary_growth,
    check_time_monotonicity,
    solve,
)

UNIT_SQUARE = ConvexPolygon([[0, 0], [1, 0], [1, 1], [0, 1]])


@dataclass
class ExperimentConfig:
    kind: str
    operator: str = "laplacian"
    source: str = "constant:1"
    domain: str = "interval:0,1"
    domain2: str = "interval:0,1"
    p: float = 0.5
    alpha: float = 0.5
    k: object = "auto"
    h: float = 1 / 64
    dt: object = "auto"
    T: float = 1.0
    n_tau: int = 65
    lam: float = 0.5
    samples: int = 10000
    pairs: int = 2000
    mode: str = "concave-core"
    h2b: bool = False
    semilinear: bool = False
    p_list: Sequence[float] = field(default_factory=lambda: [-1.0, 0.3, 0.5])
    alpha_list: Sequence[float] = field(default_factory=lambda: [0.4, 0.5, 1.0])
    out_dir: str = "parakon-out"
    seed: int = 0

    def resolved_k(self, spec: OperatorSpec) -> float:
        if isinstance(self.k, str):
            if self.k != "auto":
                raise UsageError(f"k must be a number or 'auto', got {self.k!r}")
            return default_k(spec, self.p)
        return float(self.k)


KIND_DEFAULTS = {
    "torsion-1d": {"h": 1 / 128, "T": 2.0},
    "heat-2d": {"domain": "unit-square", "h": 1 / 32, "T": 1.0},
    "qlap-2d": {"operator": "qlap:3", "domain": "unit-square", "h": 1 / 32, "T": 1.0},
    "pucci-2d": {"operator": "pucci-:1,2", "domain": "unit-square", "h": 1 / 32, "T": 1.0},
    "porous-1d": {"operator": "porous:2", "h": 1 / 64, "T": 1.5},
    "minkowski-pair": {"h": 1 / 64, "T": 1.0},
    "h2-audit": {"domain": "unit-square"},
    "h1-table": {},
}


def parse_domain(text: str) -> Domain:
    text = text.strip()
    if text in ("unit-square", "square"):
        return UNIT_SQUARE
    if text.startswith("interval:"):
        a, b = (float(v) for v in text.split(":", 1)[1].split(","))
        return Interval(a, b)
    if text.startswith("polygon:"):
        return load_polygon(text.split(":", 1)[1])
    raise UsageError(f"unrecognized domain {text!r}")


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


_SECTION_KEYS = {
    "experiment": {"kind", "seed", "out"},
    "problem": {"operator", "source", "domain", "domain2"},
    "params": {"p", "alpha", "k", "lam"},
    "grid": {"h", "dt", "T", "n_tau"},
    "audit": {"samples", "pairs", "mode", "h2b", "semilinear", "p_list", "alpha_list"},
}


def build_config(kind: str, data: Optional[dict] = None, out: Optional[str] = None,
                 seed: Optional[int] = None) -> ExperimentConfig:
    if kind not in REGISTRY:
        hint = difflib.get_close_matches(kind, REGISTRY, n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise UsageError(f"unknown experiment {kind!r}{extra}")
    opts = dict(KIND_DEFAULTS[kind])
    data = data or {}
    for section, keys in _SECTION_KEYS.items():
        body = data.get(section, {})
        for key, val in body.items():
            if key not in keys:
                raise UsageError(f"unknown key {key!r} in [{section}]")
            if key == "out":
                opts["out_dir"] = val
            elif key != "kind":
                opts[key] = val
    if out is not None:
        opts["out_dir"] = out
    if seed is not None:
        opts["seed"] = seed
    elif "seed" in data.get("experiment", {}):
        opts["seed"] = int(data["experiment"]["seed"])
    cfg = ExperimentConfig(kind=kind, **opts)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: ExperimentConfig) -> None:
    if not (cfg.p <= 1.0) or math.isnan(cfg.p):
        raise UsageError(f"p must be <= 1, got {cfg.p}")
    if not (0.0 < cfg.alpha <= 1.0):
        raise UsageError(f"alpha must lie in (0, 1], got {cfg.alpha}")
    if cfg.h <= 0 or cfg.T <= 0:
        raise UsageError(f"need h > 0 and T > 0, got h={cfg.h}, T={cfg.T}")
    if not (0.0 < cfg.lam < 1.0):
        raise UsageError(f"pair weight must lie in (0, 1), got {cfg.lam}")
    if cfg.samples < 1 or cfg.pairs < 1:
        raise UsageError("samples and pairs must be >= 1")
    for p in cfg.p_list:
        if p > 1.0:
            raise UsageError(f"p_list entry {p} exceeds 1")
    for a in cfg.alpha_list:
        if not (0.0 < a <= 1.0):
            raise UsageError(f"alpha_list entry {a} outside (0, 1]")
    parse_operator(cfg.operator)
    parse_source(cfg.source)
    parse_domain(cfg.domain)
    parse_domain(cfg.domain2)


def validate_config(path, kind: Optional[str] = None) -> List[str]:
    """Full parse and range check without running; returns diagnostics."""
    diagnostics: List[str] = []
    try:
        data = load_config(path)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        return [f"cannot parse {path}: {exc}"]
    kind = kind or data.get("experiment", {}).get("kind")
    if kind is None:
        return ["no experiment kind given (set [experiment].kind or pass one)"]
    try:
        build_config(str(kind), data)
    except (UsageError, DomainError, ParakonError) as exc:
        diagnostics.append(str(exc))
    except OSError as exc:  # e.g. a referenced polygon file does not exist
        diagnostics.append(f"referenced file problem: {exc}")
    return diagnostics


# ---------------------------------------------------------------------------
# shared pieces


@dataclass
class ExperimentResult:
    kind: str
    ok: bool
    summary: Dict[str, object]
    out_dir: Path
    artifacts: List[str]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_summary(path, summary: Dict[str, object]) -> None:
    lines = [f"{key}={_fmt(summary[key])}" for key in sorted(summary)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_summary(path) -> Dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, val = line.split("=", 1)
            out[key] = val
    return out


def _write_csv(path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _auto_stride(spec: OperatorSpec, h: float, dim: int, T: float, cap: int = 1500) -> int:
    dt_est = cfl_dt(spec, h, dim, u_max=1.0 if spec.kind == "porous" else None)
    return max(1, int(math.ceil(T / dt_est / cap)))


def _solve_problem(cfg: ExperimentConfig, domain: Domain, spec: OperatorSpec,
                   stride: Optional[int] = None):
    stride = stride or _auto_stride(spec, cfg.h, domain.dim, cfg.T)
    scheme = SchemeConfig(h=cfg.h, dt=cfg.dt, T=cfg.T, store_stride=stride)
    return solve(spec, domain, scheme)


def _concavity_block(u, cfg: ExperimentConfig, summary: dict) -> bool:
    report = concavity_deficit(u, cfg.p, cfg.alpha, pair_count=cfg.pairs,
                               seed=cfg.seed)
    summary["concavity_min_deficit"] = report.min_deficit
    summary["concavity_tolerance"] = report.tolerance
    summary["concavity_checked"] = report.checked
    summary["concavity_pass"] = report.passed()
    return report.passed()


# ---------------------------------------------------------------------------
# the experiments


def _torsion_exact(domain: Interval, c: float, xs: np.ndarray) -> np.ndarray:
    a, b = domain.a, domain.b
    return c * (xs - a) * (b - xs) / 2.0


def run_torsion_1d(cfg: ExperimentConfig, out: Path):
    spec = parse_operator(cfg.operator, parse_source(cfg.source))
    domain = parse_domain(cfg.domain)
    u = _solve_problem(cfg, domain, spec, stride=1)
    xs = u.raster.axes()[0]
    summary: Dict[str, object] = {"experiment": cfg.kind, "seed": cfg.seed,
                                  "h": cfg.h, "T": cfg.T, "p": cfg.p, "alpha": cfg.alpha}
    artifacts = []

    exact = None
    if spec.kind == "laplacian" and cfg.source.startswith("constant:"):
        exact = _torsion_exact(domain, float(cfg.source.split(":")[1]), xs)
        err = float(np.abs(u.values[-1] - np.where(u.raster.support, exact, 0.0)).max())
        summary["steady_sup_error"] = err
    mono = check_time_monotonicity(u)
    summary["time_monotonicity_min"] = mono
    conc_ok = _concavity_block(u, cfg, summary)

    from .geometry import normal_ext

    rhos = [2.0**-j for j in range(3, 8)]
    probes = [(normal_ext(domain, [domain.a]), u.t_final),
              (normal_ext(domain, [domain.b]), u.t_final)]
    growth_p = check_boundary_growth(u, cfg.p, cfg.alpha, probes, rhos)
    growth_1 = check_boundary_growth(u, 1.0, cfg.alpha, probes, rhos)
    summary["growth_strictly_increasing"] = all(g.strictly_increasing for g in growth_p)
    summary["growth_indicator_p"] = min(g.divergence_indicator for g in growth_p)
    summary["growth_indicator_one"] = max(g.divergence_indicator for g in growth_1)

    rows = [(repr(float(x)), repr(float(uf)), repr(float(ex)) if exact is not None else "",)
            for x, uf, ex in zip(xs, u.values[-1], exact if exact is not None else xs * 0)]
    _write_csv(out / "profile.csv", ["x", "u_final", "exact"], rows)
    growth_rows = []
    for gi, g in enumerate(growth_p):
        for rho, ratio, ratio1 in zip(g.rhos, g.ratios, growth_1[gi].ratios):
            growth_rows.append((gi, repr(float(rho)), repr(float(ratio)), repr(float(ratio1))))
    _write_csv(out / "growth.csv", ["probe", "rho", "ratio_p", "ratio_p1"], growth_rows)
    artifacts += ["profile.csv", "growth.csv"]

    series = {"computed": u.values[-1]}
    if exact is not None:
        series["exact"] = np.where(u.raster.support, exact, 0.0)
    plots.line_plot(out / "profile.svg", xs, series, title="final profile")
    plots.line_plot(out / "growth.svg", growth_p[0].rhos,
                    {"p": growth_p[0].ratios, "p=1": growth_1[0].ratios},
                    xlabel="rho", ylabel="ratio", title="boundary growth", logy=True)
    artifacts += ["profile.svg", "growth.svg"]

    ok = mono >= -1e-12 and conc_ok and summary["growth_strictly_increasing"]
    if "steady_sup_error" in summary:
        ok = ok and summary["steady_sup_error"] <= 1e-3
    summary["ok"] = ok
    return summary, ok, artifacts


def _run_2d(cfg: ExperimentConfig, out: Path):
    spec = parse_operator(cfg.operator, parse_source(cfg.source))
    domain = parse_domain(cfg.domain)
    u = _solve_problem(cfg, domain, spec)
    summary: Dict[str, object] = {"experiment": cfg.kind, "seed": cfg.seed,
                                  "operator": spec.label(), "h": cfg.h, "T": cfg.T,
                                  "p": cfg.p, "alpha": cfg.alpha}
    mono = check_time_monotonicity(u)
    summary["time_monotonicity_min"] = mono
    summary["final_max"] = float(u.values[-1].max())
    summary["min_interior"] = u.meta["min_interior"]
    conc_ok = _concavity_block(u, cfg, summary)

    idx = np.argwhere(u.raster.support)
    rows = [
        (repr(float(u.raster.node_coords(i)[0])), repr(float(u.raster.node_coords(i)[1])),
         repr(float(u.values[(-1,) + tuple(i)])))
        for i in idx
    ]
    _write_csv(out / "final_slice.csv", ["x", "y", "u"], rows)
    lo, hi = u.raster.bounding_box()
    arr = np.where(u.raster.support, u.values[-1], np.nan)
    plots.heatmap(out / "final_slice.svg", arr, (lo[0], hi[0], lo[1], hi[1]),
                  title=f"{spec.label()} final slice")
    ok = mono >= -1e-12 and conc_ok
    summary["ok"] = ok
    return summary, ok, ["final_slice.csv", "final_slice.svg"]


def run_heat_2d(cfg, out):
    return _run_2d(cfg, out)


def run_qlap_2d(cfg, out):
    return _run_2d(cfg, out)


def run_pucci_2d(cfg, out):
    return _run_2d(cfg, out)


def run_porous_1d(cfg: ExperimentConfig, out: Path):
    spec = parse_operator(cfg.operator, parse_source(cfg.source))
    domain = parse_domain(cfg.domain)
    summary: Dict[str, object] = {"experiment": cfg.kind, "seed": cfg.seed,
                                  "operator": spec.label(), "h": cfg.h, "T": cfg.T,
                                  "p": cfg.p, "alpha": cfg.alpha}
    u = _solve_problem(cfg, domain, spec, stride=1)
    xs = u.raster.axes()[0]
    if cfg.source.startswith("constant:") and spec.kind == "porous":
        c = float(cfg.source.split(":")[1])
        exact = _torsion_exact(domain, c, xs) ** (1.0 / spec.sigma)
        summary["steady_sup_error"] = float(
            np.abs(u.values[-1] - np.where(u.raster.support, exact, 0.0)).max()
        )
    mono = check_time_monotonicity(u)
    summary["time_monotonicity_min"] = mono
    summary["nonnegative"] = bool(u.values.min() >= -1e-12)

    # self-convergence at a transient time with CFL-matched steps
    T_star = min(1 / 16, cfg.T / 4)
    diffs = []
    fields = []
    for level, hh in enumerate([cfg.h, cfg.h / 2, cfg.h / 4]):
        scheme = SchemeConfig(h=hh, dt=hh * hh / 8.0, T=T_star)
        fields.append(solve(spec, domain, scheme))
    for coarse, fine in zip(fields, fields[1:]):
        xs_c = coarse.raster.axes()[0]
        ref = fine.interp_many(xs_c[:, None], np.full(len(xs_c), coarse.t_final))
        diffs.append(float(np.abs(coarse.values[-1] - ref).max()))
    order = math.log2(diffs[0] / diffs[1]) if diffs[1] > 0 else math.inf
    summary["self_convergence_order"] = order

    k = cfg.resolved_k(spec)
    summary["k"] = k
    summary["h1_admissible"] = check_H1(cfg.p, cfg.alpha, k)
    conc_ok = _concavity_block(u, cfg, summary)

    rows = [(repr(float(x)), repr(float(v))) for x, v in zip(xs, u.values[-1])]
    _write_csv(out / "profile.csv", ["x", "u_final"], rows)
    plots.line_plot(out / "profile.svg", xs, {"computed": u.values[-1]},
                    title=f"porous final profile (order {order:.2f})")
    ok = mono >= -1e-12 and summary["nonnegative"] and order >= 1.0 and conc_ok
    summary["ok"] = ok
    return summary, ok, ["profile.csv", "profile.svg"]


def run_minkowski_pair(cfg: ExperimentConfig, out: Path):
    spec = parse_operator(cfg.operator, parse_source(cfg.source))
    dom1, dom2 = parse_domain(cfg.domain), parse_domain(cfg.domain2)
    lam = Weights([cfg.lam, 1.0 - cfg.lam])
    omega = minkowski_combination([dom1, dom2], lam)
    target = omega if isinstance(omega, Raster) else rasterize(omega, cfg.h)

    u1 = _solve_problem(cfg, dom1, spec)
    u2 = u1 if dom2 is dom1 or _same_domain(dom1, dom2) else _solve_problem(cfg, dom2, spec)
    u_lam = _solve_problem(cfg, target, spec)

    taus = (u1.t_final**cfg.alpha) * np.arange(cfg.n_tau) / (cfg.n_tau - 1)
    U = compute_U([u1, u2], [dom1, dom2], lam, cfg.p, cfg.alpha,
                  targets=(u_lam.raster, taus), n_tau=cfg.n_tau)
    v_field = U.meta["v_field"].as_gridfunction()
    L = lipschitz_estimate(v_field)
    tol = 5.0 * (cfg.h + U.meta["v_field"].dt) * max(L, 1e-12)
    excess = compare_envelope(U, u_lam)

    summary: Dict[str, object] = {
        "experiment": cfg.kind, "seed": cfg.seed, "operator": spec.label(),
        "p": cfg.p, "alpha": cfg.alpha, "lam": cfg.lam, "h": cfg.h,
        "max_excess": excess, "tolerance": tol, "lipschitz_v": L,
        "identical_members": _same_domain(dom1, dom2),
    }
    if summary["identical_members"]:
        summary["max_abs_gap"] = max(excess, 0.0)
    ok = excess <= tol
    summary["ok"] = ok

    xs = u_lam.raster.axes()[0] if u_lam.raster.dim == 1 else None
    if xs is not None:
        n_final = U.nt - 1
        rows = [
            (repr(float(x)), repr(float(U.values[n_final, i])),
             repr(float(u_lam.values[-1, i])))
            for i, x in enumerate(xs)
        ]
        _write_csv(out / "envelope.csv", ["x", "U", "u_lambda"], rows)
        plots.line_plot(out / "envelope.svg", xs,
                        {"U": U.values[n_final], "u_lambda": u_lam.values[-1]},
                        title="power convolution vs combined solution")
        artifacts = ["envelope.csv", "envelope.svg"]
    else:
        artifacts = []
    return summary, ok, artifacts


def _same_domain(d1: Domain, d2: Domain) -> bool:
    if isinstance(d1, Interval) and isinstance(d2, Interval):
        return d1.a == d2.a and d1.b == d2.b
    if isinstance(d1, ConvexPolygon) and isinstance(d2, ConvexPolygon):
        return d1.vertices.shape == d2.vertices.shape and np.allclose(
            d1.vertices, d2.vertices
        )
    return d1 is d2


def run_h2_audit(cfg: ExperimentConfig, out: Path):
    spec = parse_operator(cfg.operator, parse_source(cfg.source))
    domain = parse_domain(cfg.domain)
    k = cfg.resolved_k(spec)
    report = check_H2(spec, [spec, spec], [domain, domain], k, cfg.p, cfg.alpha,
                      None, cfg.samples, seed=cfg.seed, mode=cfg.mode)
    expect_violations = spec.kind == "pucci_plus"
    summary: Dict[str, object] = {
        "experiment": cfg.kind, "seed": cfg.seed, "operator": spec.label(),
        "k": k, "p": cfg.p, "alpha": cfg.alpha, "mode": cfg.mode,
        "h1_ok": check_H1(cfg.p, cfg.alpha, k),
        "checked": report.checked, "violations": report.violations,
        "skipped": report.skipped, "worst_margin": report.worst_margin,
        "expect_violations": expect_violations,
    }
    artifacts = ["margins.csv", "margins.svg"]
    write_report_csv(report, out / "margins.csv")
    plots.histogram(out / "margins.svg", [r[1] for r in report.rows],
                    title=f"H2 margins: {spec.label()}")
    if report.witness is not None:
        summary["witness"] = "see margins.csv"
    if cfg.h2b:
        rep_b = check_H2b(spec, k, cfg.p, cfg.alpha, count=cfg.samples,
                          domain=domain, seed=cfg.seed, mode=cfg.mode)
        summary["h2b_violations"] = rep_b.violations
        summary["h2b_worst_margin"] = rep_b.worst_margin
        write_report_csv(rep_b, out / "margins_h2b.csv")
        artifacts.append("margins_h2b.csv")
    if cfg.semilinear:
        rep_s = check_semilinear_condition(spec.source, None, cfg.p, cfg.alpha,
                                           count=cfg.samples, seed=cfg.seed,
                                           domain=domain)
        summary["semilinear_violations"] = rep_s.violations
        summary["semilinear_worst_margin"] = rep_s.worst_margin
    ok = (report.violations > 0) if expect_violations else (report.violations == 0)
    summary["ok"] = ok
    return summary, ok, artifacts


def run_h1_table(cfg: ExperimentConfig, out: Path):
    spec = parse_operator(cfg.operator, parse_source(cfg.source))
    rows = []
    admissible = 0
    for p in cfg.p_list:
        for alpha in cfg.alpha_list:
            k = default_k(spec, p) if isinstance(cfg.k, str) else float(cfg.k)
            verdict = check_H1(p, alpha, k)
            admissible += int(verdict)
            row = [repr(float(p)), repr(float(alpha)), repr(float(k)), verdict]
            if spec.kind == "porous":
                row.append(repr(float(2 * p - spec.sigma + 1.0)))
            rows.append(row)
    header = ["p", "alpha", "k", "h1"]
    if spec.kind == "porous":
        header.append("gate")
    _write_csv(out / "h1_table.csv", header, rows)
    summary = {
        "experiment": cfg.kind, "seed": cfg.seed, "operator": spec.label(),
        "admissible": admissible, "total": len(rows), "ok": True,
    }
    return summary, True, ["h1_table.csv"]


REGISTRY = {
    "torsion-1d": (run_torsion_1d, "1D constant-source flow on [0,1]: steady error, concavity, growth"),
    "heat-2d": (run_heat_2d, "2D constant-source heat flow on the unit square: monotonicity + concavity"),
    "qlap-2d": (run_qlap_2d, "normalized q-Laplacian flow on the unit square"),
    "pucci-2d": (run_pucci_2d, "minimal Pucci flow on the unit square (wide stencil)"),
    "porous-1d": (run_porous_1d, "porous-medium flow on [0,1]: convergence order + concavity gate"),
    "minkowski-pair": (run_minkowski_pair, "two-domain power convolution vs the combined-domain solution"),
    "h2-audit": (run_h2_audit, "sampled convexity-inequality audit for one operator"),
    "h1-table": (run_h1_table, "closed-form (p, alpha, k) admissibility table"),
}


def list_experiments() -> List[Tuple[str, str]]:
    return [(name, doc) for name, (_, doc) in REGISTRY.items()]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute one experiment; writes artifacts + summary.txt under the
    configured output directory."""
    if config.kind not in REGISTRY:
        hint = difflib.get_close_matches(config.kind, REGISTRY, n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise UsageError(f"unknown experiment {config.kind!r}{extra}")
    out = Path(os.environ.get("PARAKON_OUT", config.out_dir)) / config.kind
    out.mkdir(parents=True, exist_ok=True)
    fn = REGISTRY[config.kind][0]
    summary, ok, artifacts = fn(config, out)
    write_summary(out / "summary.txt", summary)
    return ExperimentResult(config.kind, ok, summary, out, artifacts + ["summary.txt"])
