"""The space-time Minkowski convolution of solution fields and the
power-concavity deficit measurements.

The v-space search is an exact grid sup/inf over two-member decompositions
(iterated pairwise for m > 2), with bilinear/linear interpolation of the
second member; the u-space envelope maps through the power/time transform.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, UsageError
from .geometry import Domain, Raster, minkowski_combination, rasterize
from .means import Weights, p_mean
from .solver import GridFunction
from .transform import forward_transform, inverse_transform

INTERP_PAD = 1e-9


@dataclass
class EnvelopeField:
    """Envelope values on a target lattice with argmax decompositions.

    argmax stores, per node, the first member's decomposition point
    (x_1 components, then its time coordinate); the partner point follows
    from the combination identity.  feasible marks nodes where at least one
    admissible decomposition existed.
    """

    raster: Raster
    dt: float
    values: np.ndarray
    argmax: np.ndarray
    feasible: np.ndarray
    lam: Weights
    p: float
    alpha: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    def as_gridfunction(self, fill: float = 0.0) -> GridFunction:
        vals = np.where(self.feasible, self.values, fill)
        meta = {k: v for k, v in self.meta.items() if k != "v_field"}
        return GridFunction(self.raster, self.dt, vals, meta)

    def save_pkgf(self, path) -> None:
        self.as_gridfunction().save_pkgf(path)

    def export_csv(self, path, times: Optional[Sequence[float]] = None) -> None:
        """CSV rows (t, node coords, value, feasible, decomposition point)."""
        idx = np.argwhere(self.raster.support)
        coords = self.raster.origin[None, :] + self.raster.h * idx.astype(float)
        sel = range(self.nt) if times is None else [
            int(round(t / self.dt)) for t in times
        ]
        dim = self.raster.dim
        with open(path, "w") as fh:
            cols = ["t"] + list("xy"[:dim]) + ["value", "feasible"] \
                + [f"arg_x1_{c}" for c in "xy"[:dim]] + ["arg_t1"]
            fh.write(",".join(cols) + "\n")
            for n in sel:
                t = n * self.dt
                for k in range(len(idx)):
                    node = (n,) + tuple(idx[k])
                    row = [repr(float(t))]
                    row += [repr(float(c)) for c in coords[k]]
                    row.append(repr(float(self.values[node])))
                    row.append("true" if self.feasible[node] else "false")
                    row += [repr(float(v)) for v in self.argmax[node]]
                    fh.write(",".join(row) + "\n")


def _candidate_nodes(r: Raster, strict: bool) -> np.ndarray:
    sel = r.mask if strict else r.support
    return np.argwhere(sel)


def _space_interp(block: np.ndarray, r: Raster, pts: np.ndarray, strict: bool):
    """Interpolate the (n_t, *shape) block at pts (N, dim); returns
    (vals (n_t, N), ok (N,)).  strict requires every touched node to be an
    interior node (blow-up boundaries for p <= 0)."""
    shape = np.array(r.mask.shape)
    rel = (pts - r.origin[None, :]) / r.h
    ok = np.all(rel >= -INTERP_PAD, axis=1) & np.all(
        rel <= shape[None, :] - 1 + INTERP_PAD, axis=1
    )
    rel = np.clip(rel, 0.0, shape[None, :] - 1.0)
    i0 = np.minimum(rel.astype(int), shape[None, :] - 2)
    frac = rel - i0
    if r.dim == 1:
        corners = [(np.array([0]), (1 - frac[:, 0])), (np.array([1]), frac[:, 0])]
    else:
        corners = [
            (np.array([0, 0]), (1 - frac[:, 0]) * (1 - frac[:, 1])),
            (np.array([0, 1]), (1 - frac[:, 0]) * frac[:, 1]),
            (np.array([1, 0]), frac[:, 0] * (1 - frac[:, 1])),
            (np.array([1, 1]), frac[:, 0] * frac[:, 1]),
        ]
    vals = np.zeros((block.shape[0], len(pts)))
    for corner, w in corners:
        idx = tuple((i0 + corner[None, :]).T)
        vals += w[None, :] * block[(slice(None),) + idx]
        if strict:
            touched = (w > 1e-12) & ~r.mask[idx]
            ok &= ~touched
    return vals, ok


def _pair_convolve(v1: GridFunction, v2: GridFunction, lam1: float,
                   target_raster: Raster, taus: np.ndarray, maximize: bool,
                   strict: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact grid search of sup/inf of lam1 v1(x1,t1) + lam2 v2(x2,t2) over
    decompositions of every target node."""
    lam2 = 1.0 - lam1
    r1, r2 = v1.raster, v2.raster
    tgt_idx = np.argwhere(target_raster.support)
    tgt_pts = target_raster.origin[None, :] + target_raster.h * tgt_idx.astype(float)
    n_tgt = len(tgt_pts)
    nt = len(taus)

    sign = 1.0 if maximize else -1.0
    best_score = np.full((nt, n_tgt), -math.inf)  # sign * value, max-tracked
    arg = np.zeros((nt, n_tgt, r1.dim + 1))
    feasible = np.zeros((nt, n_tgt), dtype=bool)

    cand = _candidate_nodes(r1, strict)
    cand_pts = r1.origin[None, :] + r1.h * cand.astype(float)
    tau2_min = v2.dt if strict else 0.0
    j_floor = 1 if strict else 0

    for j1 in range(j_floor, v1.nt):
        tau1 = j1 * v1.dt
        tau2 = (taus - lam1 * tau1) / lam2
        valid_t = (tau2 >= tau2_min - 1e-12) & (tau2 <= v2.t_final + 1e-12)
        if not valid_t.any():
            continue
        rows = np.flatnonzero(valid_t)
        tn = np.clip(tau2[rows] / v2.dt, float(j_floor), v2.nt - 1.0)
        j0 = np.clip(tn.astype(int), j_floor, max(v2.nt - 2, j_floor))
        wt = np.clip(tn - j0, 0.0, 1.0)
        j1b = np.minimum(j0 + 1, v2.nt - 1)
        block = ((1 - wt).reshape((-1,) + (1,) * r2.dim) * v2.values[j0]
                 + wt.reshape((-1,) + (1,) * r2.dim) * v2.values[j1b])
        v1_slice = v1.values[j1]
        for k in range(len(cand)):
            node = tuple(cand[k])
            x1 = cand_pts[k]
            x2 = (tgt_pts - lam1 * x1[None, :]) / lam2
            v2_vals, ok = _space_interp(block, r2, x2, strict)
            score = sign * (lam1 * v1_slice[node] + lam2 * v2_vals)
            score[:, ~ok] = -math.inf
            improve = score > best_score[rows]
            if improve.any():
                best_score[rows] = np.where(improve, score, best_score[rows])
                arg_block = arg[rows]
                arg_block[improve] = np.concatenate([x1, [tau1]])
                arg[rows] = arg_block
            feasible[rows] |= ok[None, :]

    values = np.zeros((nt,) + target_raster.mask.shape)
    argmax = np.zeros((nt,) + target_raster.mask.shape + (r1.dim + 1,))
    feas = np.zeros((nt,) + target_raster.mask.shape, dtype=bool)
    flat = tuple(tgt_idx.T)
    for n in range(nt):
        values[(n,) + flat] = np.where(feasible[n], sign * best_score[n], 0.0)
        argmax[(n,) + flat] = arg[n]
        feas[(n,) + flat] = feasible[n]
    return values, argmax, feas


def _common_time_grid(vs: Sequence[GridFunction]) -> Tuple[float, int]:
    dts = {round(v.dt, 15) for v in vs}
    nts = {v.nt for v in vs}
    if len(dts) != 1 or len(nts) != 1:
        raise UsageError("member fields must share the time grid")
    return vs[0].dt, vs[0].nt


def compute_V(vs: Sequence[GridFunction], domains: Sequence[Domain], lam: Weights,
              p: float, targets: Optional[Tuple[Raster, np.ndarray]] = None) -> EnvelopeField:
    """Minkowski convolution in v-variables: sup (p >= 0) or inf (p < 0) of
    sum lam_i v_i(x_i, t_i) over grid decompositions of each target node.

    m > 2 reduces by iterated pairwise combination (flagged in meta when the
    domains differ)."""
    m = len(vs)
    if len(domains) != m or lam.m != m:
        raise UsageError("need matching members, domains and weights")
    dt, nt = _common_time_grid(vs)
    strict = p < 0 or any(v.meta.get("blowup_boundary") for v in vs)
    maximize = p >= 0

    if targets is None:
        h = min(v.raster.h for v in vs)
        omega = minkowski_combination(domains, lam)
        target_raster = omega if isinstance(omega, Raster) and abs(omega.h - h) < 1e-12 \
            else rasterize(omega, h)
        taus = dt * np.arange(nt)
    else:
        target_raster, taus = targets
        taus = np.asarray(taus, dtype=float)

    meta = {"iterated": m > 2, "p": p, "time_variable": "tau"}
    if m > 2 and any(d is not domains[0] for d in domains[1:]):
        meta["pairwise_caveat"] = True

    if m == 2:
        values, argmax, feas = _pair_convolve(
            vs[0], vs[1], lam.values[0], target_raster, taus, maximize, strict
        )
    else:
        # fold members left to right with renormalized pair weights
        acc_field = vs[0]
        acc_domain = domains[0]
        acc_w = lam.values[0]
        for i in range(1, m - 1):
            pair_w = acc_w / (acc_w + lam.values[i])
            inter_domain = minkowski_combination(
                [acc_domain, domains[i]], Weights([pair_w, 1 - pair_w])
            )
            inter_raster = rasterize(inter_domain, min(acc_field.raster.h, vs[i].raster.h))
            vals, _, feas_i = _pair_convolve(
                acc_field, vs[i], pair_w, inter_raster, taus, maximize, strict
            )
            acc_field = GridFunction(inter_raster, dt, np.where(feas_i, vals, 0.0),
                                     {"blowup_boundary": strict})
            acc_domain = inter_domain
            acc_w += lam.values[i]
        values, argmax, feas = _pair_convolve(
            acc_field, vs[-1], acc_w, target_raster, taus, maximize, strict
        )

    if maximize and not strict:
        missing = target_raster.mask & ~feas[min(1, len(taus) - 1)]
        if missing.any():
            raise DomainError(
                f"{int(missing.sum())} interior target nodes have no feasible decomposition"
            )
    return EnvelopeField(target_raster, float(taus[1] - taus[0]) if len(taus) > 1 else dt,
                         values, argmax, feas, lam, p, meta=meta)


def compute_U(us: Sequence[GridFunction], domains: Sequence[Domain], lam: Weights,
              p: float, alpha: float, targets: Optional[Tuple[Raster, np.ndarray]] = None,
              n_tau: Optional[int] = None) -> EnvelopeField:
    """The space-time power convolution of solution fields: transform the
    members, convolve in v-variables, and map back to u-variables on a
    uniform t-grid."""
    vs = [forward_transform(u, p, alpha, n_tau=n_tau) for u in us]
    dt, _ = _common_time_grid(vs)
    V = compute_V(vs, domains, lam, p, targets)

    v_gf = V.as_gridfunction()
    u_back = inverse_transform(v_gf, p, alpha)
    times = u_back.times
    # argmax time coordinates return to the original variable t = tau^(1/alpha)
    arg = np.empty((u_back.nt,) + V.argmax.shape[1:])
    feas = np.empty((u_back.nt,) + V.feasible.shape[1:], dtype=bool)
    for n, t in enumerate(times):
        j = min(int(round((t**alpha) / V.dt)), V.nt - 1)
        arg[n] = V.argmax[j]
        feas[n] = V.feasible[j]
    arg[..., -1] = np.maximum(arg[..., -1], 0.0) ** (1.0 / alpha)
    u_vals = np.where(feas, u_back.values, 0.0)
    meta = dict(V.meta, time_variable="t")
    meta["v_field"] = V  # the tau-grid search result, exact at its own nodes
    return EnvelopeField(V.raster, u_back.dt, u_vals, arg, feas, lam, p,
                         alpha=alpha, meta=meta)


def compare_envelope(U: EnvelopeField, u_lam: GridFunction) -> float:
    """Max excess max(U - u_lam) over feasible support nodes; the subsolution
    plus comparison argument predicts values <= discretization tolerance."""
    r = U.raster
    if r.mask.shape != u_lam.raster.mask.shape or abs(r.h - u_lam.raster.h) > 1e-12 \
            or not np.allclose(r.origin, u_lam.raster.origin):
        raise UsageError("envelope and reference field live on different lattices")
    idx = np.argwhere(r.support)
    pts = r.origin[None, :] + r.h * idx.astype(float)
    worst = -math.inf
    for n, t in enumerate(U.times):
        if t > u_lam.t_final + 1e-12:
            break
        ref = u_lam.interp_many(pts, np.full(len(pts), min(t, u_lam.t_final)))
        sel = U.feasible[(n,) + tuple(idx.T)]
        if sel.any():
            diff = U.values[(n,) + tuple(idx.T)][sel] - ref[sel]
            worst = max(worst, float(diff.max()))
    return worst


def argmax_boundary_fraction(U: EnvelopeField, members: Sequence[GridFunction]) -> float:
    """Fraction of feasible interior argmax decompositions whose recorded
    point sits within one cell of a member Dirichlet node."""
    r1 = members[0].raster
    inner = U.raster.mask
    total, hits = 0, 0
    for n in range(1, U.nt):
        for idx in np.argwhere(inner & U.feasible[n]):
            node = (n,) + tuple(idx)
            x1 = U.argmax[node][: r1.dim]
            near = r1.nearest_index(x1)
            if near is None:
                continue
            total += 1
            if r1.flags[near]:
                hits += 1
    return hits / total if total else 0.0


# ---------------------------------------------------------------------------
# concavity deficits


@dataclass(frozen=True)
class ConcavityReport:
    checked: int
    skipped: int
    min_deficit: float
    witness: Optional[dict]
    tolerance: float

    def passed(self) -> bool:
        return self.min_deficit >= -self.tolerance


def write_deficit_csv(report: ConcavityReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("checked,skipped,min_deficit,tolerance,passed\n")
        fh.write(
            f"{report.checked},{report.skipped},{report.min_deficit!r},"
            f"{report.tolerance!r},{'true' if report.passed() else 'false'}\n"
        )
        if report.witness:
            parts = []
            for key, val in report.witness.items():
                arr = np.asarray(val).ravel()
                parts.append(f"{key}=" + ";".join(repr(float(v)) for v in arr))
            fh.write("# witness: " + " ".join(parts) + "\n")


def lipschitz_estimate(v: GridFunction) -> float:
    """Max discrete space/time slope over the support, used to scale the
    interpolation tolerance."""
    sup = v.raster.support
    worst = 0.0
    vals = np.where(sup, v.values, np.nan)
    for axis in range(1, v.values.ndim):
        d = np.abs(np.diff(vals, axis=axis)) / v.raster.h
        if np.isfinite(d).any():
            worst = max(worst, float(np.nanmax(d)))
    if v.nt > 1:
        d = np.abs(np.diff(vals, axis=0)) / v.dt
        if np.isfinite(d).any():
            worst = max(worst, float(np.nanmax(d)))
    return worst


def deficit_tolerance(u: GridFunction, p: float, alpha: float) -> float:
    """5 (h + dtau) L with L the measured slope of the transformed field."""
    v = forward_transform(u, p, alpha) if abs(p - 1.0) > 0 or alpha != 1.0 else u
    return 5.0 * (u.raster.h + v.dt) * max(lipschitz_estimate(v), 1e-12)


def concavity_deficit(u: GridFunction, p: float, alpha: float,
                      lam_samples: Optional[Sequence[float]] = None,
                      pair_count: int = 2000, seed: int = 0,
                      tolerance: Optional[float] = None) -> ConcavityReport:
    """Sampled two-point power-concavity deficit

        u(lam x1 + (1-lam) x2, M_alpha(t; lam)) - M_p(u(x1,t1), u(x2,t2); lam)

    over interior node pairs and a weight sweep; min deficit above the
    interpolation tolerance certifies the concavity property on the grid."""
    if pair_count < 1:
        raise UsageError("pair_count must be >= 1")
    rng = np.random.default_rng(seed)
    lams = list(lam_samples) if lam_samples is not None else \
        [0.1 * k for k in range(1, 10)] + list(rng.uniform(0.02, 0.98, size=4))
    r = u.raster
    nodes = np.argwhere(r.mask)
    if len(nodes) == 0:
        raise UsageError("field has no interior nodes")
    pts_all = r.origin[None, :] + r.h * nodes.astype(float)
    tol = tolerance if tolerance is not None else deficit_tolerance(u, p, alpha)

    pick = rng.integers(0, len(nodes), size=(pair_count, 2))
    tn = rng.integers(1, max(u.nt, 2), size=(pair_count, 2))
    x1, x2 = pts_all[pick[:, 0]], pts_all[pick[:, 1]]
    t1, t2 = tn[:, 0] * u.dt, tn[:, 1] * u.dt
    u1 = u.values[(tn[:, 0],) + tuple(nodes[pick[:, 0]].T)]
    u2 = u.values[(tn[:, 1],) + tuple(nodes[pick[:, 1]].T)]

    checked = skipped = 0
    worst = math.inf
    witness = None
    for lam in lams:
        w = Weights([lam, 1.0 - lam])
        xc = lam * x1 + (1 - lam) * x2
        tc = (lam * t1**alpha + (1 - lam) * t2**alpha) ** (1.0 / alpha)
        inside = np.ones(pair_count, dtype=bool)
        rel = (xc - r.origin[None, :]) / r.h
        shape = np.array(r.mask.shape)
        inside &= np.all(rel >= 0, axis=1) & np.all(rel <= shape[None, :] - 1, axis=1)
        idx0 = np.minimum(rel.astype(int), shape[None, :] - 2)
        for corner in np.ndindex(*(2,) * r.dim):
            inside &= r.support[tuple((idx0 + np.array(corner)[None, :]).T)]
        vals = u.interp_many(xc[inside], np.minimum(tc[inside], u.t_final))
        mixed = np.array([
            p_mean([a, b], w, p) for a, b in zip(u1[inside], u2[inside])
        ])
        deficits = vals - mixed
        checked += int(inside.sum())
        skipped += int((~inside).sum())
        if len(deficits):
            k = int(np.argmin(deficits))
            if deficits[k] < worst:
                worst = float(deficits[k])
                sel = np.flatnonzero(inside)[k]
                witness = {
                    "x1": x1[sel], "t1": t1[sel], "x2": x2[sel], "t2": t2[sel],
                    "lam": lam, "combo_x": xc[sel], "combo_t": tc[sel],
                    "u_combo": vals[k], "mean": mixed[k],
                }
    return ConcavityReport(checked, skipped, worst, witness, tol)
