"""Bounded 1D/2D domains: containment, boundary normals, Minkowski
combinations, and rasterization onto the solver lattice.

Exact shapes are intervals and strictly convex CCW polygons; everything
else lives on a raster (binary node mask + spacing h).  Polygon corners
get angle-bisector inward normals; boundary probing elsewhere in the
toolkit sticks to edge interiors.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import DomainError, UsageError
from .means import Weights

EXACT_TOL = 1e-9  # default boundary band for exact shapes


class Region(str, Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class BoundaryPoint:
    """A probe point with its inward unit normal (zero in the interior)
    and distance to the boundary."""

    x: np.ndarray
    nu: np.ndarray
    dist: float


class Domain:
    """Base class; see Interval, ConvexPolygon, Raster."""

    dim: int

    def contains(self, x, tol: Optional[float] = None) -> Region:
        raise NotImplementedError

    def boundary_distance(self, x) -> float:
        raise NotImplementedError

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def default_tol(self) -> float:
        return EXACT_TOL


def _as_point(x, dim: int) -> np.ndarray:
    pt = np.atleast_1d(np.asarray(x, dtype=float))
    if pt.shape != (dim,):
        raise UsageError(f"expected a point of dimension {dim}, got shape {pt.shape}")
    return pt


class Interval(Domain):
    """[a, b] with a < b."""

    dim = 1

    def __init__(self, a: float, b: float):
        a, b = float(a), float(b)
        if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
            raise DomainError(f"need finite a < b, got [{a}, {b}]")
        self.a, self.b = a, b

    def __repr__(self):
        return f"Interval({self.a}, {self.b})"

    def contains(self, x, tol=None):
        tol = self.default_tol() if tol is None else tol
        v = float(_as_point(x, 1)[0])
        if min(v - self.a, self.b - v) > tol:
            return Region.INTERIOR
        if v < self.a - tol or v > self.b + tol:
            return Region.OUTSIDE
        return Region.BOUNDARY

    def boundary_distance(self, x):
        v = float(_as_point(x, 1)[0])
        return min(abs(v - self.a), abs(self.b - v))

    def bounding_box(self):
        return np.array([self.a]), np.array([self.b])


class ConvexPolygon(Domain):
    """Strictly convex polygon, vertices stored CCW."""

    dim = 2

    def __init__(self, vertices: Sequence[Sequence[float]]):
        verts = np.asarray(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise UsageError(f"need >= 3 planar vertices, got shape {verts.shape}")
        if _signed_area(verts) < 0:
            verts = verts[::-1].copy()
        crosses = _edge_crosses(verts)
        scale = max(1.0, float(np.abs(verts).max())) ** 2
        if np.any(crosses <= 1e-12 * scale):
            raise DomainError("vertices are not in strictly convex CCW order")
        self.vertices = verts
        self.vertices.setflags(write=False)

    def __repr__(self):
        return f"ConvexPolygon({len(self.vertices)} vertices)"

    def _edges(self):
        v = self.vertices
        return v, np.roll(v, -1, axis=0) - v

    def contains(self, x, tol=None):
        tol = self.default_tol() if tol is None else tol
        pt = _as_point(x, 2)
        starts, edges = self._edges()
        lens = np.linalg.norm(edges, axis=1)
        rel = pt[None, :] - starts
        signed = (edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]) / lens
        if float(signed.min()) > tol:  # beyond tol inside every edge line
            return Region.INTERIOR
        return Region.BOUNDARY if self.boundary_distance(pt) <= tol else Region.OUTSIDE

    def boundary_distance(self, x):
        pt = _as_point(x, 2)
        starts, edges = self._edges()
        t = np.einsum("ij,ij->i", pt[None, :] - starts, edges) / np.einsum(
            "ij,ij->i", edges, edges
        )
        t = np.clip(t, 0.0, 1.0)
        nearest = starts + t[:, None] * edges
        return float(np.linalg.norm(nearest - pt[None, :], axis=1).min())

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def area(self) -> float:
        return _signed_area(self.vertices)

    def inward_edge_normals(self) -> np.ndarray:
        _, edges = self._edges()
        lens = np.linalg.norm(edges, axis=1)
        # CCW orientation puts the interior on the left of each edge
        return np.stack([-edges[:, 1], edges[:, 0]], axis=1) / lens[:, None]


class Raster(Domain):
    """Node lattice origin + index*h.

    ``mask`` marks interior nodes; ``flags`` marks the disjoint Dirichlet
    layer surrounding them.  ``support`` (their union) is the storage set
    grid functions live on.
    """

    def __init__(self, mask: np.ndarray, h: float, origin, flags: Optional[np.ndarray] = None):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim not in (1, 2):
            raise UsageError(f"mask must be 1D or 2D, got ndim {mask.ndim}")
        if not mask.any():
            raise DomainError("raster mask is empty")
        if h <= 0:
            raise UsageError(f"cell size must be positive, got {h}")
        self.dim = mask.ndim
        self.h = float(h)
        self.origin = _as_point(origin, self.dim)
        if flags is None:
            flags = dirichlet_ring(mask)
        flags = np.asarray(flags, dtype=bool)
        if flags.shape != mask.shape:
            raise UsageError("flags shape must match mask shape")
        self.mask = mask & ~flags
        self.flags = flags
        self._support = self.mask | self.flags
        for arr in (self.mask, self.flags, self.origin, self._support):
            arr.setflags(write=False)

    def __repr__(self):
        return f"Raster(shape={self.mask.shape}, h={self.h})"

    @property
    def support(self) -> np.ndarray:
        return self._support

    def default_tol(self):
        return self.h / 2.0

    def node_coords(self, idx) -> np.ndarray:
        return self.origin + self.h * np.asarray(idx, dtype=float)

    def axes(self) -> List[np.ndarray]:
        return [
            self.origin[d] + self.h * np.arange(self.mask.shape[d])
            for d in range(self.dim)
        ]

    def nearest_index(self, x) -> Optional[Tuple[int, ...]]:
        pt = _as_point(x, self.dim)
        idx = np.rint((pt - self.origin) / self.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.mask.shape)):
            return None
        return tuple(idx)

    def contains(self, x, tol=None):
        tol = self.default_tol() if tol is None else tol
        pt = _as_point(x, self.dim)
        idx = self.nearest_index(pt)
        if idx is None or not self.support[idx]:
            return Region.OUTSIDE
        if float(np.abs(pt - self.node_coords(idx)).max()) > tol:
            return Region.OUTSIDE
        return Region.BOUNDARY if self.flags[idx] else Region.INTERIOR

    def boundary_distance(self, x):
        idx = self.nearest_index(x)
        if idx is None or not self.mask[idx]:
            return 0.0
        return float(self._interior_edt()[idx])

    def _interior_edt(self) -> np.ndarray:
        if not hasattr(self, "_edt"):
            self._edt = ndimage.distance_transform_edt(self.mask, sampling=self.h)
        return self._edt

    def bounding_box(self):
        idx = np.argwhere(self.support)
        return self.node_coords(idx.min(axis=0)), self.node_coords(idx.max(axis=0))

    def interior_count(self) -> int:
        return int(self.mask.sum())

    def area(self) -> float:
        """Unbiased mask area: interior nodes each stand for one full cell."""
        return float(self.mask.sum()) * self.h**self.dim


def _signed_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _edge_crosses(verts: np.ndarray) -> np.ndarray:
    e = np.roll(verts, -1, axis=0) - verts
    e_next = np.roll(e, -1, axis=0)
    return e[:, 0] * e_next[:, 1] - e[:, 1] * e_next[:, 0]


def dirichlet_ring(mask: np.ndarray, connectivity: int = 2) -> np.ndarray:
    """One-node layer around the mask (8-neighborhood in 2D), disjoint from it."""
    structure = ndimage.generate_binary_structure(mask.ndim, connectivity)
    dilated = ndimage.binary_dilation(mask, structure=structure, border_value=0)
    return dilated & ~mask


def polygon_domain(vertices, h: Optional[float] = None) -> Domain:
    """Polygon factory: exact convex polygon, or raster fallback for
    non-convex vertex lists (requires h)."""
    try:
        return ConvexPolygon(vertices)
    except DomainError:
        if h is None:
            raise UsageError(
                "non-convex polygon: pass a cell size h for the raster fallback"
            ) from None
        return _rasterize_general_polygon(np.asarray(vertices, dtype=float), h)


def _point_in_polygon(pts: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Ray casting for possibly non-convex polygons; pts (N,2) -> bool (N,)."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    v2 = np.roll(verts, -1, axis=0)
    for (x1, y1), (x2, y2) in zip(verts, v2):
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < np.where(crosses, x_cross, np.inf))
    return inside


def _rasterize_general_polygon(verts: np.ndarray, h: float) -> Raster:
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    if float(np.linalg.norm(hi - lo)) / h < 8:
        raise UsageError(f"cell size {h} too coarse for polygon of extent {hi - lo}")
    origin = lo - h  # one-node pad so the Dirichlet ring fits
    nx = int(np.floor((hi[0] - lo[0]) / h + 0.5)) + 3
    ny = int(np.floor((hi[1] - lo[1]) / h + 0.5)) + 3
    xs = origin[0] + h * np.arange(nx)
    ys = origin[1] + h * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    mask = _point_in_polygon(pts, verts).reshape(nx, ny)
    return _trimmed_raster(mask, h, origin)


def _trimmed_raster(mask: np.ndarray, h: float, origin, flags: Optional[np.ndarray] = None) -> Raster:
    """Build a raster and trim the lattice to the tight support box."""
    if flags is None:
        flags = dirichlet_ring(mask)
    support = mask | flags
    if not support.any():
        raise DomainError("raster support is empty")
    idx = np.argwhere(support)
    lo_i, hi_i = idx.min(axis=0), idx.max(axis=0)
    slicer = tuple(slice(a, b + 1) for a, b in zip(lo_i, hi_i))
    new_origin = np.asarray(origin, dtype=float) + h * lo_i
    return Raster(mask[slicer], h, new_origin, flags=flags[slicer])


# ---------------------------------------------------------------------------
# Minkowski combination


def minkowski_combination(domains: Sequence[Domain], lam: Union[Weights, Sequence[float]]) -> Domain:
    """Weighted Minkowski combination {sum_i lam_i x_i : x_i in Omega_i}.

    Intervals combine by interval arithmetic, convex polygons by the exact
    scaled edge merge, and anything involving a raster by brute-force
    dilation at the finest input resolution.
    """
    w = lam if isinstance(lam, Weights) else Weights(lam)
    if len(domains) != w.m:
        raise UsageError(f"expected {w.m} domains, got {len(domains)}")
    dims = {d.dim for d in domains}
    if len(dims) != 1:
        raise UsageError(f"domains have mixed dimensions {dims}")

    if all(isinstance(d, Interval) for d in domains):
        a = sum(wi * d.a for wi, d in zip(w, domains))
        b = sum(wi * d.b for wi, d in zip(w, domains))
        return Interval(a, b)
    if all(isinstance(d, ConvexPolygon) for d in domains):
        scaled = [_scale_polygon(d, wi) for wi, d in zip(w, domains)]
        out = scaled[0]
        for other in scaled[1:]:
            out = _edge_merge(out, other)
        return out
    return _raster_combination(domains, w)


def _scale_polygon(poly: ConvexPolygon, c: float) -> ConvexPolygon:
    return ConvexPolygon(c * poly.vertices)


def _lowest_vertex_first(verts: np.ndarray) -> np.ndarray:
    order = np.lexsort((verts[:, 0], verts[:, 1]))
    return np.roll(verts, -int(order[0]), axis=0)


def _edge_merge(p1: ConvexPolygon, p2: ConvexPolygon) -> ConvexPolygon:
    """Exact Minkowski sum of two convex polygons by angular edge merge."""
    v1 = _lowest_vertex_first(p1.vertices)
    v2 = _lowest_vertex_first(p2.vertices)
    e1 = np.roll(v1, -1, axis=0) - v1
    e2 = np.roll(v2, -1, axis=0) - v2

    def angle(e):
        # measured from the +x axis into [0, 2pi); the walk from the lowest
        # vertex of a CCW polygon has nondecreasing edge angles
        return np.mod(np.arctan2(e[:, 1], e[:, 0]), 2.0 * np.pi)

    edges = np.concatenate([e1, e2], axis=0)
    order = np.argsort(angle(edges), kind="stable")
    merged = edges[order]
    verts = v1[0] + v2[0] + np.concatenate(
        [np.zeros((1, 2)), np.cumsum(merged[:-1], axis=0)]
    )
    return ConvexPolygon(_dedupe_collinear(verts))


def _dedupe_collinear(verts: np.ndarray) -> np.ndarray:
    keep = []
    k = len(verts)
    scale = max(1.0, float(np.abs(verts).max())) ** 2
    for i in range(k):
        prev, cur, nxt = verts[i - 1], verts[i], verts[(i + 1) % k]
        a, b = cur - prev, nxt - cur
        if abs(a[0] * b[1] - a[1] * b[0]) > 1e-12 * scale:
            keep.append(cur)
    return np.asarray(keep)


def _raster_combination(domains: Sequence[Domain], w: Weights) -> Raster:
    hs = [d.h for d in domains if isinstance(d, Raster)]
    if not hs:
        raise UsageError("raster fallback needs at least one raster input")
    h = min(hs)
    rasters = [d if isinstance(d, Raster) else rasterize(d, h) for d in domains]
    out = rasters[0]
    acc = w.values[0]
    for wi, r in zip(w.values[1:], rasters[1:]):
        out = _raster_pair_sum(out, acc / (acc + wi), r, wi / (acc + wi), h)
        acc += wi
    return out


def _raster_pair_sum(r1: Raster, w1: float, r2: Raster, w2: float, h: float) -> Raster:
    pts1 = _raster_points(r1) * w1
    pts2 = _raster_points(r2) * w2
    origin = pts1.min(axis=0) + pts2.min(axis=0) - h
    hi = pts1.max(axis=0) + pts2.max(axis=0)
    shape = tuple(int(np.floor((hi[d] - origin[d]) / h + 0.5)) + 2 for d in range(r1.dim))
    marked = np.zeros(shape, dtype=bool)
    chunk = max(1, int(2e6) // max(1, len(pts2)))
    for start in range(0, len(pts1), chunk):
        sums = pts1[start : start + chunk, None, :] + pts2[None, :, :]
        idx = np.rint((sums.reshape(-1, r1.dim) - origin) / h).astype(int)
        idx = np.clip(idx, 0, np.array(shape) - 1)
        marked[tuple(idx.T)] = True
    structure = ndimage.generate_binary_structure(r1.dim, 2)
    marked |= ndimage.binary_closing(marked, structure=structure)
    core = ndimage.binary_erosion(marked, structure=structure, border_value=0)
    return _trimmed_raster(core, h, origin, flags=marked & ~core)


def _raster_points(r: Raster) -> np.ndarray:
    idx = np.argwhere(r.support).astype(float)
    return r.origin[None, :] + r.h * idx


# ---------------------------------------------------------------------------
# Containment / normals / rasterization entry points


def contains(domain: Domain, x, tol: Optional[float] = None) -> Region:
    """Classify x against the domain with a boundary band of width tol."""
    if tol is not None and tol < 0:
        raise UsageError(f"tol must be nonnegative, got {tol}")
    return domain.contains(x, tol)


def normal_ext(domain: Domain, x) -> BoundaryPoint:
    """Inward unit normal extension: the boundary normal on the boundary,
    the zero vector in the interior, plus the distance to the boundary."""
    pt = _as_point(x, domain.dim)
    tol = domain.default_tol()
    region = domain.contains(pt, tol)
    if region is Region.OUTSIDE:
        raise DomainError(f"point {pt} lies outside the domain closure")
    if region is Region.INTERIOR:
        return BoundaryPoint(pt, np.zeros(domain.dim), domain.boundary_distance(pt))

    if isinstance(domain, Interval):
        nu = np.array([1.0]) if abs(pt[0] - domain.a) <= abs(domain.b - pt[0]) else np.array([-1.0])
        return BoundaryPoint(pt, nu, 0.0)
    if isinstance(domain, ConvexPolygon):
        return BoundaryPoint(pt, _polygon_inward_normal(domain, pt, tol), 0.0)
    if isinstance(domain, Raster):
        return BoundaryPoint(pt, _raster_inward_normal(domain, pt), 0.0)
    raise UsageError(f"unsupported domain type {type(domain)!r}")


def _polygon_inward_normal(poly: ConvexPolygon, pt: np.ndarray, tol: float) -> np.ndarray:
    verts = poly.vertices
    normals = poly.inward_edge_normals()
    starts, edges = poly._edges()
    vertex_hits = np.linalg.norm(verts - pt[None, :], axis=1) <= tol
    if vertex_hits.any():
        i = int(np.argmax(vertex_hits))
        combo = normals[i - 1] + normals[i]  # bisector of the adjacent edges
        return combo / np.linalg.norm(combo)
    t = np.einsum("ij,ij->i", pt[None, :] - starts, edges) / np.einsum("ij,ij->i", edges, edges)
    t = np.clip(t, 0.0, 1.0)
    d = np.linalg.norm(starts + t[:, None] * edges - pt[None, :], axis=1)
    return normals[int(np.argmin(d))]


def _raster_inward_normal(raster: Raster, pt: np.ndarray) -> np.ndarray:
    idx = raster.nearest_index(pt)
    core = raster.mask
    direction = np.zeros(raster.dim)
    for offset in _neighbor_offsets(raster.dim):
        nb = tuple(np.asarray(idx) + offset)
        if all(0 <= nb[d] < raster.mask.shape[d] for d in range(raster.dim)) and core[nb]:
            direction += np.asarray(offset, dtype=float)
    norm = np.linalg.norm(direction)
    return direction / norm if norm > 0 else direction


def _neighbor_offsets(dim: int):
    if dim == 1:
        return [(-1,), (1,)]
    return [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)]


def rasterize(domain: Domain, h: float) -> Raster:
    """Sample the domain on an h-lattice anchored at the bounding-box corner.

    Nodes in the closure form the mask; boundary-classified nodes and mask
    nodes missing a lattice neighbor carry the Dirichlet flag.
    """
    if h <= 0:
        raise UsageError(f"cell size must be positive, got {h}")
    lo, hi = domain.bounding_box()
    origin = lo - h  # one-node pad so the Dirichlet ring fits
    shape = tuple(int(np.floor((hi[d] - origin[d]) / h + 0.5)) + 2 for d in range(domain.dim))
    axes = [origin[d] + h * np.arange(shape[d]) for d in range(domain.dim)]
    if domain.dim == 1:
        pts = axes[0][:, None]
    else:
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    tol = min(EXACT_TOL, h * 1e-6) if not isinstance(domain, Raster) else domain.default_tol()
    regions = [domain.contains(p, tol) for p in pts]
    mask = np.array([r is Region.INTERIOR for r in regions]).reshape(shape)
    if not mask.any():
        raise UsageError(f"cell size {h} too coarse: no interior node survives")
    on_bdry = np.array([r is Region.BOUNDARY for r in regions]).reshape(shape)
    flags = dirichlet_ring(mask) | on_bdry
    return _trimmed_raster(mask, h, origin, flags=flags)


def boundary_probes(domain: Domain, per_edge: int = 1) -> List[BoundaryPoint]:
    """Edge-interior boundary probes (interval endpoints; polygon edge midpoints)."""
    if isinstance(domain, Interval):
        return [normal_ext(domain, [domain.a]), normal_ext(domain, [domain.b])]
    if isinstance(domain, ConvexPolygon):
        probes = []
        starts, edges = domain._edges()
        for i in range(len(starts)):
            for j in range(per_edge):
                s = (j + 1) / (per_edge + 1)
                probes.append(normal_ext(domain, starts[i] + s * edges[i]))
        return probes
    raise UsageError("boundary probes are defined for exact shapes only")


# ---------------------------------------------------------------------------
# Plain-text I/O


def save_polygon(path, poly: ConvexPolygon) -> None:
    lines = [f"{float(x)!r} {float(y)!r}" for x, y in poly.vertices]
    Path(path).write_text("\n".join(lines) + "\n")


def load_polygon(path) -> ConvexPolygon:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise UsageError(f"bad polygon line {line!r}")
        rows.append([float(parts[0]), float(parts[1])])
    return ConvexPolygon(rows)


def save_pgm(path, raster: Raster) -> None:
    """Write the mask as a P2 PGM: 0 outside, 1 Dirichlet, 2 interior."""
    if raster.dim == 1:
        values = np.where(raster.mask, np.where(raster.flags, 1, 2), 0)[None, :]
    else:
        values = np.where(raster.mask, np.where(raster.flags, 1, 2), 0).T[::-1]
    rows = [" ".join(str(int(v)) for v in row) for row in values]
    header = f"P2\n{values.shape[1]} {values.shape[0]}\n2\n"
    Path(path).write_text(header + "\n".join(rows) + "\n")
