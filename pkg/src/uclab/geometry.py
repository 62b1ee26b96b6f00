"""Voxelized polytope domains and the metric geometry built on them.

A :class:`GridDomain` is a union of closed axis-aligned cells of side ``h``
(optionally cut by zero-thickness barrier walls such as a slit). Nodes sit on
the cell corners; a node is interior when every incident cell belongs to the
domain and the node does not lie on a barrier.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .exceptions import ChainInfeasibleError, DisconnectedDomainError, ValidationError

__all__ = [
    "FaceSet",
    "GridDomain",
    "InteriorRegion",
    "BallChain",
    "CubeCover",
    "GeodesicReport",
    "parse_length",
    "build_domain",
    "interior_shrink",
    "geodesic_distance",
    "estimate_comparability",
    "build_chain",
    "cube_cover",
]

_DIST_CHUNK = 4_000_000

# worst ratio of 8/26-neighbour lattice path length to Euclidean length
LATTICE_DISTORTION = {2: math.sqrt(4.0 - 2.0 * math.sqrt(2.0)), 3: 1.12810}


def parse_length(value) -> float:
    """Parse a length given as a number or a string such as ``"1/64"``."""
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


@dataclass(frozen=True, eq=False)
class FaceSet:
    """Oriented boundary faces, stored by the integer index of their low corner."""

    lo_index: np.ndarray  # (f, n) int
    axis: np.ndarray  # (f,) normal axis
    sign: np.ndarray  # (f,) +1 outward along +axis, -1 along -axis
    origin: np.ndarray
    h: float

    def __len__(self):
        return len(self.axis)

    @property
    def lo(self) -> np.ndarray:
        return self.origin + self.h * self.lo_index

    @property
    def hi(self) -> np.ndarray:
        ext = np.ones_like(self.lo_index)
        ext[np.arange(len(self)), self.axis] = 0
        return self.origin + self.h * (self.lo_index + ext)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def normals(self) -> np.ndarray:
        n = np.zeros(self.lo_index.shape, dtype=float)
        n[np.arange(len(self)), self.axis] = self.sign
        return n

    @property
    def areas(self) -> np.ndarray:
        dim = self.lo_index.shape[1]
        return np.full(len(self), self.h ** (dim - 1))

    def subset(self, keep) -> "FaceSet":
        keep = np.asarray(keep)
        return FaceSet(self.lo_index[keep], self.axis[keep], self.sign[keep], self.origin, self.h)


def _box_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the union of closed boxes ``[lo, hi]``."""
    points = np.atleast_2d(points)
    out = np.empty(len(points))
    step = max(1, _DIST_CHUNK // max(1, len(lo)))
    for start in range(0, len(points), step):
        p = points[start : start + step, None, :]
        gap = np.maximum(np.maximum(lo[None] - p, p - hi[None]), 0.0)
        out[start : start + step] = np.sqrt((gap * gap).sum(axis=-1).min(axis=1))
    return out


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Axis-aligned voxelized polytope.

    Parameters
    ----------
    cell_mask : ndarray of bool
        Cells (voxels) belonging to the closed domain, indexed ``[i1, i2(, i3)]``.
    h : float
        Grid spacing.
    origin : sequence of float
        Lower corner of the bounding box.
    barriers : tuple of (lo, hi) boxes
        Zero-thickness walls lying on grid planes (e.g. a slit). They are part
        of the boundary and are seen from both sides.
    """

    cell_mask: np.ndarray
    h: float
    origin: tuple = (0.0, 0.0)
    barriers: tuple = ()
    name: str = "mask"

    @property
    def dim(self) -> int:
        return self.cell_mask.ndim

    @property
    def shape(self) -> tuple:
        """Node lattice shape."""
        return tuple(s + 1 for s in self.cell_mask.shape)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def origin_array(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def bounding_box(self) -> tuple:
        lo = self.origin_array
        return lo, lo + self.h * np.asarray(self.cell_mask.shape)

    @property
    def volume(self) -> float:
        return float(self.cell_mask.sum()) * self.cell_volume

    def node_coords(self, index) -> np.ndarray:
        return self.origin_array + self.h * np.asarray(index, dtype=float)

    @cached_property
    def grid(self) -> tuple:
        """Coordinate arrays of every lattice node (``indexing='ij'``)."""
        axes = [self.origin[k] + self.h * np.arange(s) for k, s in enumerate(self.shape)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def incident_cells(self) -> np.ndarray:
        """Number of domain cells incident to each node."""
        padded = np.pad(self.cell_mask.astype(np.int8), 1)
        count = np.zeros(self.shape, dtype=np.int16)
        for shift in itertools.product((0, 1), repeat=self.dim):
            sl = tuple(slice(s, s + n) for s, n in zip(shift, self.shape))
            count += padded[sl]
        return count

    @cached_property
    def closure_mask(self) -> np.ndarray:
        return self.incident_cells > 0

    @cached_property
    def on_barrier(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for lo, hi in self.barriers:
            ilo = np.rint((np.asarray(lo) - self.origin_array) / self.h).astype(int)
            ihi = np.rint((np.asarray(hi) - self.origin_array) / self.h).astype(int)
            sl = tuple(slice(max(a, 0), min(b, s - 1) + 1) for a, b, s in zip(ilo, ihi, self.shape))
            mask[sl] = True
        return mask

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return (self.incident_cells == 2**self.dim) & ~self.on_barrier

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Lumped (trapezoidal) quadrature weight of each node: the part of its dual cell in the domain."""
        return self.incident_cells.astype(float) / 2**self.dim * self.cell_volume

    @cached_property
    def boundary_faces(self) -> FaceSet:
        dim = self.dim
        padded = np.pad(self.cell_mask, 1)
        lo_list, axis_list, sign_list = [], [], []
        for k in range(dim):
            inner = tuple(slice(1, -1) if j != k else slice(None) for j in range(dim))
            col = padded[inner]
            a = col.take(range(0, col.shape[k] - 1), axis=k)
            b = col.take(range(1, col.shape[k]), axis=k)
            # a at padded index i (cell i-1), b at cell i; face plane at node index i along k
            for sel, sgn in (((a & ~b), +1), ((~a & b), -1)):
                idx = np.argwhere(sel)
                lo_list.append(idx)
                axis_list.append(np.full(len(idx), k))
                sign_list.append(np.full(len(idx), sgn))
        for lo, hi in self.barriers:
            ilo = np.rint((np.asarray(lo) - self.origin_array) / self.h).astype(int)
            ihi = np.rint((np.asarray(hi) - self.origin_array) / self.h).astype(int)
            k = int(np.flatnonzero(ilo == ihi)[0])
            ranges = [range(ilo[j], ihi[j]) if j != k else range(ilo[k], ilo[k] + 1) for j in range(dim)]
            for idx in itertools.product(*ranges):
                below = list(idx)
                below[k] -= 1
                if min(below) < 0 or below[k] >= self.cell_mask.shape[k] or idx[k] >= self.cell_mask.shape[k]:
                    continue
                if self.cell_mask[tuple(below)] and self.cell_mask[tuple(idx)]:
                    for sgn in (+1, -1):
                        lo_list.append(np.asarray([idx]))
                        axis_list.append(np.asarray([k]))
                        sign_list.append(np.asarray([sgn]))
        return FaceSet(
            np.concatenate(lo_list).astype(int),
            np.concatenate(axis_list).astype(int),
            np.concatenate(sign_list).astype(int),
            self.origin_array,
            self.h,
        )

    @cached_property
    def _boundary_boxes(self) -> tuple:
        """Boundary faces merged into maximal runs along one in-plane axis (distance queries only)."""
        faces = self.boundary_faces
        dim = self.dim
        los, his = [], []
        for k in range(dim):
            m = 1 if k == 0 else 0
            sel = faces.axis == k
            idx = faces.lo_index[sel]
            if len(idx) == 0:
                continue
            keys = [idx[:, m]] + [idx[:, j] for j in range(dim) if j != m]
            order = np.lexsort(keys)
            idx = idx[order]
            others = [j for j in range(dim) if j != m]
            same_line = np.all(idx[1:, others] == idx[:-1, others], axis=1)
            contiguous = idx[1:, m] - idx[:-1, m] <= 1
            breaks = np.flatnonzero(~(same_line & contiguous)) + 1
            starts = np.concatenate([[0], breaks])
            ends = np.concatenate([breaks, [len(idx)]]) - 1
            lo = idx[starts].astype(float)
            hi = idx[ends].astype(float)
            for j in range(dim):
                if j != k:
                    hi[:, j] += 1.0
            los.append(lo)
            his.append(hi)
        lo = self.origin_array + self.h * np.concatenate(los)
        hi = self.origin_array + self.h * np.concatenate(his)
        return lo, hi

    def distance_to_boundary(self, points) -> np.ndarray:
        """Exact Euclidean distance from points to the boundary faces."""
        lo, hi = self._boundary_boxes
        return _box_distance(np.asarray(points, dtype=float).reshape(-1, self.dim), lo, hi)

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        """Distance to the boundary for every lattice node."""
        pts = np.stack([g.ravel() for g in self.grid], axis=1)
        return self.distance_to_boundary(pts).reshape(self.shape)

    def contains(self, points) -> np.ndarray:
        """True for points in the open domain."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        cell = np.floor((pts - self.origin_array) / self.h).astype(int)
        cshape = np.asarray(self.cell_mask.shape)
        ok = np.all((cell >= 0) & (cell < cshape), axis=1)
        inside = np.zeros(len(pts), dtype=bool)
        inside[ok] = self.cell_mask[tuple(cell[ok].T)]
        if inside.any():
            inside[inside] = self.distance_to_boundary(pts[inside]) > 0.0
        return inside

    def nearest_node(self, point) -> tuple:
        idx = np.rint((np.asarray(point, dtype=float) - self.origin_array) / self.h).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return tuple(int(i) for i in idx)

    def interior_points(self) -> np.ndarray:
        idx = np.argwhere(self.interior_mask)
        return self.origin_array + self.h * idx

    @cached_property
    def _lattice_graph(self):
        """8/26-neighbour graph on interior nodes, edge weights in physical length."""
        interior = self.interior_mask
        ids = -np.ones(self.shape, dtype=np.int64)
        flat = np.flatnonzero(interior)
        ids.ravel()[flat] = np.arange(len(flat))
        rows, cols, vals = [], [], []
        for off in itertools.product((-1, 0, 1), repeat=self.dim):
            if not any(off):
                continue
            shifted = np.roll(ids, shift=tuple(-o for o in off), axis=tuple(range(self.dim)))
            sel = interior & (shifted >= 0)
            rows.append(ids[sel])
            cols.append(shifted[sel])
            vals.append(np.full(int(sel.sum()), self.h * math.sqrt(sum(o * o for o in off))))
        n = len(flat)
        graph = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        return graph, flat, ids

    def graph_id(self, point) -> int:
        """Graph vertex of the interior node at ``point`` (must coincide with a node)."""
        node = self.nearest_node(point)
        if np.linalg.norm(self.node_coords(node) - np.asarray(point, dtype=float)) > 1e-9 * self.h:
            raise ValidationError(f"point {tuple(point)} is not a lattice node")
        gid = int(self._lattice_graph[2][node])
        if gid < 0:
            raise ValidationError(f"node {tuple(point)} is not interior")
        return gid


def _check_connected(mask: np.ndarray, what: str) -> None:
    labels, count = ndimage.label(mask)
    if count > 1:
        sizes = sorted(np.bincount(labels.ravel())[1:].tolist(), reverse=True)
        raise DisconnectedDomainError(
            f"{what} is disconnected: component sizes {sizes[:2]} (of {count} components)", sizes
        )


def _cells_for_extents(extents, h):
    extents = [parse_length(e) for e in extents]
    if len(extents) % 2 or len(extents) // 2 not in (2, 3):
        raise ValidationError("extents must list lo/hi pairs for 2 or 3 axes")
    lo = np.asarray(extents[0::2])
    hi = np.asarray(extents[1::2])
    counts = (hi - lo) / h
    if np.any(counts < 2) or np.any(np.abs(counts - np.rint(counts)) > 1e-9 * np.maximum(counts, 1)):
        raise ValidationError(f"h={h} does not divide the extents {extents}")
    return lo, hi, np.rint(counts).astype(int)


def build_domain(spec: Mapping, h=None) -> GridDomain:
    """Build a :class:`GridDomain` from a shape descriptor.

    ``spec`` keys: ``shape`` (``box``, ``lshape``, ``slit``, ``mask`` or
    ``maskfile``), ``extents`` (``x1lo x1hi x2lo x2hi [x3lo x3hi]``),
    optionally ``h``, ``mask`` (cell array) or ``maskfile`` (path).

    The L-shape removes the upper quadrant ``x1 > mid, x2 > mid`` (all of
    ``x3`` in 3D); the slit is a wall on ``x1 = mid`` spanning
    ``x2 in [lo, mid]`` (and all of ``x3``).
    """
    spec = dict(spec)
    if h is None:
        h = spec.get("h")
    if h is None:
        raise ValidationError("grid spacing h is required")
    h = parse_length(h)
    if h <= 0:
        raise ValidationError("h must be positive")
    shape = str(spec.get("shape", "box")).lower()
    barriers = ()
    if shape in ("mask", "maskfile"):
        if "mask" in spec:
            cells = np.asarray(spec["mask"], dtype=bool)
        else:
            from .io import read_mask_file

            cells = read_mask_file(spec["maskfile"]) > 0
        origin = np.asarray([parse_length(v) for v in spec.get("origin", [0.0] * cells.ndim)])
        if "extents" in spec:
            lo, _, counts = _cells_for_extents(spec["extents"], h)
            if tuple(counts) != cells.shape:
                raise ValidationError(f"mask shape {cells.shape} does not match extents / h = {tuple(counts)}")
            origin = lo
    else:
        lo, hi, counts = _cells_for_extents(spec.get("extents", [0, 1, 0, 1]), h)
        origin = lo
        cells = np.ones(tuple(counts), dtype=bool)
        if shape == "box":
            pass
        elif shape in ("lshape", "l-shape"):
            if np.any(counts[:2] % 2):
                raise ValidationError("L-shape needs an even cell count on the first two axes")
            half = counts[:2] // 2
            cells[half[0] :, half[1] :, ...] = False
        elif shape == "slit":
            if counts[0] % 2 or counts[1] % 2:
                raise ValidationError("slit needs an even cell count on the first two axes")
            mid = 0.5 * (lo + hi)
            blo = lo.copy()
            bhi = hi.copy()
            blo[0] = bhi[0] = mid[0]
            bhi[1] = mid[1]
            barriers = ((tuple(blo), tuple(bhi)),)
        else:
            raise ValidationError(f"unknown shape {shape!r}")
    if cells.ndim not in (2, 3):
        raise ValidationError("only 2D and 3D domains are supported")
    dom = GridDomain(cells, h, tuple(float(o) for o in origin), barriers, name=shape)
    if dom.n_interior == 0:
        raise ValidationError("domain has no interior nodes")
    _check_connected(dom.interior_mask, "domain interior")
    return dom


@dataclass(frozen=True, eq=False)
class InteriorRegion:
    """Nodes at distance greater than ``4 rho`` from the boundary."""

    parent: GridDomain
    rho: float
    node_mask: np.ndarray

    @property
    def empty(self) -> bool:
        return not bool(self.node_mask.any())

    @property
    def size(self) -> int:
        return int(self.node_mask.sum())

    @property
    def node_set(self) -> np.ndarray:
        return np.argwhere(self.node_mask)

    @property
    def points(self) -> np.ndarray:
        return self.parent.origin_array + self.parent.h * self.node_set

    @property
    def measure(self) -> float:
        return float(self.parent.node_weights[self.node_mask].sum())

    def diameter(self) -> float:
        pts = self.points
        if len(pts) == 0:
            return 0.0
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def interior_shrink(d: GridDomain, rho: float) -> InteriorRegion:
    """Return the region ``{x : dist(x, boundary) > 4 rho}``; empty regions are flagged, not raised."""
    rho = parse_length(rho)
    if rho <= 0:
        raise ValidationError("rho must be positive")
    mask = d.interior_mask & (d.boundary_distance > 4.0 * rho)
    if mask.any():
        _check_connected(mask, f"interior region at rho={rho}")
    return InteriorRegion(d, rho, mask)


class GeodesicReport(NamedTuple):
    length: float
    euclidean: float
    ratio: float


def _dijkstra(d: GridDomain, sources, return_predecessors=False, restrict=None):
    graph, _, _ = d._lattice_graph
    if restrict is not None:
        keep = np.flatnonzero(restrict)
        sub = graph[keep][:, keep]
        local = np.searchsorted(keep, np.asarray(sources))
        if np.any(keep[np.minimum(local, len(keep) - 1)] != np.asarray(sources)):
            raise ValidationError("dijkstra source outside the restricted node set")
        return keep, csgraph.dijkstra(sub, indices=local, return_predecessors=return_predecessors)
    return None, csgraph.dijkstra(graph, indices=sources, return_predecessors=return_predecessors)


def geodesic_distance(d: GridDomain, x, y) -> GeodesicReport:
    """Lattice shortest-path length between two interior nodes and its ratio to ``|x - y|``."""
    gx, gy = d.graph_id(x), d.graph_id(y)
    eu = float(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float)))
    if gx == gy:
        return GeodesicReport(0.0, 0.0, 1.0)
    _, dist = _dijkstra(d, [gx])
    length = float(dist[0, gy])
    return GeodesicReport(length, eu, length / eu)


def estimate_comparability(
    d: GridDomain,
    samples: int = 100,
    seed: int = 0,
    focus=None,
    radius: float | None = None,
    pairs=None,
) -> float:
    """Empirical comparability constant: max of geodesic / Euclidean distance over sampled node pairs.

    Pairs are drawn uniformly from interior nodes, or from nodes within
    ``radius`` of ``focus`` when both are given. Explicit ``pairs`` (a pair of
    point arrays) bypass sampling. The first ``k`` sampled pairs do not depend
    on ``samples``, so the estimate is nondecreasing in ``samples``.
    """
    graph, flat, _ = d._lattice_graph
    if pairs is not None:
        a = np.asarray([d.graph_id(p) for p in pairs[0]])
        b = np.asarray([d.graph_id(p) for p in pairs[1]])
    else:
        if samples < 100:
            raise ValidationError("at least 100 samples are required")
        pool = np.arange(len(flat))
        if focus is not None and radius is not None:
            pts = d.origin_array + d.h * np.stack(np.unravel_index(flat, d.shape), axis=1)
            pool = pool[np.linalg.norm(pts - np.asarray(focus, float), axis=1) <= radius]
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, len(pool), size=(samples, 2))
        a, b = pool[picks[:, 0]], pool[picks[:, 1]]
    keep = a != b
    a, b = a[keep], b[keep]
    if len(a) == 0:
        return 1.0
    coords = d.origin_array + d.h * np.stack(np.unravel_index(flat, d.shape), axis=1)
    sources, inverse = np.unique(a, return_inverse=True)
    best = 1.0
    step = max(1, 2_000_000 // max(1, len(flat)))
    for start in range(0, len(sources), step):
        block = sources[start : start + step]
        dist = csgraph.dijkstra(graph, indices=block)
        sel = (inverse >= start) & (inverse < start + step)
        geo = dist[inverse[sel] - start, b[sel]]
        eu = np.linalg.norm(coords[a[sel]] - coords[b[sel]], axis=1)
        best = max(best, float(np.max(geo / eu)))
    return best


@dataclass(frozen=True, eq=False)
class BallChain:
    """Centers ``y_0 = x, ..., y_N`` picked along a path by the first-exit rule."""

    centers: np.ndarray
    r: float
    x: np.ndarray
    y: np.ndarray
    path: np.ndarray
    path_length: float
    geodesic_length: float

    @property
    def N(self) -> int:
        return len(self.centers) - 1

    def n0(self, comparability: float) -> int:
        """Cap ``floor(2 n c |x - y| / r)`` on the number of steps."""
        n = len(self.x)
        return int(math.floor(2 * n * comparability * float(np.linalg.norm(self.x - self.y)) / self.r))


def _first_exit_centers(path: np.ndarray, r: float) -> np.ndarray:
    """Walk a polyline picking each next center at the first point at distance ``r`` from the current one."""
    centers = [path[0].copy()]
    c = path[0]
    seg, t = 0, 0.0
    nseg = len(path) - 1
    while True:
        found = False
        j, t0 = seg, t
        while j < nseg and not found:
            a = path[j] + t0 * (path[j + 1] - path[j])
            dvec = path[j + 1] - a
            A = float(dvec @ dvec)
            if A > 0.0:
                f = a - c
                Cq = float(f @ f) - r * r
                if Cq >= 0.0:
                    s = 0.0
                else:
                    B = 2.0 * float(f @ dvec)
                    s = (-B + math.sqrt(B * B - 4.0 * A * Cq)) / (2.0 * A)
                if s <= 1.0:
                    seg, t = j, t0 + s * (1.0 - t0)
                    c = path[j] + t * (path[j + 1] - path[j])
                    centers.append(c.copy())
                    found = True
            if not found:
                j, t0 = j + 1, 0.0
        if not found:
            return np.asarray(centers)


def build_chain(
    d: GridDomain,
    x,
    y,
    r: float,
    clearance: float = 4.0,
    max_path_ratio: float = 2.0,
) -> BallChain:
    """Chain of balls of radius ``r`` joining ``x`` to ``y`` along a lattice shortest path.

    The path is searched among interior nodes whose boundary distance exceeds
    ``clearance * r + h sqrt(n) / 2``, so every center ``c`` satisfies
    ``B(c, clearance * r)`` inside the domain. Endpoints need not be nodes;
    they are joined to their nearest node by a straight segment.
    """
    r = float(r)
    if r <= 0:
        raise ValidationError("chain radius must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    margin = clearance * r
    ends = np.stack([x, y])
    if not np.all(d.contains(ends)) or np.any(d.distance_to_boundary(ends) <= margin):
        raise ChainInfeasibleError("chain endpoints violate the ball clearance margin")
    if np.allclose(x, y, rtol=0, atol=1e-15):
        return BallChain(x[None].copy(), r, x, y, x[None].copy(), 0.0, 0.0)
    graph, flat, ids = d._lattice_graph
    node_ok = d.boundary_distance.ravel()[flat] > margin + 0.5 * d.h * math.sqrt(d.dim)
    if clearance <= 0:
        node_ok = np.ones(len(flat), dtype=bool)
    nx, ny = d.nearest_node(x), d.nearest_node(y)
    gx, gy = int(ids[nx]), int(ids[ny])
    if gx < 0 or gy < 0 or not node_ok[gx] or not node_ok[gy]:
        raise ChainInfeasibleError("endpoint nodes lie inside the clearance margin")
    keep, (dist, pred) = _dijkstra(d, [gx], return_predecessors=True, restrict=node_ok)
    local = {int(g): i for i, g in enumerate(keep)}
    lx, ly = local[gx], local[gy]
    if not np.isfinite(dist[0, ly]):
        raise ChainInfeasibleError("no path with the required clearance joins the endpoints")
    walk = [ly]
    while walk[-1] != lx:
        walk.append(int(pred[0, walk[-1]]))
    nodes = keep[np.asarray(walk[::-1])]
    coords = d.origin_array + d.h * np.stack(np.unravel_index(flat[nodes], d.shape), axis=1)
    pts = [x]
    for p in coords:
        if np.linalg.norm(p - pts[-1]) > 1e-15:
            pts.append(p)
    if np.linalg.norm(y - pts[-1]) > 1e-15:
        pts.append(y)
    path = np.asarray(pts)
    path_length = float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())
    _, full = _dijkstra(d, [gx])
    geo = float(full[0, gy]) + float(np.linalg.norm(x - coords[0])) + float(np.linalg.norm(y - coords[-1]))
    geo_lower = max(geo / LATTICE_DISTORTION[d.dim], float(np.linalg.norm(x - y)))
    if path_length > max_path_ratio * max(geo_lower, 1e-300):
        raise ChainInfeasibleError(
            f"clearance path length {path_length:.6g} exceeds {max_path_ratio} x geodesic {geo_lower:.6g}"
        )
    centers = _first_exit_centers(path, r)
    if clearance > 0 and np.any(d.distance_to_boundary(centers) <= margin):
        raise ChainInfeasibleError("a chain center violates the clearance margin")
    return BallChain(centers, r, x, y, path, path_length, geo)


@dataclass(frozen=True, eq=False)
class CubeCover:
    """Disjoint half-open cubes ``Q(x^j, s)`` of side ``2 s`` covering a region."""

    region: InteriorRegion
    half_width: float
    centers: np.ndarray  # (|J|, n)
    assignment: np.ndarray  # cube index of each region node, ordered like region.node_set

    @property
    def size(self) -> int:
        return len(self.centers)

    def bound(self) -> float:
        """``(diam / s + 1)^n`` upper bound on the number of cubes."""
        return (self.region.diameter() / self.half_width + 1.0) ** self.region.parent.dim


def cube_cover(region: InteriorRegion, s: float) -> CubeCover:
    """Tile ``region`` by a lattice of cubes of half-width ``s`` anchored at its lowest node.

    Each node is assigned to exactly one cube (nodes on shared faces go to the
    upper cube); cubes without nodes are dropped. Cube indices are ordered
    lexicographically by center.
    """
    s = float(s)
    if s <= region.parent.h:
        raise ValidationError(f"cube half-width {s} must exceed h={region.parent.h}")
    pts = region.points
    if len(pts) == 0:
        raise ValidationError("cannot cover an empty region")
    anchor = pts.min(axis=0)
    cell = np.floor((pts - anchor) / (2 * s) + 1e-12).astype(np.int64)
    keys, assignment = np.unique(cell, axis=0, return_inverse=True)
    centers = anchor + (keys + 0.5) * (2 * s)
    return CubeCover(region, s, centers, assignment.ravel())


def segment_lengths(points: Sequence) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return np.linalg.norm(np.diff(pts, axis=0), axis=1)
