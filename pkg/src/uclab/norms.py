"""L2 norms of grid fields over balls, cubes and weighted node masks.

Inside a cell the field is the multilinear interpolant of its corner values.
Cell integrals of ``u^2`` use the tensor two-point Gauss rule, which is exact
for that interpolant. A ball integral keeps the Gauss points that fall inside
the ball (2 x 2 subsampling in 2D, 2 x 2 x 2 in 3D), so partially covered cells
get a subsampled volume fraction. Cube integrals clip each cell to the cube
and integrate the overlap box exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import BallEscapesDomainError, ValidationError
from .elliptic import DiscreteField
from .geometry import GridDomain, InteriorRegion

__all__ = [
    "MaskSet",
    "l2_ball",
    "l2_cube",
    "l2_mask",
    "cell_integrals",
    "mask_from_region",
    "mask_from_box",
]

_GAUSS = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)


def _corner_offsets(n):
    return np.asarray(list(itertools.product((0, 1), repeat=n)))


def _interp_weights(xi: np.ndarray) -> np.ndarray:
    """Multilinear weights of the cell corners at local coordinates ``xi`` in ``[0, 1]^n``, shape (..., 2^n)."""
    n = xi.shape[-1]
    corners = _corner_offsets(n)
    w = np.ones(xi.shape[:-1] + (len(corners),))
    for k in range(n):
        xk = xi[..., k : k + 1]
        w = w * np.where(corners[:, k] == 1, xk, 1.0 - xk)
    return w


def _gauss_local(n: int) -> np.ndarray:
    return np.asarray(list(itertools.product(_GAUSS, repeat=n)))


def _corner_values(u: DiscreteField, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Corner values of cells with index in ``[lo, hi)``, shape cells + (2^n,)."""
    n = u.domain.dim
    vals = []
    for c in _corner_offsets(n):
        sl = tuple(slice(a + o, b + o) for a, b, o in zip(lo, hi, c))
        vals.append(u.values[sl])
    return np.stack(vals, axis=-1)


def cell_integrals(u: DiscreteField) -> np.ndarray:
    """Exact integral of the squared interpolant over every cell of the bounding box."""
    d = u.domain
    n = d.dim
    cv = _corner_values(u, np.zeros(n, int), np.asarray(d.cell_mask.shape))
    w = _interp_weights(_gauss_local(n))  # (2^n gauss, 2^n corners)
    ug = cv @ w.T
    out = (ug**2).sum(axis=-1) * (d.cell_volume / len(w))
    return np.where(d.cell_mask, out, 0.0)


def _check_ball(d: GridDomain, x: np.ndarray, r: float) -> None:
    if r < 2 * d.h - 1e-12 * d.h:
        raise ValidationError(f"radius {r} below 2h = {2 * d.h}")
    if not d.contains(x[None])[0] or d.distance_to_boundary(x[None])[0] <= r:
        raise BallEscapesDomainError(f"ball B({tuple(np.round(x, 6))}, {r}) is not contained in the domain")


def _window(d: GridDomain, lo_pt, hi_pt):
    lo = np.floor((lo_pt - d.origin_array) / d.h).astype(int)
    hi = np.floor((hi_pt - d.origin_array) / d.h).astype(int) + 1
    shape = np.asarray(d.cell_mask.shape)
    return np.clip(lo, 0, shape), np.clip(hi, 0, shape)


def l2_ball(u: DiscreteField, x, r: float, check: bool = True) -> float:
    """``||u||_{L2(B(x, r))}``; raises if the ball is not strictly inside the domain."""
    d = u.domain
    n = d.dim
    x = np.asarray(x, dtype=float)
    r = float(r)
    if check:
        _check_ball(d, x, r)
    lo, hi = _window(d, x - r, x + r)
    cv = _corner_values(u, lo, hi)
    local = _gauss_local(n)
    w = _interp_weights(local)
    ug = cv @ w.T  # cells + (2^n,)
    axes = [d.origin[k] + d.h * np.arange(lo[k], hi[k]) for k in range(n)]
    cell_lo = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = cell_lo[..., None, :] + d.h * local  # cells + (2^n, n)
    inside = np.sum((pts - x) ** 2, axis=-1) < r * r
    total = np.sum(np.where(inside, ug**2, 0.0)) * (d.cell_volume / len(local))
    return float(np.sqrt(total))


def l2_cube(u: DiscreteField, x, s: float, check: bool = True) -> float:
    """``||u||_{L2(Q(x, s))}`` over the open cube of half-width ``s``, with exact cell overlaps."""
    d = u.domain
    n = d.dim
    x = np.asarray(x, dtype=float)
    s = float(s)
    if check:
        _check_ball(d, x, s * np.sqrt(n) if s * np.sqrt(n) >= 2 * d.h else 2 * d.h)
    qlo, qhi = x - s, x + s
    lo, hi = _window(d, qlo, qhi)
    axes = [d.origin[k] + d.h * np.arange(lo[k], hi[k]) for k in range(n)]
    cell_lo = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    cell_hi = cell_lo + d.h
    ov_lo = np.maximum(cell_lo, qlo)
    ov_hi = np.minimum(cell_hi, qhi)
    ext = np.clip(ov_hi - ov_lo, 0.0, None)
    full = np.all((cell_lo >= qlo) & (cell_hi <= qhi), axis=-1)
    partial = ~full & np.all(ext > 0, axis=-1)
    ci = cell_integrals(u)[tuple(slice(a, b) for a, b in zip(lo, hi))]
    total = np.sum(ci[full])
    if partial.any():
        cv = _corner_values(u, lo, hi)[partial]
        plo, pext = ov_lo[partial], ext[partial]
        local = _gauss_local(n)
        pts = plo[:, None, :] + pext[:, None, :] * local  # (m, 2^n, n)
        xi = (pts - cell_lo[partial][:, None, :]) / d.h
        w = _interp_weights(xi)  # (m, 2^n gauss, 2^n corners)
        ug = np.einsum("mgc,mc->mg", w, cv)
        vol = np.prod(pext, axis=-1)
        total = total + np.sum((ug**2).sum(axis=-1) * vol / len(local))
    return float(np.sqrt(total))


@dataclass(frozen=True, eq=False)
class MaskSet:
    """Weighted set of nodes; each node stands for its dual cell, weight in ``[0, 1]``."""

    domain: GridDomain
    weights: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.weights.shape != self.domain.shape:
            raise ValidationError("mask weights must live on the node lattice")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValidationError("mask weights must lie in [0, 1]")

    @property
    def measure(self) -> float:
        return float(np.sum(self.weights * self.domain.node_weights))

    def complement(self) -> "MaskSet":
        return MaskSet(self.domain, np.where(self.domain.closure_mask, 1.0 - self.weights, 0.0), f"~{self.label}")


def l2_mask(u: DiscreteField, E: MaskSet, normalized: bool = False) -> float:
    """``||u||_{L2(E)}``, or ``|| |E|^{-1/2} u ||_{L2(E)}`` when ``normalized``."""
    if E.measure <= 0.0:
        raise ValidationError("mask has zero measure")
    sq = float(np.sum(E.weights * u.domain.node_weights * u.values**2))
    if normalized:
        sq /= E.measure
    return float(np.sqrt(sq))


def mask_from_region(region: InteriorRegion, label: str = "") -> MaskSet:
    return MaskSet(region.parent, region.node_mask.astype(float), label or f"region(rho={region.rho})")


def mask_from_box(d: GridDomain, lo, hi, label: str = "") -> MaskSet:
    """Fraction of each node's dual cell (clipped to the domain cells) lying in the box ``[lo, hi]``."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    frac = np.ones(d.shape)
    for k in range(d.dim):
        c = d.origin[k] + d.h * np.arange(d.shape[k])
        a = np.clip(np.minimum(c + d.h / 2, hi[k]) - np.maximum(c - d.h / 2, lo[k]), 0, None) / d.h
        shape = [1] * d.dim
        shape[k] = -1
        frac = frac * a.reshape(shape)
    # the domain part of a boundary node's dual cell is already in node_weights
    weights = np.where(d.closure_mask, np.clip(frac, 0.0, 1.0), 0.0)
    return MaskSet(d, weights, label or f"box{tuple(lo)}-{tuple(hi)}")
