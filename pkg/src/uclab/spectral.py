"""Dirichlet eigenproblems, boundary spectral data and gauge comparisons.

The generalized problem is ``K phi = lam M phi`` on interior nodes, with the
flux-form stiffness ``K`` and the diagonal (lumped) mass ``M``. For the
Laplace-Beltrami operator ``K`` uses ``sqrt|g| g^-1`` as diffusion matrix and
``M = sqrt|g| h^n``. Eigenpairs come from shift-invert Lanczos followed by a
Rayleigh-Ritz cleanup in the computed subspace, so the returned modes are
mass-orthonormal to rounding.

Boundary traces ``psi = d_nu phi`` live on boundary faces: nodal one-sided
second-order differences along the inward normal, scaled by
``sqrt(g^kk)`` and averaged over the corners of each face.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .coefficients import MetricField
from .elliptic import DiscreteField, DiscreteOperator, assemble_form
from .exceptions import ConvergenceError, SigmaDegenerateError, ValidationError
from .geometry import FaceSet, GridDomain, InteriorRegion
from .io import read_field, sha256_file, write_field
from .norms import MaskSet, l2_ball, l2_mask

__all__ = [
    "EigenSystem",
    "SpectralData",
    "assemble_beltrami",
    "operator_system",
    "solve_eigs",
    "sigma_from_box",
    "boundary_traces",
    "gauge_transform",
    "compare_spectral_data",
    "eigen_lower_bounds",
    "richardson",
    "weyl_count",
    "square_dirichlet_eigenvalues",
    "save_spectral_data",
    "load_spectral_data",
]

RESIDUAL_TOL = 1e-8
CLUSTER_GAP = 1e-6


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Stiffness and lumped mass on the interior nodes of a domain."""

    domain: GridDomain
    stiffness: sparse.csr_matrix
    mass: np.ndarray  # diagonal, one entry per interior node
    interior_ids: np.ndarray
    node_density: np.ndarray  # lattice array, sqrt|g| (or 1)
    metric: MetricField | None = None

    def symmetry_defect(self) -> float:
        k = self.stiffness
        return float(abs(k - k.T).max() / max(abs(k).max(), 1e-300))


def _check_positive_definite(k: sparse.csr_matrix) -> None:
    lu = spla.splu(k.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    diag = lu.U.diagonal()
    if np.any(diag <= 0.0):
        raise ValidationError(f"stiffness is not positive definite ({int(np.sum(diag <= 0))} nonpositive pivots)")


def assemble_beltrami(d: GridDomain, g: MetricField, check: bool = True) -> EigenSystem:
    """Stiffness and mass of ``-Delta_g`` with Dirichlet conditions."""
    if g.domain.shape != d.shape or g.domain.h != d.h:
        raise ValidationError("metric lives on a different grid")
    sq = g.sqrt_det
    A = sq[..., None, None] * g.inv_g
    full = assemble_form(d, A) * d.cell_volume
    ids = np.flatnonzero(d.interior_mask)
    k = full[ids][:, ids].tocsr()
    k.sum_duplicates()
    k = (0.5 * (k + k.T)).tocsr()
    mass = (d.node_weights * sq).ravel()[ids]
    if check:
        _check_positive_definite(k)
    return EigenSystem(d, k, mass, ids, sq, g)


def operator_system(op: DiscreteOperator) -> EigenSystem:
    """Eigen system of a symmetric Dirichlet operator (``W = -B``)."""
    if not op.symmetric_flag:
        raise ValidationError("eigenproblems need the self-adjoint case W = -B")
    d = op.domain
    k = (op.matrix * d.cell_volume).tocsr()
    k = (0.5 * (k + k.T)).tocsr()
    mass = d.node_weights.ravel()[op.interior_ids]
    return EigenSystem(d, k, mass, op.interior_ids, np.ones(d.shape))


@dataclass(frozen=True, eq=False)
class SpectralData:
    eigenvalues: np.ndarray
    modes: np.ndarray  # (k, *lattice shape), zero off the interior
    mass_weights: np.ndarray  # lattice array: node weight x density
    system: EigenSystem
    shift: float
    residuals: np.ndarray
    traces: np.ndarray | None = None  # (k, faces)
    sigma: np.ndarray | None = None  # bool over domain.boundary_faces
    anchor: np.ndarray | None = None
    gauge: np.ndarray | None = None  # lattice chi when gauge transformed
    label: str = ""

    @property
    def domain(self) -> GridDomain:
        return self.system.domain

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def field(self, j: int) -> DiscreteField:
        return DiscreteField(self.domain, self.modes[j], f"{self.label}phi_{j + 1}")

    def gram(self) -> np.ndarray:
        flat = self.modes.reshape(self.k, -1)
        return (flat * self.mass_weights.ravel()) @ flat.T

    def mode_residuals(self, system: EigenSystem | None = None) -> np.ndarray:
        sysm = system or self.system
        out = np.empty(self.k)
        for j in range(self.k):
            v = self.modes[j].ravel()[sysm.interior_ids]
            mv = sysm.mass * v
            out[j] = np.linalg.norm(sysm.stiffness @ v - self.eigenvalues[j] * mv) / np.linalg.norm(mv)
        return out

    @property
    def sigma_faces(self) -> FaceSet:
        return self.domain.boundary_faces.subset(self.sigma)


def _gershgorin_shift(system: EigenSystem) -> float:
    k = system.stiffness
    diag = k.diagonal()
    off = np.asarray(abs(k).sum(axis=1)).ravel() - np.abs(diag)
    low = float(np.min((diag - off) / system.mass))
    return 0.0 if low > 0 else -low + 1.0


def solve_eigs(system: EigenSystem, k: int, shift: float | None = None, tol: float = RESIDUAL_TOL) -> SpectralData:
    """Lowest ``k`` eigenpairs of ``K phi = lam M phi``.

    ``shift`` is the spectral shift added before factorizing; by default it
    is zero when a Gershgorin probe certifies positivity and a safe value
    otherwise. It never changes the returned eigenpairs.
    """
    d = system.domain
    n = system.stiffness.shape[0]
    if not 1 <= k <= min(50, n - 2):
        raise ValidationError(f"k must lie in [1, {min(50, n - 2)}]")
    lam_star = _gershgorin_shift(system) if shift is None else float(shift)
    M = sparse.diags(system.mass)
    shifted = (system.stiffness + lam_star * M).tocsc()
    lu = spla.splu(shifted)
    op_inv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = np.ones(n) / math.sqrt(n)
    try:
        vals, vecs = spla.eigsh(shifted, k=k, M=M, sigma=0.0, which="LM", OPinv=op_inv, v0=v0,
                                ncv=min(n, max(2 * k + 1, 20)), tol=0.0)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"Lanczos did not converge: {exc}", []) from None
    # Rayleigh-Ritz in the converged subspace
    mv = system.mass[:, None] * vecs
    kr = vecs.T @ (system.stiffness @ vecs)
    mr = vecs.T @ mv
    kr = 0.5 * (kr + kr.T)
    mr = 0.5 * (mr + mr.T)
    lam, rot = sla.eigh(kr, mr)
    vecs = vecs @ rot
    order = np.argsort(lam, kind="stable")
    lam, vecs = lam[order], vecs[:, order]
    modes = np.zeros((k,) + d.shape)
    flat = modes.reshape(k, -1)
    for j in range(k):
        v = vecs[:, j]
        big = int(np.argmax(np.abs(v)))
        if v[big] < 0:
            v = -v
        flat[j, system.interior_ids] = v
    weights = (d.node_weights * system.node_density).copy()
    weights[~d.interior_mask] = 0.0
    data = SpectralData(lam, modes, weights, system, lam_star, np.zeros(k), label="")
    res = data.mode_residuals()
    if np.any(res > tol * np.maximum(1.0, np.abs(lam))):
        raise ConvergenceError(f"eigen residuals above tolerance: {res.max():.3e}", res.tolist())
    return replace(data, residuals=res)


def sigma_from_box(d: GridDomain, lo=None, hi=None) -> np.ndarray:
    """Boundary faces whose midpoints lie in the closed box ``[lo, hi]`` (all faces by default)."""
    mid = d.boundary_faces.midpoints
    keep = np.ones(len(mid), dtype=bool)
    if lo is not None:
        keep &= np.all(mid >= np.asarray(lo) - 1e-12, axis=1)
    if hi is not None:
        keep &= np.all(mid <= np.asarray(hi) + 1e-12, axis=1)
    return keep


def _face_distance(faces: FaceSet, x: np.ndarray) -> np.ndarray:
    gap = np.maximum(np.maximum(faces.lo - x, x - faces.hi), 0.0)
    return np.sqrt((gap * gap).sum(axis=1))


def _density_check(d: GridDomain, sigma: np.ndarray, anchor: np.ndarray, r0: float) -> None:
    faces = d.boundary_faces.subset(sigma)
    dist = _face_distance(faces, anchor)
    r = 4 * d.h
    while r <= r0 * (1 + 1e-12):
        if not np.any(dist < r):
            raise SigmaDegenerateError(f"|Sigma n B(x~, {r:.4g})| = 0 at anchor {tuple(anchor)}")
        r *= 2
    if not np.any(dist < min(r0, 4 * d.h)):
        raise SigmaDegenerateError(f"|Sigma n B(x~, r)| = 0 for small r at anchor {tuple(anchor)}")


def _normal_derivatives(data: SpectralData, faces: FaceSet) -> np.ndarray:
    d = data.domain
    n = d.dim
    h = d.h
    vals = data.modes
    inv_g = data.system.metric.inv_g if data.system.metric is not None else None
    corners = [np.asarray(c) for c in np.ndindex(*(2,) * n)]
    out = np.zeros((data.k, len(faces)))
    shape = np.asarray(d.shape)
    for f in range(len(faces)):
        k = faces.axis[f]
        step = np.zeros(n, dtype=int)
        step[k] = -faces.sign[f]  # inward
        acc = np.zeros(data.k)
        cnt = 0
        for c in corners:
            if c[k]:
                continue
            p = faces.lo_index[f] + c
            p1, p2 = p + step, p + 2 * step
            if np.any(p2 < 0) or np.any(p2 >= shape):
                continue
            deriv = (-3 * vals[(slice(None),) + tuple(p)] + 4 * vals[(slice(None),) + tuple(p1)]
                     - vals[(slice(None),) + tuple(p2)]) / (2 * h)
            scale = math.sqrt(inv_g[tuple(p)][k, k]) if inv_g is not None else 1.0
            acc += -deriv * scale  # outward derivative
            cnt += 1
        out[:, f] = acc / max(cnt, 1)
    return out


def boundary_traces(data: SpectralData, sigma: np.ndarray, anchor=None, r0: float | None = None) -> SpectralData:
    """Attach ``psi_k = d_nu phi_k`` on all boundary faces and fix signs by ``int_Sigma psi_k > 0``.

    ``anchor`` defaults to the midpoint of the first face of ``Sigma``; the
    density condition ``|Sigma n B(anchor, r)| > 0`` is checked for
    ``4 h <= r <= r0``.
    """
    d = data.domain
    sigma = np.asarray(sigma, dtype=bool)
    faces = d.boundary_faces
    if sigma.shape != (len(faces),):
        raise ValidationError("Sigma must be a boolean mask over the boundary faces")
    if not sigma.any():
        raise SigmaDegenerateError("Sigma is empty")
    mids = faces.midpoints[sigma]
    anchor = mids[0] if anchor is None else np.asarray(anchor, dtype=float)
    r0 = 4 * d.h if r0 is None else float(r0)
    _density_check(d, sigma, anchor, r0)
    psi = _normal_derivatives(data, faces)
    area = faces.areas
    modes = data.modes.copy()
    for j in range(data.k):
        total = float(np.sum(psi[j, sigma] * area[sigma]))
        scale = float(np.max(np.abs(psi[j, sigma]))) if sigma.any() else 0.0
        if abs(total) > 1e-10 * max(scale, 1e-300) * area[sigma].sum():
            flip = total < 0
        else:
            flip = psi[j, sigma][int(np.argmax(np.abs(psi[j, sigma])))] < 0
        if flip:
            psi[j] = -psi[j]
            modes[j] = -modes[j]
    return replace(data, modes=modes, traces=psi, sigma=sigma, anchor=anchor)


def gauge_transform(data: SpectralData, chi: DiscreteField) -> SpectralData:
    """Spectral data of ``chi A chi^-1``: same eigenvalues, modes ``chi phi``, weight ``chi^-2 dV``."""
    d = data.domain
    if chi.domain.shape != d.shape or chi.domain.h != d.h:
        raise ValidationError("gauge lives on a different grid")
    c = chi.values
    closure = d.closure_mask
    if np.any(c[closure] <= 0.0):
        bad = tuple(int(i) for i in np.argwhere(closure & (c <= 0.0))[0])
        raise ValidationError(f"gauge must be positive; chi = {c[bad]:.6g} at node {bad}")
    sysm = data.system
    ci = c.ravel()[sysm.interior_ids]
    dinv = sparse.diags(1.0 / ci)
    stiff = (dinv @ sysm.stiffness @ dinv).tocsr()
    new_sys = EigenSystem(d, stiff, sysm.mass / ci**2, sysm.interior_ids, sysm.node_density / np.where(closure, c, 1.0) ** 2, sysm.metric)
    modes = data.modes * c
    weights = data.mass_weights / np.where(closure, c, 1.0) ** 2
    traces = None
    if data.traces is not None:
        faces = d.boundary_faces
        n = d.dim
        cf = np.zeros(len(faces))
        for corner in np.ndindex(*(2,) * n):
            corner = np.asarray(corner)
            keep = corner[faces.axis] == 0
            idx = faces.lo_index + corner
            cf[keep] += c[tuple(idx[keep].T)]
        cf /= 2 ** (n - 1)
        traces = data.traces * cf
    out = SpectralData(data.eigenvalues.copy(), modes, weights, new_sys, data.shift, data.residuals, traces,
                       data.sigma, data.anchor, c.copy(), data.label)
    res = out.mode_residuals()
    if np.any(res > RESIDUAL_TOL * np.maximum(1.0, np.abs(out.eigenvalues))):
        raise ConvergenceError(f"gauge-transformed residual {res.max():.3e} above tolerance", res.tolist())
    return replace(out, residuals=res)


def _clusters(lam: np.ndarray, k_max: int) -> list[list[int]]:
    groups = [[0]]
    for j in range(1, len(lam)):
        if lam[j] - lam[j - 1] < CLUSTER_GAP * max(abs(lam[j]), 1.0):
            groups[-1].append(j)
        else:
            if groups[-1][0] >= k_max:
                break
            groups.append([j])
    return [g for g in groups if g[0] < k_max]


def compare_spectral_data(d1: SpectralData, d2: SpectralData, sigma=None, k_max: int = 10, tol: float = 1e-6,
                          collar: float | None = None) -> dict:
    """Compare boundary spectral data mode by mode, aligning degenerate clusters.

    Within each eigenvalue cluster the traces of ``d2`` are rotated onto those
    of ``d1`` by an orthogonal Procrustes fit in ``L2(Sigma)``, and subspace
    angles between the trace spans are reported. The verdict is ``match``
    when every relative eigenvalue gap and relative trace distance is within
    ``tol``. The collar diagnostic ``||phi1 - phi2||_L2(N)`` uses the same
    rotation.
    """
    dom1, dom2 = d1.domain, d2.domain
    if dom1.shape != dom2.shape or dom1.h != dom2.h or not np.array_equal(dom1.cell_mask, dom2.cell_mask):
        raise ValidationError("spectral data live on different grids")
    if d1.traces is None or d2.traces is None:
        raise ValidationError("both datasets need boundary traces")
    sigma = d1.sigma if sigma is None else np.asarray(sigma, dtype=bool)
    if not (np.array_equal(d1.sigma, sigma) and np.array_equal(d2.sigma, sigma)):
        raise ValidationError("datasets were traced on a different Sigma")
    k_max = min(k_max, d1.k, d2.k)
    g1, g2 = d1.system.metric, d2.system.metric
    width = collar
    if g1 is not None and g2 is not None:
        if width is None:
            width = g2.collar if g2.reference is not None else g1.collar
        band = dom1.closure_mask & (dom1.boundary_distance <= width)
        if not np.array_equal(g1.g[band], g2.g[band]):
            raise ValidationError("metrics differ inside the boundary collar")
    width = 0.0 if width is None else width
    collar_mask = dom1.closure_mask & (dom1.boundary_distance <= width)
    area = np.sqrt(dom1.boundary_faces.areas[sigma])
    modes = []
    for group in _clusters(d1.eigenvalues, k_max):
        group = [j for j in group if j < d2.k]
        p1 = d1.traces[group][:, sigma] * area
        p2 = d2.traces[group][:, sigma] * area
        if np.array_equal(p1, p2) and np.array_equal(d1.modes[group], d2.modes[group]):
            rot = np.eye(len(group))
        else:
            rot, _ = sla.orthogonal_procrustes(p2.T, p1.T)
        aligned = rot.T @ p2
        phi2 = np.tensordot(rot.T, d2.modes[group], axes=1)
        angles = sla.subspace_angles(p1.T, p2.T) if len(group) > 1 else np.zeros(1)
        for i, j in enumerate(group):
            if j >= k_max:
                continue
            ref = float(np.linalg.norm(p1[i]))
            dpsi = float(np.linalg.norm(p1[i] - aligned[i]))
            diff = d1.modes[j] - phi2[i]
            dn = float(np.sqrt(np.sum((d1.mass_weights * diff**2)[collar_mask])))
            modes.append({
                "k": j + 1,
                "lambda_1": float(d1.eigenvalues[j]),
                "lambda_2": float(d2.eigenvalues[j]),
                "dlambda": float(abs(d1.eigenvalues[j] - d2.eigenvalues[j])),
                "dpsi": dpsi,
                "dpsi_rel": dpsi / ref if ref > 0 else dpsi,
                "cluster": [g + 1 for g in group],
                "max_subspace_angle": float(np.max(angles)),
                "collar_distance": dn,
            })
    ok = all(m["dlambda"] <= tol * max(1.0, abs(m["lambda_1"])) and m["dpsi_rel"] <= tol for m in modes)
    return {
        "verdict": "match" if ok else "differ",
        "k_max": k_max,
        "tol": tol,
        "collar_width": width,
        "max_dlambda": max(m["dlambda"] for m in modes),
        "max_dpsi": max(m["dpsi"] for m in modes),
        "max_dpsi_rel": max(m["dpsi_rel"] for m in modes),
        "max_collar_distance": max(m["collar_distance"] for m in modes),
        "modes": modes,
    }


def eigen_lower_bounds(
    data: SpectralData,
    centers: np.ndarray | InteriorRegion,
    masks: Sequence[MaskSet] = (),
    radii: Sequence[float] = (),
    k_max: int | None = None,
) -> list[dict]:
    """Per mode: ``min ||phi_j||_B(x, r) r^(-n/2)`` over centers and radii, and ``min ||phi_j||_E`` over masks."""
    d = data.domain
    n = d.dim
    pts = centers.points if isinstance(centers, InteriorRegion) else np.atleast_2d(centers)
    k_max = data.k if k_max is None else min(k_max, data.k)
    rows = []
    for j in range(k_max):
        phi = data.field(j)
        ball = [l2_ball(phi, x, r) * r ** (-n / 2) for x in pts for r in radii]
        mask = [l2_mask(phi, E) for E in masks]
        rows.append({
            "j": j + 1,
            "lambda": float(data.eigenvalues[j]),
            "min_ball": float(min(ball)) if ball else math.nan,
            "min_mask": float(min(mask)) if mask else math.nan,
            "max_mask": float(max(mask)) if mask else math.nan,
        })
    return rows


def richardson(hs: Sequence[float], values: Sequence[np.ndarray], order: int = 2) -> np.ndarray:
    """Extrapolate ``v(h) = v0 + c1 h^p + c2 h^(2p) + ...`` to ``h = 0`` from ``len(hs)`` levels."""
    hs = np.asarray(hs, dtype=float)
    vals = np.asarray(values, dtype=float)
    if len(hs) != len(vals) or len(hs) < 2:
        raise ValidationError("need at least two levels")
    V = np.stack([hs ** (order * i) for i in range(len(hs))], axis=1)
    coef = np.linalg.solve(V, vals.reshape(len(hs), -1))
    return coef[0].reshape(vals.shape[1:])


def weyl_count(lam, area: float, perimeter: float | None = None) -> np.ndarray:
    """Weyl estimate ``|Omega| lam / 4 pi`` (minus ``|dOmega| sqrt(lam) / 4 pi`` when ``perimeter`` is given)."""
    lam = np.asarray(lam, dtype=float)
    out = area * lam / (4 * math.pi)
    if perimeter is not None:
        out = out - perimeter * np.sqrt(lam) / (4 * math.pi)
    return out


def square_dirichlet_eigenvalues(k: int, side: float = 1.0) -> np.ndarray:
    """First ``k`` values of ``pi^2 (p^2 + q^2) / side^2``, with multiplicity."""
    m = int(math.ceil(math.sqrt(k))) + 2
    vals = sorted((p * p + q * q) for p in range(1, m + 4) for q in range(1, m + 4))
    return math.pi**2 * np.asarray(vals[:k], dtype=float) / side**2


def save_spectral_data(data: SpectralData, directory) -> Path:
    """Write ``manifest.json`` plus one binary field file per mode (and one for the traces)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    d = data.domain
    files = {}
    for j in range(data.k):
        name = f"phi_{j + 1:03d}.bin"
        write_field(out / name, data.modes[j], d.h, d.origin_array)
        files[name] = sha256_file(out / name)
    write_field(out / "mass_weights.bin", data.mass_weights, d.h, d.origin_array)
    files["mass_weights.bin"] = sha256_file(out / "mass_weights.bin")
    if data.traces is not None:
        write_field(out / "traces.bin", data.traces, d.h)
        files["traces.bin"] = sha256_file(out / "traces.bin")
    manifest = {
        "eigenvalues": [float(v) for v in data.eigenvalues],
        "residuals": [float(v) for v in data.residuals],
        "shift": data.shift,
        "h": d.h,
        "shape": list(d.shape),
        "origin": [float(o) for o in d.origin_array],
        "sigma": None if data.sigma is None else np.flatnonzero(data.sigma).tolist(),
        "anchor": None if data.anchor is None else [float(a) for a in data.anchor],
        "label": data.label,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_spectral_data(directory, system: EigenSystem) -> SpectralData:
    """Read an archive written by :func:`save_spectral_data`; ``system`` supplies the operator."""
    src = Path(directory)
    manifest = json.loads((src / "manifest.json").read_text())
    d = system.domain
    if tuple(manifest["shape"]) != d.shape or manifest["h"] != d.h:
        raise ValidationError("archive does not match the grid of the given system")
    for name, digest in manifest["files"].items():
        if sha256_file(src / name) != digest:
            raise ValidationError(f"checksum mismatch for {name}")
    k = len(manifest["eigenvalues"])
    modes = np.stack([read_field(src / f"phi_{j + 1:03d}.bin")[0] for j in range(k)])
    weights = read_field(src / "mass_weights.bin")[0]
    traces = read_field(src / "traces.bin")[0] if "traces.bin" in manifest["files"] else None
    sigma = None
    if manifest["sigma"] is not None:
        sigma = np.zeros(len(d.boundary_faces), dtype=bool)
        sigma[manifest["sigma"]] = True
    anchor = None if manifest["anchor"] is None else np.asarray(manifest["anchor"])
    return SpectralData(np.asarray(manifest["eigenvalues"]), modes, weights, system, manifest["shift"],
                        np.asarray(manifest["residuals"]), traces, sigma, anchor, None, manifest["label"])
