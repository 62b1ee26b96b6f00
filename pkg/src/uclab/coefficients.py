"""Grid-sampled coefficients of the divergence-form operator and Riemannian metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import ValidationError
from .expr import evaluate
from .geometry import GridDomain

__all__ = [
    "CoefficientField",
    "MetricField",
    "make_coefficients",
    "make_metric",
    "ellipticity_directions",
]


def ellipticity_directions(n: int) -> np.ndarray:
    """Fixed set of ``2n + 4`` unit directions used to spot-check ellipticity."""
    dirs = [s * e for e in np.eye(n) for s in (1.0, -1.0)]
    if n == 2:
        diag = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    else:
        diag = [(1, 1, 1), (1, 1, -1), (1, -1, 1), (-1, 1, 1)]
    dirs += [np.asarray(v, float) / np.sqrt(n) for v in diag]
    return np.asarray(dirs)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    domain: GridDomain
    A: np.ndarray  # shape + (n, n)
    B: np.ndarray  # shape + (n,)
    W: np.ndarray
    V: np.ndarray
    kappa: float
    varkappa: float
    singular_truncation: float
    metadata: dict = field(default_factory=dict)

    @property
    def self_adjoint(self) -> bool:
        """The weak form is symmetric exactly when ``W = -B``."""
        return bool(np.array_equal(self.W, -self.B))

    def check_directions(self) -> bool:
        """Verify ``kappa^-1 |xi|^2 <= A xi.xi <= kappa |xi|^2`` on the fixed direction set."""
        closure = self.domain.closure_mask
        dirs = ellipticity_directions(self.domain.dim)
        q = np.einsum("...kl,dk,dl->...d", self.A[closure], dirs, dirs)
        tol = 1e-12 * self.kappa
        return bool(np.all(q >= 1.0 / self.kappa - tol) and np.all(q <= self.kappa + tol))


def _vector(formulas: Mapping, key: str, n: int, coords):
    spec = formulas.get(key)
    if spec is None:
        spec = [formulas.get(f"{key}{k + 1}", 0.0) for k in range(n)]
    if isinstance(spec, (str, int, float)) or callable(spec):
        raise ValidationError(f"{key} needs {n} components")
    if len(spec) != n:
        raise ValidationError(f"{key} needs {n} components, got {len(spec)}")
    return np.stack([evaluate(f, coords) for f in spec], axis=-1)


def _matrix(spec, n: int, coords, what: str) -> np.ndarray:
    shape = np.shape(coords[0])
    if isinstance(spec, (str, int, float)) or callable(spec):
        scalar = evaluate(spec, coords)
        return scalar[..., None, None] * np.eye(n)
    rows = np.asarray(spec, dtype=object)
    if rows.shape != (n, n):
        raise ValidationError(f"{what} must be a scalar or an {n}x{n} matrix of formulas")
    out = np.empty(shape + (n, n))
    for k in range(n):
        for l in range(n):
            out[..., k, l] = evaluate(rows[k, l], coords)
    if not np.array_equal(out, np.swapaxes(out, -1, -2)):
        raise ValidationError(f"{what} is not symmetric")
    return out


def _matrix_from_keys(formulas: Mapping, key: str, n: int, coords):
    if key in formulas:
        return _matrix(formulas[key], n, coords, key)
    entries = [[None] * n for _ in range(n)]
    found = False
    for k in range(n):
        for l in range(n):
            f = formulas.get(f"{key}{k + 1}{l + 1}", formulas.get(f"{key}{l + 1}{k + 1}"))
            if f is not None:
                found = True
            entries[k][l] = f if f is not None else (1.0 if k == l else 0.0)
    if not found:
        return None
    return _matrix(entries, n, coords, key)


def _truncate(values: np.ndarray, level: float, name: str) -> tuple[np.ndarray, bool]:
    if np.any(np.isnan(values)):
        raise ValidationError(f"{name} evaluates to NaN")
    clipped = np.clip(values, -level, level)
    return clipped, bool(np.any(clipped != values))


def make_coefficients(d: GridDomain, formulas: Mapping, truncation: float | None = None) -> CoefficientField:
    """Sample ``A, B, W, V`` on every node and certify the ellipticity and Lipschitz bounds.

    ``formulas`` maps ``A`` (scalar formula for ``a I`` or an ``n x n`` nested
    list; entries ``A11``, ``A12``... are also accepted), ``B``/``W`` (lists or
    ``B1``, ``B2``...) and ``V`` to formula strings, numbers or callables.
    Lower-order coefficients are clipped at ``truncation`` (default ``1/h``),
    which is how singular formulas such as ``|x - x0|^-1`` are represented.

    ``kappa`` is the tightest bound ``max(lambda_max, 1/lambda_min)`` over the
    closed domain and ``varkappa`` the largest entrywise difference quotient
    over axis-adjacent node pairs.
    """
    n = d.dim
    coords = d.grid
    level = float(truncation) if truncation is not None else 1.0 / d.h
    A = _matrix_from_keys(formulas, "A", n, coords)
    if A is None:
        A = np.broadcast_to(np.eye(n), d.shape + (n, n)).copy()
    B, B_cut = _truncate(_vector(formulas, "B", n, coords), level, "B")
    W, W_cut = _truncate(_vector(formulas, "W", n, coords), level, "W")
    V, V_cut = _truncate(evaluate(formulas.get("V", 0.0), coords), level, "V")
    if not np.all(np.isfinite(A)):
        raise ValidationError("A must be finite at every node")
    closure = d.closure_mask
    eig = np.linalg.eigvalsh(A[closure])
    lam_min = eig[:, 0]
    bad = np.flatnonzero(lam_min <= 0.0)
    if len(bad):
        node = tuple(int(i) for i in np.argwhere(closure)[bad[0]])
        raise ValidationError(
            f"ellipticity violated at node {node}: smallest eigenvalue {lam_min[bad[0]]:.6g}"
        )
    kappa = float(max(eig[:, -1].max(), 1.0 / lam_min.min()))
    varkappa = 0.0
    for k in range(n):
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        both = closure[tuple(lo)] & closure[tuple(hi)]
        diff = np.abs(A[tuple(hi)] - A[tuple(lo)])[both]
        if diff.size:
            varkappa = max(varkappa, float(diff.max()) / d.h)
    meta = {
        "truncation_active": {"B": B_cut, "W": W_cut, "V": V_cut},
        "integrability": {
            "V_exponent": n / 2,
            "B_W_exponent_s": formulas.get("s", None),
        },
        "formulas": {k: str(v) for k, v in formulas.items() if not callable(v)},
    }
    return CoefficientField(d, A, B, W, V, kappa, varkappa, level, meta)


@dataclass(frozen=True, eq=False)
class MetricField:
    domain: GridDomain
    g: np.ndarray
    det_g: np.ndarray
    inv_g: np.ndarray
    reference: "MetricField | None" = None
    collar: float = 0.0

    @property
    def agrees_near_boundary_with(self):
        if self.reference is None:
            return None
        return self.reference, self.collar

    def collar_mask(self, width: float | None = None) -> np.ndarray:
        width = self.collar if width is None else width
        return self.domain.closure_mask & (self.domain.boundary_distance <= width)

    @property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det_g)


def make_metric(d: GridDomain, formula, collar_reference: MetricField | None = None, collar: float = 0.0) -> MetricField:
    """Sample a Riemannian metric (scalar conformal factor or ``n x n`` formula matrix).

    With ``collar_reference``, nodes within ``collar`` of the boundary are
    overwritten with the reference metric bit for bit.
    """
    n = d.dim
    g = _matrix(formula, n, d.grid, "g")
    closure = d.closure_mask
    outside = ~closure
    g[outside] = np.eye(n)
    if collar_reference is not None:
        if collar_reference.domain.shape != d.shape or collar_reference.domain.h != d.h:
            raise ValidationError("collar reference lives on a different grid")
        band = closure & (d.boundary_distance <= collar)
        g[band] = collar_reference.g[band]
    eig = np.linalg.eigvalsh(g[closure])
    bad = np.flatnonzero(eig[:, 0] <= 0.0)
    if len(bad):
        node = tuple(int(i) for i in np.argwhere(closure)[bad[0]])
        raise ValidationError(f"metric not positive definite at node {node}: spectrum {eig[bad[0]]}")
    det_g = np.linalg.det(g)
    inv_g = np.linalg.inv(g)
    if collar_reference is not None:
        det_g[band] = collar_reference.det_g[band]
        inv_g[band] = collar_reference.inv_g[band]
    defect = np.abs(np.einsum("...kl,...lm->...km", inv_g, g) - np.eye(n)).max()
    if defect > 1e-12:
        raise ValidationError(f"metric inversion defect {defect:.3g} exceeds 1e-12")
    return MetricField(d, g, det_g, inv_g, collar_reference, float(collar) if collar_reference is not None else 0.0)
