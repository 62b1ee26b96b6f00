"""Weak-form discretization of ``E u = div(A grad u + u B) + W.grad u + V u``.

The assembled matrix represents ``-E`` (the operator of the bilinear form
``a(u, v) = int (A grad u + u B).grad v - (W.grad u + V u) v``), divided by the
cell volume so that ``A = I`` gives the familiar ``(4, -1, -1, -1, -1) / h^2``
rows. Diagonal diffusion and first-order terms live on axis edges with
face-averaged coefficients; off-diagonal diffusion lives on cells with
cell-averaged coefficients. Each piece is written as a bilinear form in
``(u, v)``, so the matrix is symmetric whenever the continuous form is.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.integrate import simpson
from scipy.sparse import linalg as spla

from .coefficients import CoefficientField
from .exceptions import ConvergenceError, ValidationError
from .expr import evaluate
from .geometry import GridDomain

__all__ = [
    "DiscreteField",
    "DiscreteOperator",
    "LiftedField",
    "assemble",
    "assemble_form",
    "solve_dirichlet",
    "residual",
    "lift_field",
    "cylinder_domain",
]

DIRECT_SOLVE_LIMIT = 100_000
SOLVE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Scalar values on every lattice node of a domain.

    Interior nodes hold the unknowns, boundary nodes hold the Dirichlet data
    and nodes outside the closed domain hold zero.
    """

    domain: GridDomain
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.values.shape != self.domain.shape:
            raise ValidationError(f"field shape {self.values.shape} != lattice {self.domain.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("field values must be finite")

    @classmethod
    def from_function(cls, domain: GridDomain, f, label: str = "", zero_boundary: bool = False):
        vals = evaluate(f, domain.grid)
        mask = domain.interior_mask if zero_boundary else domain.closure_mask
        vals = np.where(mask, vals, 0.0)
        return cls(domain, vals, label or (f if isinstance(f, str) else ""))

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.domain.interior_mask]

    @property
    def boundary_values(self) -> np.ndarray:
        d = self.domain
        return self.values[d.closure_mask & ~d.interior_mask]

    def l2_norm(self) -> float:
        """Lumped (trapezoidal) L2 norm over the domain."""
        return float(np.sqrt(np.sum(self.domain.node_weights * self.values**2)))

    def scaled(self, c: float, label: str | None = None) -> "DiscreteField":
        return DiscreteField(self.domain, c * self.values, self.label if label is None else label)

    def normalized(self) -> "DiscreteField":
        norm = self.l2_norm()
        if norm == 0.0:
            raise ValidationError("cannot normalize the zero field")
        return self.scaled(1.0 / norm)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    domain: GridDomain
    matrix: sparse.csr_matrix  # interior x interior
    rhs_lift: sparse.csr_matrix  # interior x boundary nodes
    interior_ids: np.ndarray  # flat lattice index of each unknown
    boundary_ids: np.ndarray  # flat lattice index of each boundary node
    symmetric_flag: bool
    coefficients: CoefficientField | None = None

    def symmetry_defect(self) -> float:
        m = self.matrix
        diff = abs(m - m.T).max()
        return float(diff / max(abs(m).max(), 1e-300))

    def load(self, rhs, boundary) -> np.ndarray:
        """Right-hand side for the unknowns: ``f_I - K_IB g_B``."""
        return rhs - self.rhs_lift @ boundary

    def apply(self, field: DiscreteField) -> np.ndarray:
        flat = field.values.ravel()
        return self.matrix @ flat[self.interior_ids] + self.rhs_lift @ flat[self.boundary_ids]


def _edge_pairs(d: GridDomain, k: int):
    """Flat indices (p, p + e_k) of axis-k edges with at least one interior endpoint."""
    interior = d.interior_mask
    lo = [slice(None)] * d.dim
    hi = [slice(None)] * d.dim
    lo[k] = slice(0, -1)
    hi[k] = slice(1, None)
    ids = np.arange(np.prod(d.shape)).reshape(d.shape)
    keep = interior[tuple(lo)] | interior[tuple(hi)]
    return ids[tuple(lo)][keep], ids[tuple(hi)][keep]


def assemble_form(d: GridDomain, A, B=None, W=None, V=None) -> sparse.csr_matrix:
    """Bilinear form matrix over all lattice nodes, scaled by ``1 / h^n``.

    Entry ``[b, a]`` is the coefficient of ``u_a v_b``; only rows of interior
    nodes are meaningful.
    """
    n = d.dim
    h = d.h
    total = int(np.prod(d.shape))
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    Af = A.reshape(total, n, n)
    Bf = None if B is None else B.reshape(total, n)
    Wf = None if W is None else W.reshape(total, n)
    for k in range(n):
        p, q = _edge_pairs(d, k)
        a = 0.5 * (Af[p, k, k] + Af[q, k, k]) / h**2
        add(p, p, a)
        add(q, q, a)
        add(p, q, -a)
        add(q, p, -a)
        if Bf is not None and np.any(Bf[:, k]):
            b = 0.5 * (Bf[p, k] + Bf[q, k]) / (2 * h)
            # u_bar (v_q - v_p)
            add(q, p, b)
            add(q, q, b)
            add(p, p, -b)
            add(p, q, -b)
        if Wf is not None and np.any(Wf[:, k]):
            w = 0.5 * (Wf[p, k] + Wf[q, k]) / (2 * h)
            # -(u_q - u_p) v_bar
            add(p, q, -w)
            add(p, p, w)
            add(q, q, -w)
            add(q, p, w)
    offdiag = [(k, l) for k in range(n) for l in range(n) if k != l]
    if offdiag and np.any([np.any(Af[:, k, l]) for k, l in offdiag]):
        interior = d.interior_mask
        padded = np.pad(interior, 1)
        touches = np.zeros(d.cell_mask.shape, dtype=bool)
        for shift in itertools.product((0, 1), repeat=n):
            sl = tuple(slice(1 + s, 1 + s + c) for s, c in zip(shift, d.cell_mask.shape))
            touches |= padded[sl]
        cells = np.argwhere(d.cell_mask & touches)
        corners = list(itertools.product((0, 1), repeat=n))
        corner_ids = np.stack(
            [np.ravel_multi_index(tuple((cells + np.asarray(c)).T), d.shape) for c in corners], axis=1
        )
        scale = 1.0 / (4 ** (n - 1) * h**2)
        for k, l in offdiag:
            akl = Af[corner_ids, k, l].mean(axis=1) * scale
            for ia, ca in enumerate(corners):
                sa = 1.0 if ca[k] else -1.0
                for ib, cb in enumerate(corners):
                    sb = 1.0 if cb[l] else -1.0
                    add(corner_ids[:, ib], corner_ids[:, ia], akl * sa * sb)
    if V is not None and np.any(V):
        ids = np.flatnonzero(d.interior_mask)
        add(ids, ids, -V.ravel()[ids])
    m = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(total, total)
    )
    return m.tocsr()


def assemble(d: GridDomain, c: CoefficientField) -> DiscreteOperator:
    """Assemble the Dirichlet operator of ``-E`` on the interior nodes."""
    if c.domain.shape != d.shape or c.domain.h != d.h:
        raise ValidationError("coefficient field lives on a different grid")
    full = assemble_form(d, c.A, c.B, c.W, c.V)
    interior_ids = np.flatnonzero(d.interior_mask)
    boundary_ids = np.flatnonzero(d.closure_mask & ~d.interior_mask)
    rows = full[interior_ids]
    matrix = rows[:, interior_ids].tocsr()
    lift = rows[:, boundary_ids].tocsr()
    matrix.sum_duplicates()
    lift.sum_duplicates()
    return DiscreteOperator(d, matrix, lift, interior_ids, boundary_ids, c.self_adjoint, c)


def _lattice_values(d: GridDomain, data, default=0.0) -> np.ndarray:
    if data is None:
        return np.full(d.shape, float(default))
    if isinstance(data, DiscreteField):
        return data.values
    if isinstance(data, np.ndarray) and data.shape == d.shape:
        return data.astype(float)
    return evaluate(data, d.grid)


def solve_dirichlet(op: DiscreteOperator, boundary=None, rhs=None, rtol: float = SOLVE_RTOL) -> DiscreteField:
    """Solve ``-E u = rhs`` with ``u = boundary`` on the boundary nodes.

    ``boundary`` and ``rhs`` may be formulas, callables, lattice arrays or
    fields. Systems up to ``DIRECT_SOLVE_LIMIT`` unknowns use a sparse LU
    factorization, larger ones a Krylov method stopped at ``rtol``.
    """
    d = op.domain
    g = _lattice_values(d, boundary).ravel()
    f = _lattice_values(d, rhs).ravel()
    load = op.load(f[op.interior_ids], g[op.boundary_ids])
    n = op.matrix.shape[0]
    history = []
    if n <= DIRECT_SOLVE_LIMIT:
        u = spla.splu(op.matrix.tocsc()).solve(load)
    else:
        def record(xk):
            history.append(float(np.linalg.norm(op.matrix @ xk - load)))

        solver = spla.cg if op.symmetric_flag else spla.gmres
        u, info = solver(op.matrix, load, rtol=rtol * 0.1, atol=0.0, maxiter=20 * n, callback=record)
        if info != 0:
            raise ConvergenceError(f"Krylov solver stopped with info={info}", history)
    scale = np.linalg.norm(load)
    res = np.linalg.norm(op.matrix @ u - load)
    if res > rtol * max(scale, 1e-300) and res > 1e-13:
        raise ConvergenceError(f"relative residual {res / max(scale, 1e-300):.3e} above {rtol}", history + [res])
    values = np.zeros(d.shape)
    flat = values.ravel()
    flat[op.boundary_ids] = g[op.boundary_ids]
    flat[op.interior_ids] = u
    return DiscreteField(d, values, "dirichlet")


def residual(op: DiscreteOperator, u: DiscreteField, rhs=None) -> float:
    """Relative residual ``|K u_I + K_IB u_B - f| / |f|`` (absolute when ``f = 0``)."""
    f = _lattice_values(op.domain, rhs).ravel()[op.interior_ids]
    r = np.linalg.norm(op.apply(u) - f)
    scale = np.linalg.norm(f)
    return float(r / scale) if scale > 0 else float(r)


def cylinder_domain(d: GridDomain, t_nodes: int) -> GridDomain:
    """Tensor cylinder ``domain x (0, 1)`` on the same spacing (requires ``1 / t_nodes == h``)."""
    if abs(1.0 / t_nodes - d.h) > 1e-12 * d.h:
        raise ValidationError("cylinder needs time spacing equal to h")
    if d.dim != 2:
        raise ValidationError("cylinders are built over 2D domains")
    cells = np.repeat(d.cell_mask[..., None], t_nodes, axis=-1)
    barriers = tuple(
        (tuple(lo) + (0.0,), tuple(hi) + (1.0,)) for lo, hi in d.barriers
    )
    return GridDomain(cells, d.h, tuple(d.origin) + (0.0,), barriers, name=f"{d.name}-cylinder")


@dataclass(frozen=True, eq=False)
class LiftedField:
    """``v(x, t) = exp(sqrt(lam) t) u(x)`` on ``domain x [0, 1]``."""

    base: DiscreteField
    lam: float
    t: np.ndarray
    values: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def l2_norm(self) -> float:
        w = self.base.domain.node_weights[..., None]
        per_t = np.sum(w * self.values**2, axis=tuple(range(self.values.ndim - 1)))
        return float(np.sqrt(simpson(per_t, x=self.t)))

    def residual(self, op: DiscreteOperator) -> float:
        """Relative discrete residual of ``(E + d_t^2) v`` at interior time levels."""
        dt = self.dt
        flat = self.values.reshape(-1, len(self.t))
        vi = flat[op.interior_ids]
        vb = flat[op.boundary_ids]
        space = -(op.matrix @ vi + op.rhs_lift @ vb)
        time = (vi[:, 2:] - 2 * vi[:, 1:-1] + vi[:, :-2]) / dt**2
        r = space[:, 1:-1] + time
        w = self.base.domain.node_weights.ravel()[op.interior_ids][:, None]
        num = math.sqrt(float(np.sum(w * r**2) * dt))
        return num / self.l2_norm()

    def to_cylinder(self) -> DiscreteField:
        cyl = cylinder_domain(self.base.domain, len(self.t) - 1)
        return DiscreteField(cyl, self.values.copy(), f"lift({self.base.label})")


def lift_field(u: DiscreteField, lam: float, t_nodes: int) -> LiftedField:
    """Lift ``u`` to the cylinder via ``v = exp(sqrt(lam) t) u`` on ``t_nodes`` uniform intervals."""
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    if t_nodes < 8:
        raise ValidationError("t_nodes must be at least 8")
    t = np.linspace(0.0, 1.0, t_nodes + 1)
    values = u.values[..., None] * np.exp(math.sqrt(lam) * t)
    return LiftedField(u, float(lam), t, values)
