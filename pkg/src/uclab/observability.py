"""Observability from sets of positive measure.

``(eps0, zeta)`` are declared by the user, never derived. Given a
vanishing-order certificate ``C~ r^gamma <= ||u||_B(x, r)``, the small-data
branch turns ``||u||_B(z, tau rho1) <= |ln x|^-zeta`` (with
``x = |E|^-1/2 ||u||_E``) into ``1 <= e^K x`` where
``K = (C~ (tau rho1)^gamma)^(-1/zeta)``; the large-data branch is
``1 <= x / eps0``. Together, for ``|E| > m``,
``||u||_Omega <= max(e^K, 1/eps0) m^-1/2 ||u||_E``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import mpmath
import numpy as np

from .elliptic import DiscreteField
from .exceptions import ValidationError
from .geometry import GridDomain, InteriorRegion
from .norms import MaskSet, l2_mask
from .propagation import PropagationCertificate

__all__ = [
    "ObservabilityReport",
    "CombinedConstant",
    "sample_mask",
    "observability_ratio",
    "combine_constants",
    "mask_product",
    "write_reports",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("field_id", "mask_seed", "fraction", "measure", "local_norm", "ratio", "branch", "combined_C")


def sample_mask(region: InteriorRegion, fraction: float, seed: int = 0) -> MaskSet:
    """Seeded random subset of the region's nodes holding ``fraction`` of its measure (to one cell)."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("fraction must lie in (0, 1]")
    ids = np.flatnonzero(region.node_mask)
    count = int(round(fraction * len(ids)))
    if count == 0:
        raise ValidationError("fraction selects no node of the region")
    weights = np.zeros(region.parent.shape)
    if count == len(ids):
        chosen = ids
    else:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(ids, size=count, replace=False))
    weights.ravel()[chosen] = 1.0
    return MaskSet(region.parent, weights, f"sample(f={fraction}, seed={seed})")


@dataclass(frozen=True)
class CombinedConstant:
    """Observability constant, kept as natural logs (strings at full precision)."""

    log_C: str
    log_small: str
    log_large: str
    branch_binding: str
    inputs: dict

    @property
    def C(self):
        return mpmath.exp(mpmath.mpf(self.log_C))


def combine_constants(
    eps0: float,
    zeta: float,
    cert: PropagationCertificate,
    rho1: float,
    m: float,
) -> CombinedConstant:
    """``log C = max(K, -ln eps0) - ln(m) / 2`` with ``K = (C~ (tau rho1)^gamma)^(-1/zeta)``."""
    if not 0.0 < eps0 <= 1.0:
        raise ValidationError("eps0 must lie in (0, 1]")
    if zeta <= 0.0:
        raise ValidationError("zeta must be positive")
    if m <= 0.0:
        raise ValidationError("m must be positive")
    tau = float(cert.inputs["tau"])
    if not math.isclose(float(cert.inputs["rho"]), rho1, rel_tol=1e-12):
        raise ValidationError("certificate was built at a different rho")
    with mpmath.workdps(50):
        log_p = -(mpmath.mpf(cert.log_C_tilde) + cert.gamma * mpmath.log(tau * rho1))
        K = mpmath.exp(log_p / zeta)
        large = -mpmath.log(eps0)
        log_c = max(K, large) - mpmath.log(m) / 2
        return CombinedConstant(
            mpmath.nstr(log_c, 40),
            mpmath.nstr(K, 40),
            mpmath.nstr(large, 40),
            "small" if K >= large else "large",
            {"eps0": eps0, "zeta": zeta, "rho1": rho1, "m": m, "tau": tau,
             "log_C_tilde": cert.log_C_tilde, "gamma": cert.gamma},
        )


@dataclass(frozen=True)
class ObservabilityReport:
    field_id: str
    mask_seed: int | None
    fraction: float | None
    measure: float
    local_norm: float
    ratio: float
    branch: str
    combined_C: str

    def row(self) -> list:
        return [getattr(self, k) for k in REPORT_COLUMNS]


def observability_ratio(
    u: DiscreteField,
    E: MaskSet,
    eps0: float | None = None,
    combined: CombinedConstant | None = None,
    field_id: str = "",
    mask_seed: int | None = None,
    fraction: float | None = None,
) -> ObservabilityReport:
    """``||u||_Omega / ||u||_E`` and the branch of the case split for the normalized field.

    A vanishing ``||u||_E`` is reported with ``ratio = inf`` and branch
    ``uc-violation``: it cannot happen for true solutions and points at a
    discretization artifact.
    """
    total = u.l2_norm()
    if total == 0.0:
        raise ValidationError("field is identically zero")
    local = l2_mask(u, E)
    if local == 0.0:
        return ObservabilityReport(field_id, mask_seed, fraction, E.measure, 0.0, math.inf, "uc-violation",
                                   combined.log_C if combined else "")
    x = local / math.sqrt(E.measure) / total
    if eps0 is None:
        branch = "undeclared"
    else:
        branch = "small" if x < eps0 else "large"
    return ObservabilityReport(
        field_id, mask_seed, fraction, E.measure, local, total / local, branch,
        combined.log_C if combined else "",
    )


def mask_product(E: MaskSet, cylinder: GridDomain, t_lo: float, t_hi: float) -> MaskSet:
    """Mask ``E x [t_lo, t_hi]`` on a cylinder grid built over ``E.domain``."""
    base = E.domain
    if cylinder.dim != base.dim + 1 or cylinder.shape[:-1] != base.shape or cylinder.h != base.h:
        raise ValidationError("cylinder does not extend the mask's domain")
    t = cylinder.origin[-1] + cylinder.h * np.arange(cylinder.shape[-1])
    h = cylinder.h
    frac = np.clip(np.minimum(t + h / 2, t_hi) - np.maximum(t - h / 2, t_lo), 0.0, None) / h
    weights = np.clip(E.weights[..., None] * np.minimum(frac, 1.0), 0.0, 1.0)
    weights = np.where(cylinder.closure_mask, weights, 0.0)
    return MaskSet(cylinder, weights, f"{E.label} x [{t_lo}, {t_hi}]")


def write_reports(path, reports: Iterable[ObservabilityReport]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rep in reports:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in rep.row()])
    return path
