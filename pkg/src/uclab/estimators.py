"""Empirical three-ball, doubling and vanishing-order estimators.

The estimators follow the scikit-learn convention: hyperparameters go to
``__init__``, ``fit`` takes the field (and optionally a region) and stores
the results in trailing-underscore attributes. ``fit_three_ball``,
``fit_doubling`` and ``fit_vanishing_order`` are thin functional wrappers
returning plain result records.

Fits are envelopes, not regressions: every returned constant majorizes all
of its own sample records, and ``fit`` re-audits that before returning.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator

from .elliptic import DiscreteField
from .exceptions import CertificateViolation, ValidationError, ZeroBallError
from .geometry import InteriorRegion
from .norms import l2_ball

__all__ = [
    "ThreeBallEstimate",
    "DoublingEstimate",
    "VanishingOrderFit",
    "ThreeBallEstimator",
    "DoublingEstimator",
    "VanishingOrderEstimator",
    "fit_three_ball",
    "fit_doubling",
    "fit_vanishing_order",
    "three_ball_envelope",
    "select_centers",
]

MIN_CENTERS = 20
ALPHA_BOUNDS = (0.01, 0.99)
TIE_TOL = 1e-6
AUDIT_SLACK = 1e-12


@dataclass(frozen=True)
class ThreeBallEstimate:
    C: float
    alpha: float
    tau: float
    rho: float
    r: float
    alpha_opt: float
    C_opt: float
    sample_records: list = field(default_factory=list)  # (center, I_r, I_2r, I_4r)

    def envelope_violations(self, records=None) -> int:
        recs = self.sample_records if records is None else records
        logs = np.log([[rec[1], rec[2], rec[3]] for rec in recs])
        lhs = logs[:, 1]
        rhs = math.log(self.C) + (1 - self.alpha) * logs[:, 2] + self.alpha * logs[:, 0]
        return int(np.sum(lhs > rhs))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sample_records"] = [
            {"center": [float(c) for c in rec[0]], "I_r": rec[1], "I_2r": rec[2], "I_4r": rec[3]}
            for rec in self.sample_records
        ]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ThreeBallEstimate":
        data = dict(data)
        data["sample_records"] = [
            (tuple(rec["center"]), rec["I_r"], rec["I_2r"], rec["I_4r"]) for rec in data.get("sample_records", [])
        ]
        return cls(**data)


@dataclass(frozen=True)
class DoublingEstimate:
    C_hat: float
    radii: list
    worst_center: tuple
    worst_radius: float
    sample_records: list = field(default_factory=list)  # (center, r, I_r, I_2r)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["worst_center"] = [float(c) for c in self.worst_center]
        out["sample_records"] = [
            {"center": [float(c) for c in rec[0]], "r": rec[1], "I_r": rec[2], "I_2r": rec[3]}
            for rec in self.sample_records
        ]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DoublingEstimate":
        data = dict(data)
        data["worst_center"] = tuple(data["worst_center"])
        data["sample_records"] = [
            (tuple(rec["center"]), rec["r"], rec["I_r"], rec["I_2r"]) for rec in data.get("sample_records", [])
        ]
        return cls(**data)


@dataclass(frozen=True)
class VanishingOrderFit:
    center: tuple
    gamma_slope: float
    intercept: float
    residual: float
    radii: list
    norms: list

    @property
    def radii_range(self) -> tuple:
        return (min(self.radii), max(self.radii))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["center"] = [float(c) for c in self.center]
        return out


def select_centers(
    u: DiscreteField,
    clearance: float,
    region: InteriorRegion | None = None,
    max_centers: int | None = None,
    seed: int = 0,
    include: Sequence | None = None,
) -> np.ndarray:
    """Nodes of ``region`` (default: all interior nodes) whose boundary distance exceeds ``clearance``.

    With ``max_centers`` a seeded subsample is taken, kept in lattice order.
    ``include`` points are prepended and must satisfy the same clearance.
    """
    d = u.domain
    if region is not None and region.parent is not d:
        if region.parent.shape != d.shape or region.parent.h != d.h:
            raise ValidationError("region lives on a different grid")
    mask = d.interior_mask if region is None else region.node_mask
    mask = mask & (d.boundary_distance > clearance)
    pts = np.stack([g[mask] for g in d.grid], axis=-1)
    if max_centers is not None and len(pts) > max_centers:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(pts), size=max_centers, replace=False))
        pts = pts[keep]
    if include is not None and len(include):
        extra = np.atleast_2d(np.asarray(include, dtype=float))
        if np.any(d.distance_to_boundary(extra) <= clearance):
            raise ValidationError("an included center is too close to the boundary")
        pts = np.concatenate([extra, pts])
    return pts


def _ball_norm(u, x, r):
    val = l2_ball(u, x, r)
    if val == 0.0:
        raise ZeroBallError(f"||u|| vanishes on B({tuple(np.round(x, 6))}, {r})")
    return val


def three_ball_envelope(log_r, log_2r, log_4r):
    """Return ``(a, b)`` with ``log C(alpha) = max_i (a_i + alpha b_i)``."""
    a = np.asarray(log_2r) - np.asarray(log_4r)
    b = np.asarray(log_4r) - np.asarray(log_r)
    return a, b


class ThreeBallEstimator(BaseEstimator):
    """Envelope fit of ``I_2r <= C I_4r^(1 - alpha) I_r^alpha`` over ball centers.

    Parameters
    ----------
    tau, rho : float
        Three-ball parameters; the fitted radius is ``r = tau * rho / 4``
        unless ``r`` is given.
    r : float, optional
        Explicit inner radius.
    max_centers : int
        Number of centers sampled from the region (seeded).
    seed : int
    include : array-like, optional
        Extra centers always used, e.g. a known zero of the field.
    tie_tol : float
        Relative slack on ``C`` within which the largest ``alpha`` is taken.
    """

    def __init__(self, tau=0.2, rho=0.05, r=None, max_centers=100, seed=0, include=None, tie_tol=TIE_TOL):
        self.tau = tau
        self.rho = rho
        self.r = r
        self.max_centers = max_centers
        self.seed = seed
        self.include = include
        self.tie_tol = tie_tol

    def fit(self, u: DiscreteField, region: InteriorRegion | None = None):
        if not 0.0 < self.tau < 0.25:
            raise ValidationError("tau must lie in (0, 1/4)")
        r = self.tau * self.rho / 4 if self.r is None else float(self.r)
        centers = select_centers(u, 4 * r, region, self.max_centers, self.seed, self.include)
        if len(centers) < MIN_CENTERS:
            raise ValidationError(f"three-ball fit needs at least {MIN_CENTERS} centers, found {len(centers)}")
        records = [(tuple(x), _ball_norm(u, x, r), _ball_norm(u, x, 2 * r), _ball_norm(u, x, 4 * r)) for x in centers]
        I = np.asarray([rec[1:] for rec in records])
        a, b = three_ball_envelope(*np.log(I).T)

        def log_c(alpha):
            return float(np.max(a + alpha * b))

        opt = minimize_scalar(log_c, bounds=ALPHA_BOUNDS, method="bounded", options={"xatol": 1e-10})
        alpha_opt = float(opt.x)
        log_c_opt = log_c(alpha_opt)
        # C >= 1 is free; then move alpha as far right as the (slackened) target allows
        target = max(log_c_opt, 0.0) + math.log1p(self.tie_tol)
        pos = b > 0
        alpha = ALPHA_BOUNDS[1]
        if np.any(pos):
            alpha = min(alpha, float(np.min((target - a[pos]) / b[pos])))
        alpha = max(alpha, alpha_opt)
        log_c_final = max(log_c(alpha), 0.0) + AUDIT_SLACK
        est = ThreeBallEstimate(
            C=math.exp(log_c_final),
            alpha=alpha,
            tau=float(self.tau),
            rho=float(self.rho),
            r=r,
            alpha_opt=alpha_opt,
            C_opt=math.exp(log_c_opt),
            sample_records=records,
        )
        bad = est.envelope_violations()
        if bad:
            raise CertificateViolation(f"three-ball envelope violated on {bad} records after fitting")
        self.estimate_ = est
        self.C_ = est.C
        self.alpha_ = est.alpha
        self.n_centers_ = len(records)
        return self

    def audit(self, u: DiscreteField, centers=None) -> int:
        """Recompute the ball norms at ``centers`` (default: the fitted ones) and count envelope violations."""
        est = self.estimate_
        pts = [rec[0] for rec in est.sample_records] if centers is None else centers
        recs = [(tuple(x), l2_ball(u, x, est.r), l2_ball(u, x, 2 * est.r), l2_ball(u, x, 4 * est.r)) for x in pts]
        return est.envelope_violations(recs)


class DoublingEstimator(BaseEstimator):
    """Worst doubling ratio ``I_2r / I_r`` over centers and radii."""

    def __init__(self, radii=(0.0125, 0.025), max_centers=100, seed=0, include=None):
        self.radii = radii
        self.max_centers = max_centers
        self.seed = seed
        self.include = include

    def fit(self, u: DiscreteField, region: InteriorRegion | None = None):
        radii = sorted(float(r) for r in np.atleast_1d(self.radii))
        if not radii:
            raise ValidationError("no radii given")
        centers = select_centers(u, 2 * radii[-1], region, self.max_centers, self.seed, self.include)
        if len(centers) == 0:
            raise ValidationError("no admissible centers for the doubling fit")
        records = []
        for x in centers:
            for r in radii:
                records.append((tuple(x), r, _ball_norm(u, x, r), l2_ball(u, x, 2 * r)))
        ratios = np.asarray([rec[3] / rec[2] for rec in records])
        worst = int(np.argmax(ratios))
        est = DoublingEstimate(
            C_hat=float(ratios[worst]),
            radii=radii,
            worst_center=records[worst][0],
            worst_radius=records[worst][1],
            sample_records=records,
        )
        self.estimate_ = est
        self.C_hat_ = est.C_hat
        self.ratios_ = ratios
        return self


class VanishingOrderEstimator(BaseEstimator):
    """Least-squares slope of ``log ||u||_B(x, r)`` against ``log r``.

    Without explicit ``radii`` the ladder is geometric from ``8 h`` to
    ``r_max`` with ``n_radii`` rungs.
    """

    def __init__(self, radii=None, r_max=0.2, n_radii=8):
        self.radii = radii
        self.r_max = r_max
        self.n_radii = n_radii

    def fit(self, u: DiscreteField, x=None):
        d = u.domain
        x = np.zeros(d.dim) if x is None else np.asarray(x, dtype=float)
        if self.radii is None:
            radii = np.geomspace(8 * d.h, self.r_max, self.n_radii)
        else:
            radii = np.sort(np.asarray(self.radii, dtype=float))
        if len(radii) < 6:
            raise ValidationError("vanishing-order ladder needs at least 6 radii")
        norms = np.asarray([_ball_norm(u, x, r) for r in radii])
        lr, ln = np.log(radii), np.log(norms)
        slope, intercept = np.polyfit(lr, ln, 1)
        resid = float(np.sqrt(np.mean((ln - (slope * lr + intercept)) ** 2)))
        self.fit_ = VanishingOrderFit(tuple(float(c) for c in x), float(slope), float(intercept), resid, radii.tolist(), norms.tolist())
        self.gamma_ = self.fit_.gamma_slope
        self.residual_ = resid
        return self


def fit_three_ball(u: DiscreteField, region: InteriorRegion | None, r: float, tau: float = 0.2, **kwargs) -> ThreeBallEstimate:
    """Three-ball envelope at inner radius ``r`` (``rho`` is recorded as ``4 r / tau``)."""
    return ThreeBallEstimator(tau=tau, rho=4 * r / tau, r=r, **kwargs).fit(u, region).estimate_


def fit_doubling(u: DiscreteField, region: InteriorRegion | None, radii, **kwargs) -> DoublingEstimate:
    return DoublingEstimator(radii=tuple(radii), **kwargs).fit(u, region).estimate_


def fit_vanishing_order(u: DiscreteField, x, radii=None, **kwargs) -> VanishingOrderFit:
    return VanishingOrderEstimator(radii=radii, **kwargs).fit(u, x).fit_
