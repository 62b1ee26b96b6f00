"""Propagation of smallness along ball chains and the vanishing-order certificate.

All constant algebra runs in the log domain with mpmath, so exponents such as
``alpha^-K`` with ``K`` in the thousands never underflow. A certificate is a
list of audit steps; each step names one quantity, gives the relation that
produces its natural log from literal inputs and earlier steps, and may carry
a check (an inequality that must hold). ``verify_certificate`` replays the
relations and checks without touching any field data.
"""

from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import mpmath
import numpy as np

from .elliptic import DiscreteField
from .estimators import DoublingEstimate, ThreeBallEstimate
from .exceptions import CertificateViolation, MassNearBoundaryError, ValidationError, ZeroBallError
from .geometry import (
    BallChain,
    CubeCover,
    GridDomain,
    InteriorRegion,
    build_chain,
    cube_cover,
    interior_shrink,
)
from .norms import l2_ball, l2_cube

__all__ = [
    "RecursionBound",
    "PairBound",
    "PigeonholeResult",
    "AuditStep",
    "PropagationCertificate",
    "unroll_recursion",
    "iterate_recursion",
    "propagate_pair",
    "pigeonhole_lower_bound",
    "doubling_iterations",
    "q_rho",
    "build_certificate",
    "verify_certificate",
]

DPS = 50
_REPLAY_RTOL = mpmath.mpf("1e-30")


class RecursionBound(NamedTuple):
    exact: float
    relaxed: float
    log_exact: float
    log_relaxed: float


def _check_recursion_inputs(C, alpha, I0, N):
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha={alpha} must lie in (0, 1)")
    if C < 1.0:
        raise ValidationError(f"C={C} must be at least 1")
    if not 0.0 < I0 <= 1.0:
        raise ValidationError(f"I0={I0} must lie in (0, 1]")
    if N < 0 or int(N) != N:
        raise ValidationError("N must be a nonnegative integer")


def unroll_recursion(C: float, alpha: float, I0: float, N: int) -> RecursionBound:
    """Closed form of ``I_{j+1} = C I_j^alpha`` after ``N + 1`` steps.

    ``exact = C^((1 - alpha^(N+1)) / (1 - alpha)) I0^(alpha^(N+1))`` and the
    relaxed ``C^(1 / (1 - alpha)) I0^(alpha^(N+1))``.
    """
    _check_recursion_inputs(C, alpha, I0, N)
    with mpmath.workdps(DPS):
        a = mpmath.mpf(alpha)
        aN = a ** (int(N) + 1)
        lc, li = mpmath.log(C), mpmath.log(I0)
        log_exact = lc * (1 - aN) / (1 - a) + aN * li
        log_relaxed = lc / (1 - a) + aN * li
        return RecursionBound(
            float(mpmath.exp(log_exact)), float(mpmath.exp(log_relaxed)), float(log_exact), float(log_relaxed)
        )


def iterate_recursion(C: float, alpha: float, I0: float, N: int) -> float:
    """Step-by-step log of ``I_{N+1}``; the brute-force counterpart of :func:`unroll_recursion`."""
    _check_recursion_inputs(C, alpha, I0, N)
    lc = math.log(C)
    li = math.log(I0)
    for _ in range(int(N) + 1):
        li = lc + alpha * li
    return li


class PairBound(NamedTuple):
    """Upper bounds on ``||u||_B(y, r)`` propagated from ``I0 = ||u||_B(x, r)``."""

    N: int
    exact: float
    relaxed: float
    apriori: float | None
    log_exact: float
    log_relaxed: float
    log_apriori: float | None


def propagate_pair(est: ThreeBallEstimate, chain: BallChain, I0: float, frak_d: float | None = None) -> PairBound:
    """Propagate smallness from the first to the last ball of ``chain``.

    ``apriori`` is the chain-independent form ``C^(1/(1-alpha)) I0^(alpha^(d/r))``
    (needs ``frak_d >= (N + 1) r``).
    """
    if not math.isclose(chain.r, est.r, rel_tol=1e-9):
        raise ValidationError(f"chain radius {chain.r} differs from the three-ball radius {est.r}")
    rb = unroll_recursion(est.C, est.alpha, I0, chain.N)
    ap = lap = None
    if frak_d is not None:
        if frak_d < (chain.N + 1) * chain.r * (1 - 1e-12):
            raise ValidationError("frak_d must bound (N + 1) r")
        with mpmath.workdps(DPS):
            a = mpmath.mpf(est.alpha)
            lap_mp = mpmath.log(est.C) / (1 - a) + a ** (mpmath.mpf(frak_d) / chain.r) * mpmath.log(I0)
            lap, ap = float(lap_mp), float(mpmath.exp(lap_mp))
    return PairBound(chain.N, rb.exact, rb.relaxed, ap, rb.log_exact, rb.log_relaxed, lap)


class PigeonholeResult(NamedTuple):
    z: np.ndarray
    bound: float
    cube_index: int
    cube_masses: np.ndarray
    interior_mass: float
    cover: CubeCover


def pigeonhole_lower_bound(cover: CubeCover, u: DiscreteField, norm_tol: float = 1e-8) -> PigeonholeResult:
    """Cube of largest mass and the pigeonhole bound ``1 / (2 sqrt|J|)``.

    Node masses ``w u^2`` are binned by cube, so the cube masses add up to the
    region mass exactly. Ties go to the lexicographically smallest center.
    """
    d = u.domain
    region = cover.region
    if region.parent.shape != d.shape or region.parent.h != d.h:
        raise ValidationError("cover and field live on different grids")
    total = u.l2_norm()
    if abs(total - 1.0) > norm_tol:
        raise ValidationError(f"field must be normalized, ||u|| = {total:.12g}")
    node_mass = (d.node_weights * u.values**2)[region.node_mask]
    masses = np.bincount(cover.assignment, weights=node_mass, minlength=cover.size)
    interior = float(node_mass.sum())
    if interior < 0.25:
        raise MassNearBoundaryError(
            f"only {interior:.6g} of the squared mass lies in the region (need 1/4)", interior
        )
    j = int(np.argmax(masses))
    return PigeonholeResult(cover.centers[j].copy(), 0.5 / math.sqrt(cover.size), j, masses, interior, cover)


def doubling_iterations(r: float, tau: float, rho: float) -> int:
    """The ``m >= 1`` with ``2^(m-1) r < tau rho <= 2^m r``."""
    target = tau * rho
    if not 0.0 < r < target:
        raise ValidationError(f"need 0 < r < tau rho = {target}, got r = {r}")
    m = 1
    while (2.0**m) * r < target:
        m += 1
    return m


def q_rho(
    u: DiscreteField,
    rho: float,
    tau: float,
    region: InteriorRegion | None = None,
    max_centers: int | None = None,
    seed: int = 0,
) -> float:
    """``max over x in Omega_{rho/2}`` of ``||u||_B(x, rho) / ||u||_B(x, 2 tau rho)``."""
    region = interior_shrink(u.domain, rho / 2) if region is None else region
    pts = region.points
    if len(pts) == 0:
        raise ValidationError(f"interior region at rho/2 = {rho / 2} is empty")
    if max_centers is not None and len(pts) > max_centers:
        rng = np.random.default_rng(seed)
        pts = pts[np.sort(rng.choice(len(pts), size=max_centers, replace=False))]
    best = 0.0
    for x in pts:
        den = l2_ball(u, x, 2 * tau * rho)
        if den == 0.0:
            raise ZeroBallError(f"||u|| vanishes on B({tuple(x)}, {2 * tau * rho})")
        best = max(best, l2_ball(u, x, rho) / den)
    return best


# ---------------------------------------------------------------------------
# audit trail

_MP_FUNCS = {"log": mpmath.log, "exp": mpmath.exp, "sqrt": mpmath.sqrt, "floor": mpmath.floor, "ceil": mpmath.ceil}
_MP_BIN = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}
_MP_CMP = {ast.LtE: lambda a, b: a <= b, ast.Lt: lambda a, b: a < b, ast.GtE: lambda a, b: a >= b, ast.Gt: lambda a, b: a > b}


def _mp_eval(text: str, env: dict):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return mpmath.mpf(node.value)
        if isinstance(node, ast.Name):
            if node.id not in env:
                raise ValidationError(f"unknown name {node.id!r} in relation {text!r}")
            return env[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            val = ev(node.operand)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.BinOp) and type(node.op) in _MP_BIN:
            return _MP_BIN[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _MP_FUNCS:
            return _MP_FUNCS[node.func.id](*[ev(a) for a in node.args])
        if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _MP_CMP:
            return bool(_MP_CMP[type(node.ops[0])](ev(node.left), ev(node.comparators[0])))
        raise ValidationError(f"unsupported element in relation {text!r}")

    return ev(ast.parse(text, mode="eval"))


@dataclass
class AuditStep:
    step_name: str
    relation: str  # expression for log(output)
    inputs: dict
    output: str
    log_value: str
    check: str | None = None

    def to_dict(self) -> dict:
        out = {
            "step_name": self.step_name,
            "relation": self.relation,
            "inputs": self.inputs,
            "output": self.output,
            "log_value": self.log_value,
        }
        if self.check is not None:
            out["check"] = self.check
        return out


def _mp_str(x) -> str:
    return mpmath.nstr(x, 40, min_fixed=-5, max_fixed=5) if isinstance(x, mpmath.mpf) else repr(float(x))


class _Trail:
    def __init__(self):
        self.steps: list[AuditStep] = []
        self.env: dict = {}

    def add(self, name, output, relation, inputs=None, check=None):
        inputs = {k: (v if isinstance(v, str) else _mp_str(mpmath.mpf(v))) for k, v in (inputs or {}).items()}
        env = dict(self.env)
        env.update({k: mpmath.mpf(v) for k, v in inputs.items()})
        log_val = _mp_eval(relation, env)
        self._store(output, log_val)
        step = AuditStep(name, relation, inputs, output, _mp_str(log_val), check)
        if check is not None:
            env = dict(self.env)
            env.update({k: mpmath.mpf(v) for k, v in inputs.items()})
            if not _mp_eval(check, env):
                raise CertificateViolation(f"audit step {name!r} fails its check {check!r}")
        self.steps.append(step)
        return log_val

    def _store(self, output, log_val):
        self.env["log_" + output] = log_val
        self.env[output] = mpmath.exp(log_val)


@dataclass
class PropagationCertificate:
    """Vanishing-order certificate ``C~ r^gamma <= ||u||_B(x, r)`` on ``Omega_rho``, ``0 < r < tau rho``."""

    inputs: dict
    pairs: list
    chain_summary: dict
    pigeonhole: dict
    doubling: dict
    log_C_rho: str
    log_C_tilde: str
    gamma: float
    audit: list = field(default_factory=list)

    @property
    def C_tilde(self):
        return mpmath.exp(mpmath.mpf(self.log_C_tilde))

    def log_lower_bound(self, r: float) -> float:
        """Natural log of ``C~ r^gamma`` (a float; use :attr:`log_C_tilde` for full precision)."""
        with mpmath.workdps(DPS):
            return float(mpmath.mpf(self.log_C_tilde) + self.gamma * mpmath.log(r))

    def lower_bound(self, r: float) -> float:
        return math.exp(self.log_lower_bound(r)) if self.log_lower_bound(r) > -745 else 0.0

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "pairs": self.pairs,
            "chain_summary": self.chain_summary,
            "pigeonhole": self.pigeonhole,
            "doubling": self.doubling,
            "outputs": {"log_C_rho": self.log_C_rho, "log_C_tilde": self.log_C_tilde, "gamma": self.gamma},
            "audit": [s.to_dict() for s in self.audit],
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "PropagationCertificate":
        out = data["outputs"]
        audit = [AuditStep(**s) for s in data.get("audit", [])]
        return cls(
            data["inputs"], data["pairs"], data["chain_summary"], data["pigeonhole"], data["doubling"],
            out["log_C_rho"], out["log_C_tilde"], float(out["gamma"]), audit,
        )


def verify_certificate(cert) -> list[str]:
    """Replay every audit step; return a list of problems (empty when the certificate checks out).

    ``cert`` may be a :class:`PropagationCertificate`, its dict form or a JSON path.
    """
    if isinstance(cert, (str, Path)):
        cert = json.loads(Path(cert).read_text())
    if isinstance(cert, PropagationCertificate):
        cert = cert.to_dict()
    problems = []
    env: dict = {}
    with mpmath.workdps(DPS):
        for raw in cert.get("audit", []):
            name = raw.get("step_name", "?")
            try:
                local = dict(env)
                local.update({k: mpmath.mpf(v) for k, v in raw["inputs"].items()})
                val = _mp_eval(raw["relation"], local)
                rec = mpmath.mpf(raw["log_value"])
                if abs(val - rec) > _REPLAY_RTOL * max(1, abs(rec)) + mpmath.mpf("1e-35"):
                    problems.append(f"{name}: replay gives {mpmath.nstr(val, 20)}, recorded {raw['log_value']}")
                env["log_" + raw["output"]] = rec
                env[raw["output"]] = mpmath.exp(rec)
                local.update({"log_" + raw["output"]: rec, raw["output"]: env[raw["output"]]})
                if raw.get("check") and not _mp_eval(raw["check"], local):
                    problems.append(f"{name}: check {raw['check']!r} fails")
            except (ValidationError, KeyError, ValueError, TypeError, ZeroDivisionError) as exc:
                problems.append(f"{name}: {exc}")
        outputs = cert.get("outputs", {})
        for key in ("log_C_rho", "log_C_tilde"):
            if key in outputs and key in env and abs(mpmath.mpf(outputs[key]) - env[key]) > _REPLAY_RTOL * max(1, abs(env[key])):
                problems.append(f"output {key} does not match the audit trail")
    return problems


def build_certificate(
    u: DiscreteField,
    three_ball: ThreeBallEstimate,
    doubling: DoublingEstimate,
    rho: float,
    tau: float,
    comparability: float,
    geometry_domain: GridDomain | None = None,
    chain_pairs: int = 20,
    q_centers: int | None = 200,
    ladder: Sequence[float] | None = None,
    seed: int = 0,
) -> PropagationCertificate:
    """Compose pigeonhole, chain propagation and doubling into ``(C~, gamma)``.

    ``three_ball`` must be fitted at ``r = tau rho / 8`` (balls up to
    ``tau rho / 2``) and ``doubling`` on radii below ``tau rho``. Chains are
    built on ``geometry_domain`` (default: the field's own domain), which may
    be a coarser grid of the same shape.
    """
    d = u.domain
    n = d.dim
    R = tau * rho / 8
    if not 0.0 < tau < 0.25:
        raise ValidationError("tau must lie in (0, 1/4)")
    if not math.isclose(three_ball.r, R, rel_tol=1e-9):
        raise ValidationError(f"three-ball fit must use r = tau rho / 8 = {R}, got {three_ball.r}")
    if max(doubling.radii) >= tau * rho:
        raise ValidationError("doubling radii must stay below tau rho")
    if doubling.C_hat <= 1.0:
        raise ValidationError("doubling constant must exceed 1")
    half = interior_shrink(d, rho / 2)
    if half.empty:
        raise ValidationError(f"interior region at rho/2 = {rho / 2} is empty")
    s = R / math.sqrt(n)
    cover = cube_cover(half, s)
    ph = pigeonhole_lower_bound(cover, u)
    z = ph.z
    cube_norm = l2_cube(u, z, s)

    # chains from sampled region points to z, on the geometry grid
    gd = geometry_domain or d
    pts = half.points
    dmax = float(np.max(np.linalg.norm(pts - z, axis=1)))
    rng = np.random.default_rng(seed)
    sample = pts[np.sort(rng.choice(len(pts), size=min(chain_pairs, len(pts)), replace=False))]
    far = pts[int(np.argmax(np.linalg.norm(pts - z, axis=1)))]
    pairs = []
    for x in np.concatenate([far[None], sample]):
        ch = build_chain(gd, x, z, R)
        n0 = ch.n0(comparability)
        pairs.append({"x": x.tolist(), "N": ch.N, "N0": n0, "path_length": ch.path_length})
        if ch.N > n0:
            raise CertificateViolation(f"chain from {tuple(x)} has N={ch.N} > N0={n0}")
    n0_max = int(math.floor(2 * n * comparability * dmax / R))
    frak_d = (n0_max + 1) * R

    measured_R = min(l2_ball(u, x, R) for x in sample)
    Q = q_rho(u, rho, tau, half, max_centers=q_centers, seed=seed)

    t = _Trail()
    with mpmath.workdps(DPS):
        t.add("interior_mass", "M", "log(M)", {"M": ph.interior_mass}, check="M >= 1/4")
        t.add("cover_size", "J", "log(J)", {"J": cover.size, "diam": half.diameter(), "s": s, "n": n},
              check="J <= (diam/s + 1)**n")
        t.add("pigeonhole", "lb", "-log(2) - log_J/2", {"cube_norm": cube_norm}, check="lb <= cube_norm")
        t.add("chain_steps", "frak_d", "log((floor(2*n*c*dmax/R) + 1)*R)",
              {"n": n, "c": comparability, "dmax": dmax, "R": R})
        t.add("exponent_count", "K", "log(frak_d/R)", {"R": R})
        t.add("chain_constant", "C_chain", "log(C)/(1 - alpha)", {"C": three_ball.C, "alpha": three_ball.alpha})
        log_c_rho = t.add("C_rho", "C_rho", "alpha**(-K)*(log_lb - log_C_chain)",
                          {"alpha": three_ball.alpha, "measured_min": measured_R}, check="C_rho <= measured_min")
        t.add("q_rho", "Q", "log(Q)", {"Q": Q}, check="log(Q) <= -log_C_rho")
        t.add("doubling_constant", "C_hat", "log(C_hat)", {"C_hat": doubling.C_hat})
        t.add("gamma", "gamma", "log(log_C_hat/log(2))")
        log_ct = t.add("C_tilde", "C_tilde", "log_C_rho - log_C_hat - gamma*log(tau*rho)", {"tau": tau, "rho": rho})
        rungs = ladder if ladder is not None else np.geomspace(tau * rho / 1000, tau * rho * (1 - 1e-9), 12)
        for i, r in enumerate(rungs):
            m = doubling_iterations(float(r), tau, rho)
            t.add(f"ladder_{i}", f"bound_{i}", "log_C_tilde + gamma*log(r)", {"r": float(r), "m": m},
                  check="log_C_tilde + gamma*log(r) <= log_C_rho - m*log_C_hat")
        gamma = float(t.env["gamma"])
    return PropagationCertificate(
        inputs={
            "C": three_ball.C, "alpha": three_ball.alpha, "tau": tau, "rho": rho, "R": R,
            "comparability": comparability, "frak_d": float(frak_d), "C_hat": doubling.C_hat,
            "dim": n, "h": d.h, "geometry_h": gd.h,
        },
        pairs=pairs,
        chain_summary={"N_max": max(p["N"] for p in pairs), "N0_max": n0_max, "dmax": dmax},
        pigeonhole={"z": z.tolist(), "J": cover.size, "s": s, "bound": ph.bound, "cube_norm": cube_norm,
                    "interior_mass": ph.interior_mass},
        doubling={"C_hat": doubling.C_hat, "radii": list(doubling.radii), "Q_rho": Q},
        log_C_rho=_mp_str(log_c_rho),
        log_C_tilde=_mp_str(log_ct),
        gamma=gamma,
        audit=t.steps,
    )
