"""Command line runner: ``uclab <subcommand> --config <file> [--out <dir>]``.

Configs are INI-style key-value files. Sections used across subcommands::

    [domain]        shape, extents, h (``1/64`` accepted), maskfile
    [field]         source = formula | solve | file | eigen, plus formula, path,
                    mode / modes, normalize
    [coefficients]  A, B, W, V formulas and truncation (for ``solve`` sources)
    [metric]        g (scalar or matrix formula) for eigen sources and spectra

Each subcommand has its own parameter section of the same name. Outputs land
in ``--out`` (default ``uclab-out/<subcommand>``) next to a deterministic
``manifest.json``; wall times go to ``timings.json``. Exit codes: 0 on
success, 2 for invalid input, 3 for solver failures, 4 for certificate
violations.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import mpmath
import numpy as np
import scipy
import sklearn

from . import __version__
from .coefficients import make_coefficients, make_metric
from .elliptic import DiscreteField, assemble, solve_dirichlet
from .estimators import DoublingEstimator, ThreeBallEstimator, VanishingOrderEstimator, select_centers
from .exceptions import CertificateViolation, UCLabError, ValidationError
from .geometry import GridDomain, InteriorRegion, build_domain, estimate_comparability, interior_shrink, parse_length
from .io import dump_json, read_descriptor, read_field, sha256_file, write_field
from .norms import l2_ball
from .observability import (
    combine_constants,
    observability_ratio,
    sample_mask,
    write_reports,
)
from .propagation import PropagationCertificate, build_certificate, verify_certificate
from . import spectral as sp

KINDS = (
    "solve",
    "fit-tbi",
    "vanishing-order",
    "certificate",
    "observability",
    "spectra",
    "gauge-check",
    "verify-certificate",
    "plot-data",
)


# ---------------------------------------------------------------- config helpers


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ValidationError(f"[{name}] must be a section")
    return sec


def _flag(value, default: bool) -> bool:
    if value is None:
        return default
    if isinstance(value, (int, float)):
        return bool(value)
    text = str(value).strip().lower()
    if text in ("1", "yes", "true", "on"):
        return True
    if text in ("0", "no", "false", "off"):
        return False
    raise ValidationError(f"expected a yes/no value, got {value!r}")


def _floats(value, what: str) -> list[float]:
    if value is None:
        return []
    items = value if isinstance(value, list) else [value]
    try:
        return [parse_length(v) for v in items]
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"{what}: expected numbers, got {value!r}") from None


def _number(sec: dict, key: str, default=None, lo=None, hi=None, integer=False, what=""):
    if key not in sec:
        if default is None:
            raise ValidationError(f"missing required key {what or key!r}")
        return default
    vals = _floats(sec[key], key)
    if len(vals) != 1:
        raise ValidationError(f"{key} must be a single number")
    val = vals[0]
    if integer:
        if val != int(val):
            raise ValidationError(f"{key} must be an integer")
        val = int(val)
    if lo is not None and val < lo or hi is not None and val > hi:
        raise ValidationError(f"{key} = {val} outside [{lo}, {hi}]")
    return val


def _path(base: Path, value) -> Path:
    p = Path(str(value))
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ValidationError(f"referenced file not found: {p}")
    return p


def _domain(cfg: dict, base: Path, section: str = "domain") -> GridDomain:
    spec = dict(_section(cfg, section))
    if not spec:
        raise ValidationError(f"missing [{section}] section")
    if "maskfile" in spec:
        spec["maskfile"] = _path(base, spec["maskfile"])
    if "extents" in spec:
        spec["extents"] = _floats(spec["extents"], "extents")
    return build_domain(spec)


def _metric(cfg: dict, d: GridDomain, section: str = "metric", reference=None, collar: float = 0.0):
    sec = _section(cfg, section)
    g = sec.get("g", 1.0)
    if isinstance(g, list):
        n = d.dim
        if len(g) != n * n:
            raise ValidationError(f"matrix metric needs {n * n} entries")
        g = [[str(g[i * n + j]) for j in range(n)] for i in range(n)]
    return make_metric(d, g, collar_reference=reference, collar=collar)


def _coefficients(cfg: dict, d: GridDomain):
    sec = dict(_section(cfg, "coefficients"))
    trunc = sec.pop("truncation", None)
    formulas = {}
    for key, val in sec.items():
        formulas[key] = [str(v) for v in val] if isinstance(val, list) else val
    formulas.setdefault("A", 1.0)
    return make_coefficients(d, formulas, None if trunc is None else float(trunc))


def _eigen_modes(cfg: dict, d: GridDomain, count: int) -> sp.SpectralData:
    system = sp.assemble_beltrami(d, _metric(cfg, d))
    return sp.solve_eigs(system, count)


def _fields(cfg: dict, d: GridDomain, base: Path) -> list[tuple[str, DiscreteField]]:
    """Fields named in ``[field]``; eigen sources with ``modes = k`` give ``k`` fields."""
    sec = _section(cfg, "field")
    source = str(sec.get("source", "formula")).lower()
    normalize = _flag(sec.get("normalize"), True)
    if source == "formula":
        if "formula" not in sec:
            raise ValidationError("[field] formula is required for source = formula")
        out = [("u", DiscreteField.from_function(d, str(sec["formula"])))]
    elif source == "solve":
        op = assemble(d, _coefficients(cfg, d))
        solve = _section(cfg, "solve")
        out = [("u", solve_dirichlet(op, boundary=solve.get("boundary", 0.0), rhs=solve.get("rhs")))]
    elif source == "file":
        vals, h, _ = read_field(_path(base, sec.get("path", "")))
        if vals.shape != d.shape or not math.isclose(h, d.h):
            raise ValidationError("field file does not match the domain grid")
        out = [("u", DiscreteField(d, vals, str(sec.get("path"))))]
    elif source == "eigen":
        modes = int(_number(sec, "modes", 0, lo=0, hi=50, integer=True))
        mode = int(_number(sec, "mode", 1, lo=1, hi=50, integer=True))
        count = modes or mode
        data = _eigen_modes(cfg, d, count)
        picks = range(count) if modes else [mode - 1]
        out = [(f"phi_{j + 1}", data.field(j)) for j in picks]
    else:
        raise ValidationError(f"unknown field source {source!r}")
    if normalize:
        out = [(name, f.normalized()) for name, f in out]
    return out


def _single_field(cfg, d, base) -> DiscreteField:
    fields = _fields(cfg, d, base)
    if len(fields) != 1:
        raise ValidationError("this subcommand takes a single field")
    return fields[0][1]


def _region(d: GridDomain, rho: float | None, what: str) -> InteriorRegion | None:
    if rho is None:
        return None
    reg = interior_shrink(d, rho)
    if reg.empty:
        raise ValidationError(f"{what}: the interior region at rho = {rho} is empty (needs dist > 4 rho)")
    return reg


def _whole_interior(d: GridDomain) -> InteriorRegion:
    return InteriorRegion(d, 0.0, d.interior_mask.copy())


def _csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0


# ---------------------------------------------------------------- runs


def run_solve(cfg, base, out, timer):
    with timer.stage("setup"):
        d = _domain(cfg, base)
        coef = _coefficients(cfg, d)
        op = assemble(d, coef)
    sec = _section(cfg, "solve")
    with timer.stage("solve"):
        u = solve_dirichlet(op, boundary=sec.get("boundary", 0.0), rhs=sec.get("rhs"))
    write_field(out / "field.bin", u.values, d.h, d.origin_array)
    dump_json(out / "solve.json", {"l2_norm": u.l2_norm(), "kappa": coef.kappa, "varkappa": coef.varkappa,
                                   "shape": list(d.shape), "h": d.h})


def run_fit_tbi(cfg, base, out, timer):
    sec = _section(cfg, "fit-tbi")
    tau = _number(sec, "tau", 0.2, lo=1e-6, hi=0.25)
    rho = _number(sec, "rho", 0.05, lo=1e-9)
    r = _number(sec, "r", tau * rho / 4, lo=0.0)
    max_centers = _number(sec, "max_centers", 100, lo=20, integer=True)
    audit_centers = _number(sec, "audit_centers", 100, lo=1, integer=True)
    seed = _number(sec, "seed", 0, lo=0, integer=True)
    with timer.stage("setup"):
        d = _domain(cfg, base)
        if r < 2 * d.h:
            raise ValidationError(f"three-ball radius r = {r:.4g} is below two grid cells (2h = {2 * d.h:.4g})")
        region = _region(d, _number(sec, "region_rho", rho / 2, lo=1e-9), "fit-tbi")
        u = _single_field(cfg, d, base)
    with timer.stage("fit"):
        est = ThreeBallEstimator(tau=tau, rho=rho, r=r, max_centers=max_centers, seed=seed).fit(u, region)
        tb = est.estimate_
    with timer.stage("audit"):
        centers = select_centers(u, 4 * tb.r, region, audit_centers, seed + 1)
        audit = {"centers": len(centers), "violations": est.audit(u, centers)}
    payload = {"estimate": tb.to_dict(), "audit": audit}
    radii = _floats(sec.get("doubling_radii"), "doubling_radii")
    if radii:
        with timer.stage("doubling"):
            dbl = DoublingEstimator(radii=tuple(radii), max_centers=max_centers, seed=seed).fit(u, region).estimate_
        payload["doubling"] = dbl.to_dict()
    dump_json(out / "three_ball.json", payload)
    emit_plot_data(out, out, kinds=("three-ball",))
    if audit["violations"]:
        raise CertificateViolation(f"three-ball envelope violated at {audit['violations']} audit centers")


def run_vanishing_order(cfg, base, out, timer):
    sec = _section(cfg, "vanishing-order")
    with timer.stage("setup"):
        d = _domain(cfg, base)
        u = _single_field(cfg, d, base)
    center = _floats(sec.get("center", [0.0] * d.dim), "center")
    if len(center) != d.dim:
        raise ValidationError(f"center needs {d.dim} coordinates")
    radii = _floats(sec.get("radii"), "radii") or None
    r_max = _number(sec, "r_max", 0.2, lo=0.0)
    n_radii = _number(sec, "n_radii", 8, lo=6, integer=True)
    with timer.stage("fit"):
        fit = VanishingOrderEstimator(radii=radii, r_max=r_max, n_radii=n_radii).fit(u, center).fit_
    dump_json(out / "vanishing_order.json", fit.to_dict())
    emit_plot_data(out, out, kinds=("vanishing-order",))


def _certificate_params(sec: dict) -> dict:
    rho = _number(sec, "rho", 0.05, lo=1e-9)
    tau = _number(sec, "tau", 0.2, lo=1e-9, hi=0.2499999)
    return {
        "rho": rho,
        "tau": tau,
        "geometry_h": sec.get("geometry_h"),
        "doubling_points": _number(sec, "doubling_points", 6, lo=2, integer=True),
        "max_centers": _number(sec, "max_centers", 100, lo=20, integer=True),
        "chain_pairs": _number(sec, "chain_pairs", 20, lo=1, integer=True),
        "q_centers": _number(sec, "q_centers", 200, lo=1, integer=True),
        "comparability_samples": _number(sec, "comparability_samples", 100, lo=100, integer=True),
        "audit_samples": _number(sec, "audit_samples", 50, lo=0, integer=True),
        "seed": _number(sec, "seed", 0, lo=0, integer=True),
    }


def run_certificate(cfg, base, out, timer):
    p = _certificate_params(_section(cfg, "certificate"))
    rho, tau = p["rho"], p["tau"]
    with timer.stage("setup"):
        d = _domain(cfg, base)
        R = tau * rho / 8
        if R < 2 * d.h:
            raise ValidationError(f"tau rho / 8 = {R:.4g} is below two grid cells (2h = {2 * d.h:.4g}); refine h")
        full = _region(d, rho, "certificate")
        half = _region(d, rho / 2, "certificate")
        u = _single_field(cfg, d, base)
        gspec = dict(_section(cfg, "domain"))
        if p["geometry_h"] is not None:
            gspec["h"] = p["geometry_h"]
        gd = _domain({"domain": gspec}, base)
        comp = estimate_comparability(gd, p["comparability_samples"], seed=p["seed"])
    with timer.stage("three_ball"):
        tb = ThreeBallEstimator(tau=tau, rho=rho, r=R, max_centers=p["max_centers"], seed=p["seed"]).fit(u, half).estimate_
    with timer.stage("doubling"):
        radii = np.geomspace(2 * d.h, 0.99 * tau * rho, p["doubling_points"])
        dbl = DoublingEstimator(radii=tuple(radii), max_centers=p["max_centers"], seed=p["seed"]).fit(u, full).estimate_
    with timer.stage("certificate"):
        cert = build_certificate(u, tb, dbl, rho, tau, comp, geometry_domain=gd, chain_pairs=p["chain_pairs"],
                                 q_centers=p["q_centers"], seed=p["seed"])
    cert.to_json(out / "certificate.json")
    dump_json(out / "three_ball.json", {"estimate": tb.to_dict()})
    with timer.stage("sample_audit"):
        rng = np.random.default_rng(p["seed"] + 7)
        pts = full.points
        rows = []
        for _ in range(p["audit_samples"]):
            x = pts[rng.integers(len(pts))]
            r = float(rng.uniform(2 * d.h, tau * rho))
            measured = math.log(l2_ball(u, x, r))
            bound = cert.log_lower_bound(r)
            rows.append([*x.tolist(), r, measured, bound, int(bound <= measured)])
    cols = [f"x{k + 1}" for k in range(d.dim)] + ["r", "log_measured", "log_bound", "ok"]
    _csv(out / "certificate_samples.csv", cols, rows)
    emit_plot_data(out, out, kinds=("certificate", "three-ball"))
    bad = sum(1 for row in rows if not row[-1])
    if bad:
        raise CertificateViolation(f"certified bound exceeds the measured norm at {bad} of {len(rows)} samples")


def run_observability(cfg, base, out, timer):
    sec = _section(cfg, "observability")
    fractions = _floats(sec.get("fractions", 0.1), "fractions")
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise ValidationError("fractions must lie in (0, 1]")
    n_masks = _number(sec, "masks", 50, lo=1, integer=True)
    seed = _number(sec, "seed", 0, lo=0, integer=True)
    eps0 = _number(sec, "eps0", 1.0, lo=1e-300, hi=1.0) if "eps0" in sec else None
    with timer.stage("setup"):
        d = _domain(cfg, base)
        region = _region(d, _number(sec, "region_rho", 0.0, lo=0.0), "observability") if "region_rho" in sec else _whole_interior(d)
        fields = _fields(cfg, d, base)
        masks = [(f, seed + i, sample_mask(region, f, seed + i)) for f in fractions for i in range(n_masks)]
    combined = None
    if "certificate" in sec:
        if eps0 is None or "zeta" not in sec:
            raise ValidationError("combining with a certificate needs eps0 and zeta")
        cert = PropagationCertificate.from_dict(json.loads(_path(base, sec["certificate"]).read_text()))
        m = _number(sec, "m", min(E.measure for _, _, E in masks) * (1 - 1e-9), lo=1e-300)
        combined = combine_constants(eps0, _number(sec, "zeta", lo=1e-300), cert, float(cert.inputs["rho"]), m)
        dump_json(out / "combined_constant.json", {"log_C": combined.log_C, "log_small": combined.log_small,
                                                   "log_large": combined.log_large, "branch": combined.branch_binding,
                                                   "inputs": combined.inputs})
    with timer.stage("ratios"):
        reports = [observability_ratio(u, E, eps0, combined, name, s, f)
                   for name, u in fields for f, s, E in masks]
    write_reports(out / "observability.csv", reports)
    per_field = {}
    for rep in reports:
        cur = per_field.setdefault(rep.field_id, {"min_local_norm": math.inf, "max_ratio": 0.0})
        cur["min_local_norm"] = min(cur["min_local_norm"], rep.local_norm)
        cur["max_ratio"] = max(cur["max_ratio"], rep.ratio)
    dump_json(out / "observability_summary.json", {"fields": per_field, "fractions": fractions, "masks": n_masks})
    emit_plot_data(out, out, kinds=("observability",))


def _sigma(sec: dict, d: GridDomain):
    lo = _floats(sec.get("sigma_lo"), "sigma_lo") or None
    hi = _floats(sec.get("sigma_hi"), "sigma_hi") or None
    sigma = sp.sigma_from_box(d, lo, hi)
    anchor = _floats(sec.get("anchor"), "anchor") or None
    r0 = _number(sec, "r0", 4 * d.h, lo=0.0)
    return sigma, anchor, r0


def run_spectra(cfg, base, out, timer):
    sec = _section(cfg, "spectra")
    k = _number(sec, "k", 10, lo=1, hi=50, integer=True)
    with timer.stage("setup"):
        d = _domain(cfg, base)
        system = sp.assemble_beltrami(d, _metric(cfg, d))
        sigma, anchor, r0 = _sigma(sec, d)
    with timer.stage("eigensolve"):
        data = sp.solve_eigs(system, k)
    with timer.stage("traces"):
        data = sp.boundary_traces(data, sigma, anchor, r0)
    sp.save_spectral_data(data, out / "archive")
    summary = {"eigenvalues": data.eigenvalues.tolist(), "residuals": data.residuals.tolist(),
               "weyl": sp.weyl_count(data.eigenvalues, d.volume).tolist()}
    levels = _floats(sec.get("richardson_h"), "richardson_h")
    if levels:
        with timer.stage("richardson"):
            vals = []
            for h in levels:
                dh = _domain({"domain": {**_section(cfg, "domain"), "h": h}}, base)
                vals.append(sp.solve_eigs(sp.assemble_beltrami(dh, _metric(cfg, dh)), k).eigenvalues)
            summary["richardson_h"] = levels
            summary["richardson"] = sp.richardson(levels, vals).tolist()
    n_masks = _number(sec, "masks", 0, lo=0, integer=True)
    if n_masks:
        with timer.stage("lower_bounds"):
            fraction = _number(sec, "mask_fraction", 0.1, lo=1e-9, hi=1.0)
            seed = _number(sec, "seed", 0, lo=0, integer=True)
            region = _whole_interior(d)
            masks = [sample_mask(region, fraction, seed + i) for i in range(n_masks)]
            rows = sp.eigen_lower_bounds(data, np.empty((0, d.dim)), masks)
        _csv(out / "lower_bounds.csv", ["j", "lambda", "min_mask", "max_mask"],
             [[r["j"], r["lambda"], r["min_mask"], r["max_mask"]] for r in rows])
    dump_json(out / "spectra.json", summary)
    emit_plot_data(out, out, kinds=("spectra",))


def run_gauge_check(cfg, base, out, timer):
    sec = _section(cfg, "gauge-check")
    k = _number(sec, "k", 10, lo=1, hi=50, integer=True)
    tol = _number(sec, "tol", 1e-6, lo=0.0)
    with timer.stage("setup"):
        d = _domain(cfg, base)
        g1 = _metric(cfg, d)
        sigma, anchor, r0 = _sigma(sec, d)
    with timer.stage("eigensolve"):
        d1 = sp.boundary_traces(sp.solve_eigs(sp.assemble_beltrami(d, g1), k), sigma, anchor, r0)
    report = {}
    if "chi" in sec:
        chi = DiscreteField.from_function(d, str(sec["chi"]))
        with timer.stage("gauge"):
            d2 = sp.gauge_transform(d1, chi)
        report["gauge"] = {
            "eigenvalues_identical": bool(np.array_equal(d1.eigenvalues, d2.eigenvalues)),
            "orthonormality_defect": float(np.abs(d2.gram() - np.eye(d2.k)).max()),
            "max_residual": float(d2.residuals.max()),
        }
    elif "metric2" in cfg:
        collar = _number(_section(cfg, "metric2"), "collar", 0.0, lo=0.0)
        g2 = _metric(cfg, d, "metric2", reference=g1, collar=collar)
        with timer.stage("eigensolve"):
            d2 = sp.boundary_traces(sp.solve_eigs(sp.assemble_beltrami(d, g2), k), sigma, anchor, r0)
    else:
        d2 = d1
    with timer.stage("compare"):
        report["compare"] = sp.compare_spectral_data(d1, d2, sigma, k, tol)
    dump_json(out / "gauge_check.json", report)


def run_verify_certificate(cfg, base, out, timer):
    sec = _section(cfg, "verify-certificate")
    path = _path(base, sec.get("certificate", "certificate.json"))
    with timer.stage("replay"):
        problems = verify_certificate(path)
    dump_json(out / "verification.json", {"certificate_sha256": sha256_file(path), "problems": problems,
                                          "verdict": "valid" if not problems else "invalid"})
    if problems:
        raise CertificateViolation(f"{len(problems)} audit problems; first: {problems[0]}")


def run_plot_data(cfg, base, out, timer):
    sec = _section(cfg, "plot-data")
    run = _path(base, sec.get("run", "."))
    kinds = sec.get("kinds")
    kinds = None if kinds is None else tuple(kinds if isinstance(kinds, list) else [kinds])
    with timer.stage("emit"):
        written = emit_plot_data(run, out, kinds)
    if not written:
        raise ValidationError(f"no plottable artifacts in {run}")


RUNNERS = {
    "solve": run_solve,
    "fit-tbi": run_fit_tbi,
    "vanishing-order": run_vanishing_order,
    "certificate": run_certificate,
    "observability": run_observability,
    "spectra": run_spectra,
    "gauge-check": run_gauge_check,
    "verify-certificate": run_verify_certificate,
    "plot-data": run_plot_data,
}


# ---------------------------------------------------------------- plot data


def emit_plot_data(run: Path, out: Path, kinds=None) -> list[Path]:
    """Write tidy CSV tables derived from the artifacts found in ``run``.

    Kinds: ``vanishing-order`` (log r, log norm), ``three-ball`` (one row per
    center), ``certificate`` (one row per audit step), ``spectra``
    (k, lambda, Weyl) and ``observability`` (ratio histograms).
    """
    run, out = Path(run), Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def want(kind, artifact):
        return (kinds is None or kind in kinds) and (run / artifact).exists()

    if want("vanishing-order", "vanishing_order.json"):
        fit = json.loads((run / "vanishing_order.json").read_text())
        rows = [[math.log(r), math.log(v)] for r, v in zip(fit["radii"], fit["norms"])]
        written.append(_csv(out / "plot_vanishing_order.csv", ["log_r", "log_norm"], rows))
    if want("three-ball", "three_ball.json"):
        est = json.loads((run / "three_ball.json").read_text())["estimate"]
        rows = []
        for rec in est["sample_records"]:
            lr, l2, l4 = math.log(rec["I_r"]), math.log(rec["I_2r"]), math.log(rec["I_4r"])
            env = math.log(est["C"]) + (1 - est["alpha"]) * l4 + est["alpha"] * lr
            rows.append([*rec["center"], lr, l2, l4, env])
        dim = len(est["sample_records"][0]["center"]) if rows else 0
        cols = [f"x{k + 1}" for k in range(dim)] + ["log_I_r", "log_I_2r", "log_I_4r", "log_envelope"]
        written.append(_csv(out / "plot_three_ball.csv", cols, rows))
    if want("certificate", "certificate.json"):
        cert = json.loads((run / "certificate.json").read_text())
        rows = [[s["step_name"], s["relation"], s["output"], s["log_value"], s.get("check", ""),
                 json.dumps(s["inputs"], sort_keys=True)] for s in cert["audit"]]
        written.append(_csv(out / "plot_certificate_audit.csv",
                            ["step_name", "relation", "output", "log_value", "check", "inputs"], rows))
    if want("spectra", "spectra.json"):
        summary = json.loads((run / "spectra.json").read_text())
        rows = [[k + 1, lam, w] for k, (lam, w) in enumerate(zip(summary["eigenvalues"], summary["weyl"]))]
        written.append(_csv(out / "plot_spectra.csv", ["k", "lambda", "weyl"], rows))
    if want("observability", "observability.csv"):
        with (run / "observability.csv").open() as fh:
            recs = list(csv.DictReader(fh))
        rows = []
        for frac in sorted({r["fraction"] for r in recs}, key=float):
            logs = np.log10([float(r["ratio"]) for r in recs if r["fraction"] == frac and float(r["ratio"]) < math.inf])
            if len(logs) == 0:
                continue
            counts, edges = np.histogram(logs, bins=20)
            rows += [[float(frac), edges[i], edges[i + 1], int(counts[i])] for i in range(len(counts))]
        written.append(_csv(out / "plot_observability_hist.csv", ["fraction", "log10_ratio_lo", "log10_ratio_hi", "count"], rows))
    return written


# ---------------------------------------------------------------- entry point


def _versions() -> dict:
    return {"uclab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "mpmath": mpmath.__version__, "python": platform.python_version()}


def run(kind: str, config: Path, out: Path | None = None) -> dict:
    """Run one experiment and return its manifest (raises :class:`UCLabError` subclasses)."""
    config = Path(config)
    if kind not in RUNNERS:
        raise ValidationError(f"unknown subcommand {kind!r}")
    cfg = read_descriptor(config)
    declared = cfg.get("kind")
    if declared is not None and declared != kind:
        raise ValidationError(f"config declares kind = {declared}, not {kind}")
    out = Path(out) if out is not None else Path("uclab-out") / kind
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    RUNNERS[kind](cfg, config.parent, out, timer)
    artifacts = {str(p.relative_to(out)): sha256_file(p) for p in sorted(out.rglob("*"))
                 if p.is_file() and p.name not in ("manifest.json", "timings.json")}
    manifest = {
        "kind": kind,
        "config_sha256": hashlib.sha256(config.read_bytes()).hexdigest(),
        "config": cfg,
        "artifacts": artifacts,
        "versions": _versions(),
    }
    dump_json(out / "manifest.json", manifest)
    dump_json(out / "timings.json", {k: round(v, 6) for k, v in timer.stages.items()})
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="uclab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"uclab {__version__}")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None)
    args = parser.parse_args(argv)
    try:
        run(args.kind, args.config, args.out)
    except UCLabError as exc:
        print(f"uclab {args.kind}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
