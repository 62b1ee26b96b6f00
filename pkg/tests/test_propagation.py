import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from uclab.elliptic import DiscreteField
from uclab.estimators import fit_three_ball
from uclab.exceptions import MassNearBoundaryError, ValidationError
from uclab.geometry import build_chain, build_domain, cube_cover, interior_shrink
from uclab.propagation import (
    doubling_iterations,
    iterate_recursion,
    pigeonhole_lower_bound,
    propagate_pair,
    q_rho,
    unroll_recursion,
    verify_certificate,
)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(0.01, 0.99), st.floats(1e-8, 1.0), st.integers(0, 30))
def test_recursion_closed_form_matches_iteration(C, alpha, I0, N):
    closed = unroll_recursion(C, alpha, I0, N).log_exact
    brute = iterate_recursion(C, alpha, I0, N)
    assert math.isclose(closed, brute, rel_tol=1e-12, abs_tol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(0.01, 0.99), st.floats(1e-8, 1.0), st.integers(0, 30))
def test_relaxed_bound_dominates(C, alpha, I0, N):
    rb = unroll_recursion(C, alpha, I0, N)
    assert rb.log_relaxed >= rb.log_exact - 1e-12


def test_recursion_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        unroll_recursion(0.5, 0.5, 0.1, 3)
    with pytest.raises(ValidationError):
        unroll_recursion(2.0, 1.0, 0.1, 3)


def test_doubling_iterations():
    # tau rho = 1/8, exactly representable
    assert doubling_iterations(0.0625, 0.25, 0.5) == 1
    assert doubling_iterations(0.03125, 0.25, 0.5) == 2
    assert doubling_iterations(0.03, 0.25, 0.5) == 3
    with pytest.raises(ValidationError):
        doubling_iterations(0.2, 0.25, 0.5)


def test_pigeonhole_bound(unit_square_64):
    d = unit_square_64
    u = DiscreteField.from_function(d, "sin(pi*x1)*sin(pi*x2)").normalized()
    reg = interior_shrink(d, 0.02)
    cover = cube_cover(reg, 0.05)
    ph = pigeonhole_lower_bound(cover, u)
    assert ph.cube_masses.sum() == pytest.approx(ph.interior_mass, rel=1e-12)
    assert ph.bound == pytest.approx(0.5 / math.sqrt(cover.size))
    assert math.sqrt(ph.cube_masses.max()) >= ph.bound


def test_pigeonhole_mass_near_boundary(unit_square_64):
    d = unit_square_64
    u = DiscreteField.from_function(d, "exp(40*(x1 - 1))").normalized()
    cover = cube_cover(interior_shrink(d, 0.05), 0.05)
    with pytest.raises(MassNearBoundaryError):
        pigeonhole_lower_bound(cover, u)


def test_propagate_pair_bounds_measured_norm():
    d = build_domain({"shape": "box", "extents": [0, 1, 0, 1]}, h=1 / 128)
    u = DiscreteField.from_function(d, "exp(pi*x1)*sin(pi*x2)")
    u = u.scaled(1 / u.l2_norm())
    est = fit_three_ball(u, interior_shrink(d, 0.02), r=0.03, max_centers=80)
    ch = build_chain(d, (0.3, 0.5), (0.7, 0.5), 0.03)
    from uclab.norms import l2_ball

    I0 = l2_ball(u, ch.centers[0], 0.03)
    pb = propagate_pair(est, ch, I0)
    # the envelope only bounds I_2r by I_r, I_4r; with ||u|| <= 1 the relaxed bound is an upper bound
    assert pb.log_relaxed >= pb.log_exact


def test_q_rho_positive(unit_square_64):
    u = DiscreteField.from_function(unit_square_64, "sin(pi*x1)*sin(pi*x2)").normalized()
    q = q_rho(u, 0.1, 0.2, max_centers=20)
    # ||u||_B(x, rho) >= ||u||_B(x, 2 tau rho)
    assert q >= 1.0


def test_verify_detects_tampering(tmp_path):
    from uclab.cli import run

    cfg = tmp_path / "c.ini"
    cfg.write_text(
        "[domain]\nshape = box\nextents = 0 1 0 1\nh = 1/1024\n"
        "[field]\nformula = sin(pi*x1)*sin(pi*x2)\n"
        "[certificate]\nrho = 0.1\ntau = 0.24\ngeometry_h = 1/32\nmax_centers = 30\nchain_pairs = 5\n"
        "q_centers = 30\naudit_samples = 10\n"
    )
    run("certificate", cfg, tmp_path / "out")
    path = tmp_path / "out" / "certificate.json"
    assert verify_certificate(path) == []
    data = json.loads(path.read_text())
    data["audit"][2]["inputs"]["cube_norm"] = "1e-9"
    assert verify_certificate(data)
    data = json.loads(path.read_text())
    data["outputs"]["log_C_tilde"] = "0"
    assert verify_certificate(data)
