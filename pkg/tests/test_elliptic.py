import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uclab.coefficients import make_coefficients
from uclab.elliptic import (
    DiscreteField,
    assemble,
    cylinder_domain,
    lift_field,
    residual,
    solve_dirichlet,
)
from uclab.exceptions import ValidationError


def test_laplace_exact_on_quadratic(unit_square_64):
    # the 5-point scheme reproduces harmonic quadratics exactly
    op = assemble(unit_square_64, make_coefficients(unit_square_64, {"A": 1}))
    f = "x1^2 - x2^2 + 3*x1*x2"
    u = solve_dirichlet(op, boundary=f)
    exact = DiscreteField.from_function(unit_square_64, f)
    assert np.max(np.abs(u.values - exact.values)) < 1e-10
    assert residual(op, u) < 1e-8


def test_manufactured_second_order():
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        from uclab.geometry import build_domain

        d = build_domain({"shape": "box", "extents": [0, 1, 0, 1]}, h=h)
        op = assemble(d, make_coefficients(d, {"A": 1}))
        rhs = "2*pi^2*sin(pi*x1)*sin(pi*x2)"
        u = solve_dirichlet(op, boundary=0.0, rhs=rhs)
        exact = DiscreteField.from_function(d, "sin(pi*x1)*sin(pi*x2)")
        errs.append(np.max(np.abs(u.values - exact.values)))
    rates = np.log2(np.asarray(errs[:-1]) / np.asarray(errs[1:]))
    assert np.all(rates > 1.9)


def test_symmetry_iff_w_equals_minus_b(unit_square_64):
    d = unit_square_64
    sym = assemble(d, make_coefficients(d, {"A": 1, "B": ["x1", "1"], "W": ["-x1", "-1"]}))
    assert sym.symmetric_flag
    assert abs(sym.matrix - sym.matrix.T).max() < 1e-12 * abs(sym.matrix).max()
    non = assemble(d, make_coefficients(d, {"A": 1, "B": ["x1", "1"], "W": ["x1", "1"]}))
    assert not non.symmetric_flag
    assert abs(non.matrix - non.matrix.T).max() > 1e-6


def test_variable_coefficient_solution_residual(unit_square_64):
    d = unit_square_64
    op = assemble(d, make_coefficients(d, {"A": "1 + 0.5*sin(pi*x1)", "V": "x2"}))
    u = solve_dirichlet(op, boundary="x1 + x2", rhs=1.0)
    assert residual(op, u, rhs=1.0) < 1e-9


def test_field_shape_checked(unit_square_64):
    with pytest.raises(ValidationError):
        DiscreteField(unit_square_64, np.zeros((3, 3)))


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
def test_norm_homogeneous(unit_square_64, c):
    u = DiscreteField.from_function(unit_square_64, "x1 + x2^2")
    assert math.isclose(u.scaled(c).l2_norm(), abs(c) * u.l2_norm(), rel_tol=1e-12)


def test_lift_solves_cylinder_equation(unit_square_64):
    d = unit_square_64
    op = assemble(d, make_coefficients(d, {"A": 1}))
    phi = DiscreteField.from_function(d, "sin(pi*x1)*sin(pi*x2)", zero_boundary=True)
    lam = float((op.matrix @ phi.interior_values)[0] / phi.interior_values[0])
    lifted = lift_field(phi, lam, 64)
    # only the time second difference is inexact: relative error lam^2 dt^2 / 12
    dt = 1 / 64
    assert lifted.residual(op) == pytest.approx(lam**2 * dt**2 / 12, rel=0.05)
    assert lift_field(phi, lam, 128).residual(op) < lifted.residual(op) / 3.5
    cyl = lifted.to_cylinder()
    assert cyl.domain.dim == 3
    assert cylinder_domain(d, 64).shape == d.shape + (65,)
    with pytest.raises(ValidationError):
        cylinder_domain(d, 8)
