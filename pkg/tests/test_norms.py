import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uclab.elliptic import DiscreteField
from uclab.exceptions import BallEscapesDomainError, ValidationError
from uclab.geometry import interior_shrink
from uclab.norms import MaskSet, l2_ball, l2_cube, l2_mask, mask_from_box, mask_from_region


@pytest.fixture(scope="module")
def one(unit_square_64):
    return DiscreteField.from_function(unit_square_64, 1.0)


def test_ball_of_constant_is_sqrt_area():
    from uclab.geometry import build_domain

    d = build_domain({"shape": "box", "extents": [0, 1, 0, 1]}, h=1 / 128)
    u = DiscreteField.from_function(d, 1.0)
    assert l2_ball(u, (0.5, 0.5), 0.2) == pytest.approx(math.sqrt(math.pi) * 0.2, rel=2e-3)


def test_cube_of_constant_is_exact(one):
    # half-width 0.1 cube has area 0.04
    assert l2_cube(one, (0.5, 0.5), 0.1) == pytest.approx(0.2, rel=1e-12)
    assert l2_cube(one, (0.4, 0.6), 0.125) == pytest.approx(0.25, rel=1e-12)


def test_ball_escaping_domain_raises(one):
    with pytest.raises(BallEscapesDomainError):
        l2_ball(one, (0.1, 0.5), 0.2)


def test_ball_below_two_cells_raises(one):
    with pytest.raises(ValidationError):
        l2_ball(one, (0.5, 0.5), 0.01)


def test_ball_of_quadratic():
    from uclab.geometry import build_domain

    d = build_domain({"shape": "box", "extents": [-0.5, 0.5, -0.5, 0.5]}, h=1 / 128)
    u = DiscreteField.from_function(d, "x1^2 + x2^2")
    # int_B |x|^4 = 2 pi r^6 / 6
    r = 0.25
    assert l2_ball(u, (0, 0), r) == pytest.approx(math.sqrt(math.pi * r**6 / 3), rel=5e-3)


def test_mask_central_quarter(one):
    E = mask_from_box(one.domain, (0.25, 0.25), (0.75, 0.75))
    assert E.measure == pytest.approx(0.25, rel=1e-12)
    assert l2_mask(one, E) == pytest.approx(0.5, rel=1e-12)
    assert l2_mask(one, E, normalized=True) == pytest.approx(1.0, rel=1e-12)


def test_mask_complement_adds_up(one):
    E = mask_from_box(one.domain, (0.1, 0.3), (0.6, 0.95))
    assert E.measure + E.complement().measure == pytest.approx(1.0, rel=1e-12)


def test_mask_weights_validated(unit_square_64):
    with pytest.raises(ValidationError):
        MaskSet(unit_square_64, np.full(unit_square_64.shape, 2.0))


def test_region_mask(unit_square_64, one):
    reg = interior_shrink(unit_square_64, 0.05)
    E = mask_from_region(reg)
    assert E.measure == pytest.approx(reg.measure)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 0.7), st.floats(0.3, 0.7), st.floats(0.05, 0.2), st.floats(-4, 4).filter(lambda c: abs(c) > 1e-3))
def test_ball_norm_homogeneous(unit_square_64, x, y, r, c):
    u = DiscreteField.from_function(unit_square_64, "1 + x1*x2")
    if min(x, y, 1 - x, 1 - y) <= r:
        return
    assert l2_ball(u.scaled(c), (x, y), r) == pytest.approx(abs(c) * l2_ball(u, (x, y), r), rel=1e-12, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 0.7), st.floats(0.3, 0.7), st.floats(0.04, 0.1))
def test_ball_norm_monotone_in_radius(unit_square_64, x, y, r):
    u = DiscreteField.from_function(unit_square_64, "x1 - x2")
    if min(x, y, 1 - x, 1 - y) <= 2 * r:
        return
    assert l2_ball(u, (x, y), r) <= l2_ball(u, (x, y), 2 * r) + 1e-15
