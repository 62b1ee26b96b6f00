import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uclab.exceptions import ChainInfeasibleError, DisconnectedDomainError, ValidationError
from uclab.geometry import (
    build_chain,
    build_domain,
    cube_cover,
    estimate_comparability,
    geodesic_distance,
    interior_shrink,
    parse_length,
)


def test_box_counts(unit_square_64):
    d = unit_square_64
    assert d.shape == (65, 65)
    assert d.n_interior == 63 * 63
    assert math.isclose(d.volume, 1.0)
    assert math.isclose(d.node_weights.sum(), 1.0)


def test_parse_length_fraction():
    assert parse_length("1/64") == 1 / 64
    assert parse_length(0.25) == 0.25


def test_lshape_area(lshape_64):
    assert math.isclose(lshape_64.volume, 0.75)
    assert math.isclose(lshape_64.node_weights.sum(), 0.75)


def test_boundary_distance_box(unit_square_64):
    d = unit_square_64
    x1, x2 = d.grid
    expect = np.minimum.reduce([x1, 1 - x1, x2, 1 - x2])
    assert np.allclose(d.boundary_distance[d.closure_mask], expect[d.closure_mask], atol=1e-12)


def test_boundary_faces_cover_perimeter(unit_square_64):
    faces = unit_square_64.boundary_faces
    assert math.isclose(faces.areas.sum(), 4.0)
    assert np.allclose(np.linalg.norm(faces.normals, axis=1), 1.0)


def test_interior_shrink_empty_is_flagged(unit_square_64):
    reg = interior_shrink(unit_square_64, 0.2)
    assert reg.empty
    with pytest.raises(ValidationError):
        interior_shrink(unit_square_64, -1.0)


def test_interior_shrink_box(unit_square_64):
    reg = interior_shrink(unit_square_64, 0.05)
    pts = reg.points
    assert np.all(np.min(np.minimum(pts, 1 - pts), axis=1) > 0.2)


def test_disconnected_mask_rejected():
    cells = np.zeros((8, 8), dtype=bool)
    cells[:3, :3] = True
    cells[5:, 5:] = True
    with pytest.raises(DisconnectedDomainError):
        build_domain({"shape": "mask", "mask": cells}, h=1 / 8)


def test_comparability_2d_within_lattice_factor(unit_square_64):
    c = estimate_comparability(unit_square_64, samples=100)
    assert 1.0 <= c <= 1.0824 + 1e-9


def test_comparability_nondecreasing_in_samples(lshape_64):
    a = estimate_comparability(lshape_64, samples=100)
    b = estimate_comparability(lshape_64, samples=200)
    assert b >= a


def test_slit_geodesic_goes_around():
    d = build_domain({"shape": "slit", "extents": [0, 1, 0, 1]}, h=1 / 32)
    rep = geodesic_distance(d, (0.5 - 3 / 32, 0.25), (0.5 + 3 / 32, 0.25))
    # must pass above the wall tip at (0.5, 0.5)
    assert rep.length > 2 * math.hypot(3 / 32, 0.25) * 0.99


def test_chain_straight_line(unit_square_64):
    ch = build_chain(unit_square_64, (0.3, 0.5), (0.7, 0.5), 0.05)
    assert ch.N == 8
    steps = np.linalg.norm(np.diff(ch.centers, axis=0), axis=1)
    assert np.all(steps <= 0.05 + 1e-12)


def test_chain_clearance_enforced(unit_square_64):
    with pytest.raises(ChainInfeasibleError):
        build_chain(unit_square_64, (0.05, 0.5), (0.5, 0.5), 0.05)


def test_cube_cover_partitions_region(unit_square_64):
    reg = interior_shrink(unit_square_64, 0.02)
    cover = cube_cover(reg, 0.05)
    assert len(cover.assignment) == reg.size
    assert cover.size <= cover.bound()
    # every node lies in its assigned cube
    pts = reg.points
    gap = np.abs(pts - cover.centers[cover.assignment])
    assert np.all(gap <= 0.05 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.25, 0.75), st.floats(0.25, 0.75), st.floats(0.25, 0.75), st.floats(0.25, 0.75))
def test_chain_bound_box_property(unit_square_64, a, b, c, e):
    d = unit_square_64
    ch = build_chain(d, (a, b), (c, e), 0.04)
    assert ch.N <= max(ch.n0(1.0824), 0) or np.allclose((a, b), (c, e))
