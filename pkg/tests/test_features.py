import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupreid import features as F
from groupreid.features import (DESCRIPTOR_DIM, build_group_graph, edge_attribute,
                                expand_head_box, extract_person_descriptor,
                                fit_reference_direction, hyper_edge_attribute, make_crop,
                                triangle_angles)

from oracles import least_squares_direction, log_distance_bin_reference


def test_descriptor_dimension():
    assert F.N_CHANNELS == 3 + 3 + 3 + 3 + 3 + 16
    assert DESCRIPTOR_DIM == 18 * 31 * 16 == 8928


def test_descriptor_blocks_are_distributions(rng):
    crop = rng.uniform(0, 1, (128, 48, 3))
    d = extract_person_descriptor(crop)
    assert d.shape == (DESCRIPTOR_DIM,)
    assert np.all(d >= 0)
    np.testing.assert_allclose(F.block_view(d).sum(-1), 1.0, atol=1e-9)


def test_constant_gray_fills_one_bin_per_color_channel():
    crop = np.full((128, 48, 3), 0.5)
    blocks = F.block_view(extract_person_descriptor(crop))
    colour = blocks[:, :F.N_COLOR_CHANNELS]
    assert np.all(colour.max(-1) == 1.0)
    assert np.all((colour > 0).sum(-1) == 1)


def test_descriptor_is_deterministic(rng):
    crop = rng.uniform(0, 1, (128, 48, 3))
    assert np.array_equal(extract_person_descriptor(crop), extract_person_descriptor(crop.copy()))


def test_crop_is_resized_and_centered(rng):
    image = rng.integers(0, 255, (200, 300, 3), dtype=np.uint8)
    crop = make_crop(image, (10, 20, 40, 100))
    assert crop.pixels.shape == (128, 48, 3)
    assert crop.center == (30.0, 70.0)


def test_empty_crop_rejected():
    with pytest.raises(ValueError, match="empty crop"):
        make_crop(np.zeros((50, 50, 3)), (60, 60, 10, 10))
    with pytest.raises(ValueError, match="empty crop"):
        extract_person_descriptor(np.zeros((0, 48, 3)))


def test_head_box_expands_downward_and_clamps():
    x, y, w, h = expand_head_box((100, 10, 20, 20), (640, 100))
    assert (x, y, w) == (80.0, 10.0, 60.0)
    assert y + h == 100.0


# -- reference direction


def test_reference_collinear_x_axis():
    d = fit_reference_direction([(0, 5), (10, 5), (25, 5), (40, 5)], (100, 100))
    np.testing.assert_allclose(d, [1, 0], atol=1e-12)


def test_reference_fallbacks():
    np.testing.assert_allclose(fit_reference_direction([(3, 4)]), [1, 0])
    d = fit_reference_direction([(0, 0), (0, -3)])
    np.testing.assert_allclose(d, [0, 1])


def test_reference_ignores_outlier():
    inliers = [(t, t) for t in (10.0, 60.0, 110.0, 160.0, 210.0)]
    d = fit_reference_direction(inliers + [(300.0, 20.0)], (640, 360))
    ls = least_squares_direction(inliers)
    angle = math.degrees(math.acos(abs(float(d @ ls))))
    assert angle < 2.0
    np.testing.assert_allclose(d, [math.sqrt(0.5)] * 2, atol=math.radians(2))


# -- edge attributes


@pytest.mark.parametrize("rho", [0.0, 0.0005, 0.002, 0.01, 0.05, 0.2, 0.7, 1.0])
def test_log_distance_bin_matches_reference(rho):
    m = F.log_distance_bin(rho)
    assert m == log_distance_bin_reference(rho)
    assert int(np.argmax(F.log_distance_hist(m))) == m


def test_polar_histogram_is_circular():
    h = F.polar_angle_hist(0)
    assert h[1] == pytest.approx(h[8])
    assert h.sum() == pytest.approx(1.0)


def test_edge_swap_reverses_angle(rng):
    g = build_group_graph(rng.uniform(size=(3, 8)), [(10, 10), (200, 50), (90, 300)], (640, 360))
    e, r = edge_attribute(g, 0, 1), edge_attribute(g, 1, 0)
    np.testing.assert_array_equal(e.log_distance_hist, r.log_distance_hist)
    assert (e.theta + math.pi) % (2 * math.pi) == pytest.approx(r.theta)


def test_coincident_centers_use_minimum_distance():
    g = build_group_graph(np.ones((2, 4)), [(50, 50), (50, 50)], (640, 360))
    assert int(np.argmax(edge_attribute(g, 0, 1).log_distance_hist)) == 0


def test_edge_composite_layout(rng):
    g = build_group_graph(rng.uniform(size=(2, 8)), [(10, 10), (100, 10)], (640, 360))
    e = edge_attribute(g, 0, 1)
    assert e.composite.shape == (8 + 8 + F.N_LOG_BINS + F.N_POLAR_BINS,)


# -- triangles


def test_equilateral_sines():
    pts = [(0, 0), (1, 0), (0.5, math.sqrt(3) / 2)]
    g = build_group_graph(np.ones((3, 2)), np.array(pts) * 100 + 50, (640, 360))
    np.testing.assert_allclose(hyper_edge_attribute(g, 0, 1, 2).internal_angles,
                               [math.sin(math.pi / 3)] * 3, atol=1e-9)


def test_right_isosceles_sines():
    angles, degenerate = triangle_angles((0, 0), (1, 0), (0, 1))
    assert not degenerate
    np.testing.assert_allclose(np.sin(angles), [1, math.sqrt(0.5), math.sqrt(0.5)], atol=1e-12)


def test_collinear_triangle_is_degenerate():
    g = build_group_graph(np.ones((3, 2)), [(0, 0), (10, 0), (30, 0)], (640, 360))
    h = hyper_edge_attribute(g, 0, 1, 2)
    assert h.degenerate
    np.testing.assert_array_equal(h.internal_angles, 0.0)


def test_graph_maps_are_total(rng):
    g = build_group_graph(rng.uniform(size=(5, 4)), rng.uniform(0, 300, (5, 2)), (640, 360))
    assert len(g.edges) == 10 and len(g.hyper_edges) == 10
    assert np.linalg.norm(g.reference_direction) == pytest.approx(1.0)


def test_hyper_edge_needs_distinct_vertices(rng):
    g = build_group_graph(rng.uniform(size=(3, 4)), rng.uniform(0, 300, (3, 2)), (640, 360))
    with pytest.raises(ValueError):
        hyper_edge_attribute(g, 0, 0, 1)


# -- properties

points = st.tuples(st.floats(0, 600), st.floats(0, 340))


@settings(max_examples=60, deadline=None)
@given(st.tuples(points, points, points))
def test_triangle_angles_sum_to_pi(tri):
    angles, degenerate = triangle_angles(*tri)
    assert abs(angles.sum() - math.pi) < 1e-6
    sines = np.sin(angles)
    assert np.all(sines >= -1e-12) and np.all(sines <= 1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(points, min_size=2, max_size=5, unique=True), st.floats(0.2, 3.0),
       st.floats(-100, 100), st.floats(-100, 100))
def test_log_distance_invariant_to_similarity_of_image(pts, scale, dx, dy):
    pts = np.array(pts)
    g1 = build_group_graph(np.ones((len(pts), 2)), pts, (640, 360))
    g2 = build_group_graph(np.ones((len(pts), 2)), pts * scale + [dx, dy], (640 * scale, 360 * scale))
    np.testing.assert_allclose(g1.log_distance, g2.log_distance, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(points, min_size=2, max_size=5, unique=True), st.floats(-math.pi, math.pi))
def test_polar_angle_invariant_to_joint_rotation(pts, phi):
    pts = np.array(pts)
    R = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    ref = np.array([1.0, 0.0])
    g1 = build_group_graph(np.ones((len(pts), 2)), pts, (640, 360), reference_direction=ref)
    g2 = build_group_graph(np.ones((len(pts), 2)), pts @ R.T, (640, 360), reference_direction=R @ ref)
    # bin edges may be crossed by rounding; compare the continuous angles
    _, _, _, t1 = g1._edge_geometry
    _, _, _, t2 = g2._edge_geometry
    diff = np.abs((t1 - t2 + math.pi) % (2 * math.pi) - math.pi)
    assert diff.max() < 1e-7
