import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from polaris.geometry import (Pose2, convex_hull, line_intersection, polygon_area, project_to_line, se2_exp,
                              se2_log, wrap_angle)

coord = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)
poses = st.builds(Pose2, coord, coord, angle)


def test_wrap_angle_range():
    assert wrap_angle(3 * math.pi / 2) == -math.pi / 2
    assert abs(wrap_angle(-3 * math.pi / 2) - math.pi / 2) < 1e-15
    assert abs(wrap_angle(2 * math.pi)) < 1e-15


@given(poses, poses)
def test_compose_inverse_roundtrip(a, b):
    c = a.compose(b)
    back = a.inverse().compose(c)
    assert np.allclose(back.as_array()[:2], b.as_array()[:2], atol=1e-9)
    assert abs(wrap_angle(back.yaw - b.yaw)) < 1e-9


@given(poses, st.lists(st.tuples(coord, coord), min_size=1, max_size=5))
def test_transform_points_roundtrip(p, pts):
    pts = np.array(pts)
    assert np.allclose(p.inverse_transform_points(p.transform_points(pts)), pts, atol=1e-9)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3.0, 3.0))
def test_se2_exp_log_roundtrip(x, y, th):
    xi = np.array([x, y, th])
    p = se2_exp(xi)
    t, phi = p.translation, p.yaw
    assert np.allclose(se2_log(t, phi), xi, atol=1e-9)


def test_project_to_line_axis_aligned():
    m, t = project_to_line(np.array([1.0, 1.0]), np.array([0.0, 0.0]), np.array([2.0, 0.0]))
    assert np.allclose(m, [1.0, 0.0])


def test_hull_and_area_of_square_with_interior_point():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], float)
    hull = convex_hull(pts)
    assert len(hull) == 4
    assert abs(polygon_area(hull) - 1.0) < 1e-12


def test_line_intersection_of_axes():
    p = line_intersection(np.array([-1.0, 0]), np.array([1.0, 0]), np.array([0, -1.0]), np.array([0, 1.0]))
    assert np.allclose(p, [0, 0])
