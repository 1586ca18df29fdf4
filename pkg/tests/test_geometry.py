import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm, logm
from scipy.optimize import least_squares

from bimalign.errors import InvalidArgumentError
from bimalign.geometry import (CameraModel, GimbalLockWarning, Plane, Pose, Segment2D, apply, backproject,
                               compose, inverse, point_to_plane, point_to_segment, project,
                               rotation_geodesic, to_yaw_pitch_roll)

finite = st.floats(-10, 10, allow_nan=False)
angle = st.floats(-179, 179, allow_nan=False)


@st.composite
def poses(draw):
    w = np.array([draw(st.floats(-3, 3)) for _ in range(3)])
    t = np.array([draw(finite) for _ in range(3)])
    return Pose.from_rotvec(w, t)


def close_pose(a, b, tol=1e-9):
    return rotation_geodesic(a, b) < tol * 180 / math.pi * 10 and np.allclose(a.translation, b.translation,
                                                                             atol=tol, rtol=0)


def yaw(deg):
    return Pose.from_ypr(deg)


CAM = CameraModel(100, 100, 50, 50, 100, 100)


# --- compose / apply --------------------------------------------------------

def test_compose_identity_left():
    p = Pose.from_ypr(20, -5, 3, (1, 2, 3))
    q = compose(Pose.identity(), p)
    assert close_pose(q, p)


def test_compose_inverse_is_identity():
    p = Pose.from_ypr(20, -5, 3, (1, 2, 3))
    q = compose(p, inverse(p))
    assert rotation_geodesic(q, Pose.identity()) < 1e-9
    assert np.linalg.norm(q.translation) < 1e-9


def test_two_quarter_turns_make_half_turn():
    q = compose(yaw(90), yaw(90))
    assert rotation_geodesic(q, yaw(180)) < 1e-9


def test_apply_examples():
    assert np.allclose(apply(Pose.identity(), (1, 2, 3)), (1, 2, 3))
    assert np.allclose(apply(Pose(translation=(0, 0, 1)), (0, 0, 0)), (0, 0, 1))
    assert np.allclose(apply(yaw(90), (1, 0, 0)), (0, 1, 0), atol=1e-12, rtol=0)


def test_apply_applies_right_operand_first():
    a, b = Pose.from_ypr(30, t=(1, 0, 0)), Pose.from_ypr(0, 40, t=(0, 2, 0))
    x = np.array([0.3, -0.2, 0.5])
    assert np.allclose(compose(a, b).apply(x), a.apply(b.apply(x)), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    assert close_pose(compose(compose(a, b), c), compose(a, compose(b, c)))


@settings(max_examples=200, deadline=None)
@given(poses())
def test_inverse_two_sided(p):
    for q in (compose(p, inverse(p)), compose(inverse(p), p)):
        assert rotation_geodesic(q, Pose.identity()) < 1e-9
        assert np.linalg.norm(q.translation) < 1e-9
        assert abs(np.linalg.norm(q.rotation) - 1) < 1e-9


def test_rejects_zero_quaternion():
    with pytest.raises(InvalidArgumentError):
        Pose(rotation=(0, 0, 0, 0))


# --- camera -----------------------------------------------------------------

def test_project_examples():
    assert project(CAM, (0, 0, 1)) == (50, 50)
    assert project(CAM, (0, 0, -1)) is None
    # u = 100 lies on the right border of a 100 px image, so use a wider one
    wide = CameraModel(100, 100, 50, 50, 200, 100)
    assert project(wide, (0.5, 0, 1)) == (100, 50)


def test_project_outside_image_is_out_of_view():
    assert project(CAM, (10, 0, 1)) is None


def test_backproject_examples():
    assert np.allclose(backproject(CAM, 50, 50, 2), (0, 0, 2))
    assert np.allclose(backproject(CAM, 100, 50, 1), (0.5, 0, 1))


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_backproject_rejects_nonpositive_depth(d):
    with pytest.raises(InvalidArgumentError):
        backproject(CAM, 10, 10, d)


def test_camera_rejects_bad_intrinsics():
    with pytest.raises(InvalidArgumentError):
        CameraModel(0, 100, 50, 50, 100, 100)
    with pytest.raises(InvalidArgumentError):
        CameraModel(100, 100, 150, 50, 100, 100)


def test_round_trip_1000_points():
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 100, 1000)
    v = rng.uniform(0, 100, 1000)
    d = rng.uniform(0.1, 50, 1000)
    X = CAM.backproject_points(u, v, d)
    uv, vis = CAM.project_points(X)
    assert vis.all()
    X2 = CAM.backproject_points(uv[:, 0], uv[:, 1], X[:, 2])
    assert np.max(np.linalg.norm(X2 - X, axis=1)) < 1e-9


# --- planes and segments ----------------------------------------------------

def test_point_to_plane_examples():
    floor = Plane.horizontal(0.0)
    assert point_to_plane((0, 0, 1), floor) == 1.0
    assert point_to_plane((5, -2, 0), floor) == 0.0
    assert point_to_plane((3, 4, -2), floor) == -2.0


def test_plane_normal_is_unit():
    pl = Plane((0, 3, 4), 1.0)
    assert abs(np.linalg.norm(pl.normal) - 1) < 1e-12


def test_point_to_segment_examples():
    d, c = point_to_segment((1, 1), Segment2D((0, 0), (2, 0), 0))
    assert d == 1.0 and np.allclose(c, (1, 0))
    d, c = point_to_segment((3, 0), Segment2D((0, 0), (2, 0), 0))
    assert d == 1.0 and np.allclose(c, (2, 0))
    d, c = point_to_segment((-1, -1), Segment2D((0, 0), (0, 2), 0))
    assert d == pytest.approx(math.sqrt(2)) and np.allclose(c, (0, 0))


def test_degenerate_segment_rejected():
    with pytest.raises(InvalidArgumentError):
        Segment2D((1, 1), (1, 1 + 1e-7), 0)


@settings(max_examples=300, deadline=None)
@given(*(st.floats(-5, 5) for _ in range(6)))
def test_point_to_segment_bounds(px, py, ax, ay, bx, by):
    a, b, p = np.array([ax, ay]), np.array([bx, by]), np.array([px, py])
    if np.linalg.norm(b - a) <= 1e-3:
        return
    d, _ = point_to_segment(p, Segment2D(a, b, 0))
    assert d <= np.linalg.norm(p - a) + 1e-9
    assert d <= np.linalg.norm(p - b) + 1e-9
    u = (b - a) / np.linalg.norm(b - a)
    w = p - a
    line = abs(u[0] * w[1] - u[1] * w[0])
    assert d >= line - 1e-9


# --- rotation metrics -------------------------------------------------------

def test_geodesic_examples():
    p = Pose.from_ypr(12, 3, 4)
    assert rotation_geodesic(p, p) == 0.0
    assert rotation_geodesic(yaw(10), Pose.identity()) == pytest.approx(10, abs=1e-9)
    assert rotation_geodesic(yaw(180), Pose.identity()) == pytest.approx(180, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(poses(), poses(), poses())
def test_geodesic_symmetric_and_triangle(a, b, c):
    assert abs(rotation_geodesic(a, b) - rotation_geodesic(b, a)) < 1e-9
    assert rotation_geodesic(a, c) <= rotation_geodesic(a, b) + rotation_geodesic(b, c) + 1e-9


def test_ypr_examples():
    assert to_yaw_pitch_roll(Pose.identity()) == (0.0, 0.0, 0.0)
    assert np.allclose(to_yaw_pitch_roll(yaw(30)), (30, 0, 0), atol=1e-12)


def _generator(axis):
    G = np.zeros((3, 3))
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    G[i, j], G[j, i] = -1.0, 1.0
    return G


def _oracle_ypr(R):
    """Euler angles recovered by fitting exponentials of the axis generators
    to ``R`` through the matrix logarithm of the mismatch."""
    Gz, Gy, Gx = _generator(2), _generator(1), _generator(0)

    def build(a):
        y, p, r = np.radians(a)
        return expm(y * Gz) @ expm(p * Gy) @ expm(r * Gx)

    def res(a):
        L = np.real(logm(build(a).T @ R))
        return [L[2, 1], L[0, 2], L[1, 0]]

    sol = least_squares(res, np.zeros(3), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return sol.x


# frozen output of _oracle_ypr for yaw 10 then pitch 5
ORACLE_YAW10_PITCH5 = (10.0, 5.0, 0.0)


def test_ypr_oracle_frozen_value():
    R = expm(np.radians(10) * _generator(2)) @ expm(np.radians(5) * _generator(1))
    assert np.allclose(_oracle_ypr(R), ORACLE_YAW10_PITCH5, atol=1e-9)


def test_ypr_yaw_then_pitch_matches_oracle():
    p = compose(yaw(10), Pose.from_ypr(0, 5, 0))
    assert np.allclose(to_yaw_pitch_roll(p), ORACLE_YAW10_PITCH5, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(angle, st.floats(-89, 89), angle)
def test_ypr_round_trip(y, p, r):
    q = Pose.from_ypr(y, p, r)
    y2, p2, r2 = to_yaw_pitch_roll(q)
    assert rotation_geodesic(Pose.from_ypr(y2, p2, r2), q) < 1e-9


def test_gimbal_lock_flagged_and_roll_zeroed():
    p = Pose.from_ypr(20, 90, 15)
    with pytest.warns(GimbalLockWarning):
        y, pitch, r = to_yaw_pitch_roll(p)
    assert r == 0.0 and pitch == pytest.approx(90)
    assert rotation_geodesic(Pose.from_ypr(y, pitch, r), p) < 1e-6
