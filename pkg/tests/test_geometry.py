import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from viwo.errors import DegenerateProjection, NonPositiveDepth
from viwo.geometry import (CameraModel, PluckerLine, Pose, cross3, exp_so3, line_projection_matrix, log_so3,
                           normalize_rotation, project_line, project_point, right_jacobian, skew,
                           transform_plucker)

from conftest import central_diff

vec3 = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3).map(np.array)


def test_project_point_examples():
    unit = CameraModel(1.0, 1.0, 0.0, 0.0, 10, 10)
    np.testing.assert_allclose(project_point(np.array([0.0, 0.0, 1.0]), unit), [0.0, 0.0])
    cam = CameraModel(100.0, 100.0, 320.0, 240.0, 640, 480)
    np.testing.assert_allclose(project_point(np.array([1.0, 2.0, 2.0]), cam), [370.0, 340.0])
    with pytest.raises(NonPositiveDepth):
        project_point(np.array([0.0, 0.0, -1.0]), cam)
    with pytest.raises(NonPositiveDepth):
        project_point(np.array([0.0, 0.0, 1e-5]), cam)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(0.0, 1.0, 0.0, 0.0, 10, 10)
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 0.0, 0.0, 0, 10)


@given(vec3, vec3)
def test_cross3_and_skew_match_numpy(a, b):
    np.testing.assert_allclose(cross3(a, b), np.cross(a, b), atol=1e-12)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-12)


@given(vec3)
def test_exp_matches_scipy_and_log_inverts(phi):
    if np.linalg.norm(phi) >= math.pi - 1e-3:
        phi = phi / np.linalg.norm(phi) * 3.0
    R = exp_so3(phi)
    np.testing.assert_allclose(R, Rotation.from_rotvec(phi).as_matrix(), atol=1e-12)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12
    np.testing.assert_allclose(log_so3(R), phi, atol=1e-9)


def test_log_near_pi():
    axis = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
    phi = (math.pi - 1e-9) * axis
    np.testing.assert_allclose(exp_so3(log_so3(exp_so3(phi))), exp_so3(phi), atol=1e-8)


def test_right_jacobian_first_order():
    rng = np.random.default_rng(0)
    for _ in range(20):
        phi = rng.normal(size=3)
        d = rng.normal(size=3) * 1e-6
        lhs = exp_so3(phi + d)
        rhs = exp_so3(phi) @ exp_so3(right_jacobian(phi) @ d)
        assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_normalize_rotation_repairs_drift():
    rng = np.random.default_rng(1)
    R = Rotation.random(random_state=rng).as_matrix()
    for _ in range(1000):
        R = R @ exp_so3(rng.normal(size=3) * 0.1) + 1e-9 * rng.normal(size=(3, 3))
    Rn = normalize_rotation(R)
    np.testing.assert_allclose(Rn @ Rn.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(Rn) - 1.0) < 1e-12


@settings(max_examples=50)
@given(vec3, vec3, vec3, vec3)
def test_pose_compose_inverse(phi1, p1, phi2, x):
    T = Pose(exp_so3(phi1 * 0.5), p1)
    I = T.compose(T.inverse())
    np.testing.assert_allclose(I.R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(I.p, np.zeros(3), atol=1e-12)
    U = Pose(exp_so3(phi2 * 0.5), x)
    np.testing.assert_allclose(T.compose(U).apply(x), T.apply(U.apply(x)), atol=1e-12)


def _random_line(rng):
    return PluckerLine.from_point_direction(rng.normal(size=3) * 3, rng.normal(size=3))


def test_transform_plucker_examples():
    rng = np.random.default_rng(2)
    L = _random_line(rng)
    Li = transform_plucker(Pose.identity(), L)
    np.testing.assert_allclose(Li.n, L.n)
    np.testing.assert_allclose(Li.v, L.v)
    R = Rotation.random(random_state=rng).as_matrix()
    Lr = transform_plucker(Pose(R, np.zeros(3)), L)
    np.testing.assert_allclose(Lr.n, R @ L.n, atol=1e-14)
    np.testing.assert_allclose(Lr.v, R @ L.v, atol=1e-14)
    for _ in range(50):
        T = Pose(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3) * 5)
        L = _random_line(rng)
        Lb = transform_plucker(T.inverse(), transform_plucker(T, L))
        np.testing.assert_allclose(Lb.n, L.n, atol=1e-12)
        np.testing.assert_allclose(Lb.v, L.v, atol=1e-12)


def test_transform_plucker_against_point_oracle():
    # transform two points on the line and rebuild the line in the new frame
    rng = np.random.default_rng(3)
    for _ in range(100):
        T = Pose(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3) * 5)
        q, d = rng.normal(size=3) * 4, rng.normal(size=3)
        L = PluckerLine.from_point_direction(q, d)
        LC = transform_plucker(T, L)
        oracle = PluckerLine.from_point_direction(T.apply(q), T.apply(q + d) - T.apply(q))
        np.testing.assert_allclose(LC.n, oracle.n, atol=1e-11)
        np.testing.assert_allclose(LC.v, oracle.v, atol=1e-12)
        assert abs(LC.n @ LC.v) < 1e-10
        assert abs(np.linalg.norm(LC.v) - 1.0) < 1e-10


def test_line_projection_matrix_and_projection():
    cam = CameraModel(400.0, 420.0, 300.0, 200.0, 640, 480)
    np.testing.assert_allclose(line_projection_matrix(cam),
                               [[420.0, 0, 0], [0, 400.0, 0], [-420.0 * 300.0, -400.0 * 200.0, 400.0 * 420.0]])
    rng = np.random.default_rng(4)
    for _ in range(50):
        q = rng.normal(size=3) + np.array([0, 0, 6.0])
        d = rng.normal(size=3)
        l = project_line(PluckerLine.from_point_direction(q, d), cam)
        # both projected points lie on the image line
        for x in (q, q + 0.7 * d):
            uv = project_point(x, cam) if x[2] > 0.1 else None
            if uv is not None:
                assert abs(l @ np.array([uv[0], uv[1], 1.0])) / math.hypot(l[0], l[1]) < 1e-9
    with pytest.raises(DegenerateProjection):
        project_line(PluckerLine(np.zeros(3), np.array([0.0, 0.0, 1.0])), cam)


def test_closest_point():
    L = PluckerLine.from_point_direction(np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.0, 2.0]))
    np.testing.assert_allclose(L.closest_point(), [1.0, 2.0, 0.0], atol=1e-14)


def test_camera_pose_fd():
    rng = np.random.default_rng(5)
    cam = CameraModel(460, 460, 376, 240, 752, 480, Rotation.random(random_state=rng).as_matrix(),
                      rng.normal(size=3))
    R_GtoI = Rotation.random(random_state=rng).as_matrix()
    p = rng.normal(size=3)
    T = cam.camera_pose(R_GtoI, p)
    x = rng.normal(size=3)
    # mapping G -> I -> C must agree with the composed pose
    x_I = R_GtoI @ (x - p)
    np.testing.assert_allclose(T.apply(x), cam.R_ItoC @ x_I + cam.p_IinC, atol=1e-12)
    assert central_diff(lambda y: T.apply(y), x).shape == (3, 3)
