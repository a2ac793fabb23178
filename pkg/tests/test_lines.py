import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from viwo.errors import Degenerate, DegenerateProjection, NoMethodApplicable, PointsTooClose
from viwo.geometry import CameraModel, PluckerLine, exp_so3
from viwo.lines.measurement import (line_batch, line_jacobians, line_measurement, orthonormal_basis,
                                    orthonormal_plus, plucker_tangent)
from viwo.lines.segments import AxisClass, LineSegment2D
from viwo.lines.triangulation import (METHOD_PLANES, METHOD_POINT_DIRECTION, METHOD_TWO_POINTS, LineConfig,
                                      triangulate_line, triangulate_line_detailed, triangulate_line_planes,
                                      triangulate_line_point_direction, triangulate_line_two_points)
from viwo.lines.update import LineStatus, LineTrack, line_update
from viwo.sim.sensors import render_segment
from viwo.state import FilterState, ImuState, augment_clone, inject_error

from conftest import central_diff
from scenarios import CAM


def angle_between(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return math.atan2(np.linalg.norm(np.cross(a, b)), abs(float(a @ b)))


# noise-free scenes: no endpoint noise in the plane degeneracy test
EXACT = LineConfig(plane_noise_px=0.0)


def observe(L_P0, L_P1, poses, cam=CAM, t0=0.0):
    """Noise-free segments of the 3D segment P0-P1 from IMU poses."""
    segs = []
    for k, (R, p) in enumerate(poses):
        T = cam.camera_pose(R, p)
        uv = render_segment(L_P0, L_P1, T.R, T.p, cam, 0.3)
        assert uv is not None, "line not visible"
        segs.append(LineSegment2D(0, t0 + k, uv[0], uv[1]))
    return segs


def generic_poses(n=6):
    return [(exp_so3([0.0, 0.0, 0.05 * k]).T, np.array([0.4 * k, 0.3 * math.sin(k), 0.1 * k])) for k in range(n)]


def straight_poses(n=6, step=0.5):
    return [(np.eye(3), np.array([step * k, 0.0, 0.0])) for k in range(n)]


def random_line_in_view(rng, R, p, cam=CAM):
    T = cam.camera_pose(R, p)
    q = T.p + T.R.T @ np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(4, 12)])
    return PluckerLine.from_point_direction(q, rng.normal(size=3)), q


# -- measurement ------------------------------------------------------------

def test_line_measurement_examples():
    cam = CameraModel(1.0, 1.0, 0.0, 0.0, 10, 10)
    L = PluckerLine.from_point_direction(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(L.n, [0.0, 1.0, 0.0])
    on = LineSegment2D(0, 0.0, [-3.0, 0.0], [5.0, 0.0])
    np.testing.assert_allclose(line_measurement(L, np.eye(3), np.zeros(3), cam, on), [0.0, 0.0])
    off = LineSegment2D(0, 0.0, [-3.0, 2.0], [5.0, -2.0])
    d = line_measurement(L, np.eye(3), np.zeros(3), cam, off)
    np.testing.assert_allclose(np.abs(d), [2.0, 2.0])
    assert d[0] * d[1] < 0
    through = PluckerLine.from_point_direction(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    with pytest.raises(DegenerateProjection):
        line_measurement(through, np.eye(3), np.zeros(3), cam, on)


def test_pure_rotation_keeps_true_endpoints_on_line():
    rng = np.random.default_rng(0)
    P0, P1 = np.array([6.0, -1.0, 0.5]), np.array([7.0, 2.0, 1.5])
    L = PluckerLine.from_point_direction(P0, P1 - P0)
    for _ in range(20):
        R = exp_so3(rng.normal(size=3) * 0.1)
        T = CAM.camera_pose(R, np.zeros(3))
        uv = render_segment(P0, P1, T.R, T.p, CAM, 0.3)
        seg = LineSegment2D(0, 0.0, uv[0], uv[1])
        assert np.max(np.abs(line_measurement(L, R, np.zeros(3), CAM, seg))) < 1e-8


def _random_setup(rng):
    R = Rotation.random(random_state=rng).as_matrix()
    p = rng.normal(size=3)
    L, _ = random_line_in_view(rng, R, p)
    seg = LineSegment2D(0, 0.0, rng.uniform(0, 700, 2), rng.uniform(0, 400, 2) + 30)
    return L, R, p, seg


def test_line_jacobians_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        L, R, p, seg = _random_setup(rng)
        J = line_jacobians(L, R, p, CAM, seg)
        Jc = central_diff(lambda dx: line_measurement(L, exp_so3(-dx[:3]) @ R, p + dx[3:], CAM, seg), np.zeros(6))
        Jp = central_diff(lambda x: line_measurement(PluckerLine(x[:3], x[3:]), R, p, CAM, seg), L.as_vector())
        Jl = central_diff(lambda d: line_measurement(orthonormal_plus(L, d), R, p, CAM, seg), np.zeros(4))
        for A, B in ((Jc, J.H_clone), (Jp, J.H_plucker), (Jl, J.H_line)):
            worst = max(worst, np.linalg.norm(A - B) / np.linalg.norm(A))
        # translating along the line leaves the residual unchanged
        assert np.max(np.abs(J.H_clone[:, 3:] @ L.v)) <= 1e-8 * max(1.0, np.abs(J.H_clone).max())
    assert worst <= 1e-4


def test_line_batch_matches_single():
    rng = np.random.default_rng(2)
    L, R, p, seg = _random_setup(rng)
    Rs = np.array([R, exp_so3([0, 0.01, 0]) @ R])
    ps = np.array([p, p + 0.05])
    P = np.array([seg.homogeneous()] * 2)
    d, Hc, Hl = line_batch(L, Rs, ps, CAM, P)
    for k in range(2):
        J = line_jacobians(L, Rs[k], ps[k], CAM, seg)
        np.testing.assert_allclose(d[k], J.h, atol=1e-10)
        np.testing.assert_allclose(Hc[k], J.H_clone, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(Hl[k], J.H_line, rtol=1e-9, atol=1e-9)


def test_orthonormal_representation():
    rng = np.random.default_rng(3)
    for _ in range(50):
        L = PluckerLine.from_point_direction(rng.normal(size=3) * 4, rng.normal(size=3))
        U, phi = orthonormal_basis(L)
        np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)
        L0 = orthonormal_plus(L, np.zeros(4))
        np.testing.assert_allclose(L0.n, L.n, atol=1e-12)
        np.testing.assert_allclose(L0.v, L.v, atol=1e-12)
        T = plucker_tangent(L)
        J = central_diff(lambda d: orthonormal_plus(L, d).as_vector(), np.zeros(4))
        # (n, v) is defined up to scale; compare after removing the scale direction
        s = L.as_vector() / np.linalg.norm(L.as_vector())
        proj = np.eye(6) - np.outer(s, s)
        np.testing.assert_allclose(proj @ J, proj @ T, atol=1e-6)
        assert np.linalg.matrix_rank(T) == 4
    through_origin = PluckerLine(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    U, phi = orthonormal_basis(through_origin)
    assert phi == pytest.approx(math.pi / 2)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)


# -- triangulation ------------------------------------------------------------

def _poses_c(poses, cam=CAM):
    return [(cam.R_ItoC @ R, p + R.T @ cam.p_CinI) for R, p in poses]


def test_two_point_examples():
    L = triangulate_line_two_points([1, 0, 0], [1, 1, 0])
    np.testing.assert_allclose(L.v, [0, -1, 0])
    np.testing.assert_allclose(L.n, [0, 0, -1])
    L = triangulate_line_two_points([1, 0, 0], [2, 0, 0])
    np.testing.assert_allclose(L.v, [-1, 0, 0])
    np.testing.assert_allclose(L.n, [0, 0, 0], atol=0)
    with pytest.raises(PointsTooClose):
        triangulate_line_two_points([1, 0, 0], [1.01, 0, 0])
    rng = np.random.default_rng(4)
    for _ in range(20):
        p1, p2 = rng.normal(size=3) * 3 + [6, 0, 0], rng.normal(size=3) * 3 + [6, 0, 0]
        a, b = triangulate_line_two_points(p1, p2), triangulate_line_two_points(p2, p1)
        np.testing.assert_allclose(a.v, -b.v)
        np.testing.assert_allclose(a.n, -b.n)
        # both points lie on the line: p x v = n
        np.testing.assert_allclose(np.cross(p2, a.v), a.n, atol=1e-12)
        seg = LineSegment2D(0, 0.0, [100.0, 120.0], [500.0, 300.0])
        # same projective line; the orientation only flips the sign of the distances
        np.testing.assert_allclose(line_measurement(a, np.eye(3), np.zeros(3), CAM, seg),
                                   -line_measurement(b, np.eye(3), np.zeros(3), CAM, seg), atol=1e-9)


def test_point_direction_examples():
    L = triangulate_line_point_direction([0, 1, 0], AxisClass.X, np.eye(3))
    np.testing.assert_allclose(L.v, [1, 0, 0])
    np.testing.assert_allclose(L.n, [0, 0, -1])
    L = triangulate_line_point_direction([3, 0, 0], AxisClass.X, np.eye(3))
    np.testing.assert_allclose(L.n, 0, atol=0)
    # the direction is the IMU axis expressed in G
    R = exp_so3([0.0, 0.0, 0.3])
    L = triangulate_line_point_direction([0, 0, 0], AxisClass.Y, R)
    np.testing.assert_allclose(L.v, R.T[:, 1])
    with pytest.raises(ValueError):
        triangulate_line_point_direction([0, 1, 0], AxisClass.UNCLASSIFIED, np.eye(3))


def test_plane_method_generic_motion_is_exact():
    rng = np.random.default_rng(5)
    poses = generic_poses()
    for _ in range(30):
        _, q = random_line_in_view(rng, *poses[0])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        P0, P1 = q - 1.5 * d, q + 1.5 * d
        try:
            segs = observe(P0, P1, poses)
        except AssertionError:
            continue
        L = triangulate_line_planes(segs, _poses_c(poses), CAM)
        assert angle_between(L.v, d) <= 1e-8
        assert abs(L.n @ L.v) <= 1e-10
        np.testing.assert_allclose(np.cross(q, L.v), L.n, atol=1e-7)


def test_plane_method_degenerate_cases():
    P0, P1 = np.array([5.0, 2.0, 0.5]), np.array([15.0, 2.0, 0.5])
    poses = straight_poses()
    with pytest.raises(Degenerate):
        triangulate_line_planes(observe(P0, P1, poses), _poses_c(poses), CAM)
    rot = [(exp_so3([0, 0, 0.02 * k]).T, np.zeros(3)) for k in range(5)]
    Q0, Q1 = np.array([6.0, -1.0, 0.5]), np.array([7.0, 2.0, 1.5])
    with pytest.raises(Degenerate):
        triangulate_line_planes(observe(Q0, Q1, rot), _poses_c(rot), CAM)
    with pytest.raises(Degenerate):
        triangulate_line_planes(observe(Q0, Q1, rot)[:1], _poses_c(rot)[:1], CAM)


def test_plane_degeneracy_is_noise_aware():
    rng = np.random.default_rng(6)
    P0, P1 = np.array([5.0, 2.0, 0.5]), np.array([15.0, 2.0, 0.5])
    poses = straight_poses(8)
    clean = observe(P0, P1, poses)
    hits = 0
    for _ in range(50):
        noisy = [LineSegment2D(0, s.t, s.ps + rng.normal(size=2), s.pe + rng.normal(size=2)) for s in clean]
        try:
            triangulate_line_planes(noisy, _poses_c(poses), CAM, sigma_px=1.0)
        except Degenerate:
            hits += 1
    assert hits >= 48


def test_methods_agree_and_cascade_picks_planes():
    rng = np.random.default_rng(7)
    poses = generic_poses()
    done = 0
    while done < 10:
        _, q = random_line_in_view(rng, *poses[0])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        try:
            segs = observe(q - 1.5 * d, q + 1.5 * d, poses)
        except AssertionError:
            continue
        done += 1
        pts = {1: q - 0.8 * d, 2: q + 0.9 * d}
        res = triangulate_line_detailed(segs, poses, CAM, pts, cfg=EXACT)
        assert res.method == METHOD_PLANES and not res.plane_degenerate
        L2 = triangulate_line_two_points(pts[1], pts[2])
        assert angle_between(res.line.v, L2.v) <= 1e-6
        for L in (res.line, L2):
            for (R, p), s in zip(poses, segs):
                assert np.max(np.abs(line_measurement(L, R, p, CAM, s))) <= 1e-8


def test_cascade_falls_back_under_straight_motion():
    poses = straight_poses()
    P0, P1 = np.array([5.0, 2.0, 0.5]), np.array([15.0, 2.0, 0.5])
    segs = observe(P0, P1, poses)
    res = triangulate_line_detailed(segs, poses, CAM, {3: np.array([7.0, 2.0, 0.5]), 4: np.array([9.0, 2.0, 0.5])})
    assert res.plane_degenerate and res.method == METHOD_TWO_POINTS
    assert angle_between(res.line.v, [1, 0, 0]) <= 1e-8
    res = triangulate_line_detailed(segs, poses, CAM, {3: np.array([7.0, 2.0, 0.5])})
    assert res.plane_degenerate and res.method == METHOD_POINT_DIRECTION
    assert res.axis is AxisClass.X
    assert angle_between(res.line.v, [1, 0, 0]) <= 1e-6
    assert abs(res.line.n @ res.line.v) <= 1e-10
    with pytest.raises(NoMethodApplicable):
        triangulate_line(segs, poses, CAM)


def test_two_point_line_must_match_axis():
    poses = straight_poses()
    P0, P1 = np.array([5.0, 2.0, 0.5]), np.array([15.0, 2.0, 0.5])
    segs = observe(P0, P1, poses)
    # the nearer point is an off-line outlier; its pair disagrees with the x axis
    pts = {3: np.array([7.0, 2.0, 0.5]), 4: np.array([6.0, 2.6, 0.5])}
    res = triangulate_line_detailed(segs, poses, CAM, pts, support={3: 6, 4: 1})
    assert res.method == METHOD_POINT_DIRECTION
    assert angle_between(res.line.v, [1, 0, 0]) <= 1e-6


# -- update -------------------------------------------------------------------

def _line_scene(rng, n_lines=12, perturb=0.02):
    poses = generic_poses(8)
    s = FilterState(ImuState(np.eye(3), np.zeros(3), np.zeros(3)))
    for k, (R, p) in enumerate(poses):
        s.imu.R, s.imu.p = R, p
        augment_clone(s, float(k))
    s.P = np.diag(np.r_[np.full(15, 1e-6), np.tile([1e-6] * 3 + [0.05 ** 2] * 3, len(poses))])
    tracks = []
    while len(tracks) < n_lines:
        _, q = random_line_in_view(rng, *poses[0])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        try:
            segs = observe(q - 1.5 * d, q + 1.5 * d, poses)
        except AssertionError:
            continue
        tr = LineTrack(len(tracks))
        for seg in segs:
            tr.add(seg)
        tracks.append(tr)
    truth = s.copy()
    for c in s.clones[1:]:
        c.p = c.p + rng.normal(size=3) * perturb
    return truth, s, tracks


def test_line_update_reduces_clone_error():
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        truth, est, tracks = _line_scene(rng)
        err = lambda: sum(np.linalg.norm(a.p - b.p) for a, b in zip(truth.clones, est.clones))
        before = err()
        res = line_update(est, tracks, CAM, LineConfig(chi2_multiplier=1e6, max_residual=50.0, plane_noise_px=0.0))
        assert res.applied
        assert err() < before
        est.check()


def test_line_update_all_failures_leave_state_unchanged():
    rng = np.random.default_rng(8)
    truth, est, tracks = _line_scene(rng, n_lines=3)
    for tr in tracks:
        del tr.times[2:], tr.segs[2:], tr.assigned[2:]
    before = est.copy()
    res = line_update(est, tracks, CAM, LineConfig())
    assert not res.applied
    assert all(r.status == "too_short" for r in res.records)
    assert all(tr.status is LineStatus.REJECTED for tr in tracks)
    np.testing.assert_array_equal(est.P, before.P)


def test_dynamic_line_rejected():
    rng = np.random.default_rng(9)
    truth, est, tracks = _line_scene(rng, n_lines=1)
    for a in tracks[0].assigned:
        a.extend([5, 6])
    res = line_update(est, tracks, CAM, LineConfig(), dynamic=frozenset({5, 6}))
    assert [r.status for r in res.records] == ["dynamic"]


def test_line_track_support():
    tr = LineTrack(0)
    for k, ids in enumerate([[1, 2], [1], [1, 3], [1, 2]]):
        tr.add(LineSegment2D(0, float(k), [0, 0], [50, 0]), ids)
    assert tr.point_ids() == [1, 2, 3]
    assert tr.point_support(0.5) == {1: 4, 2: 2}
    with pytest.raises(ValueError):
        tr.add(LineSegment2D(0, 1.0, [0, 0], [50, 0]))
    tr.prune_before(2.0)
    assert tr.times == [2.0, 3.0]


def test_line_system_matches_finite_differences():
    from viwo.lines.update import line_system
    rng = np.random.default_rng(10)
    truth, est, tracks = _line_scene(rng, n_lines=1)
    tr = tracks[0]
    L = triangulate_line_detailed(tr.segs, [(c.R, c.p) for c in truth.clones], CAM, cfg=EXACT).line
    H_x, H_L, r = line_system(tr, L, est, CAM)

    def h(dx):
        c = est.copy()
        inject_error(c, dx)
        return -line_system(tr, L, c, CAM)[2]

    J = central_diff(h, np.zeros(est.dim))
    np.testing.assert_allclose(J, H_x, atol=1e-5 * np.abs(H_x).max())
