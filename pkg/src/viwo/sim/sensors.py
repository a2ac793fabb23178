"""Sensor streams rendered from a world and a trajectory."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..dataset import Calibration, Dataset, InitialState
from ..geometry import CameraModel
from ..propagation import GRAVITY, OdometerExtrinsics
from .trajectory import Trajectory
from .world import World

logger = logging.getLogger(__name__)


@dataclass
class SimNoise:
    """Noise injected by the simulator. Zero disables a term."""

    sigma_gyro: float = 1.7e-4        # rad/s/sqrt(Hz)
    sigma_accel: float = 2.0e-3       # m/s^2/sqrt(Hz)
    sigma_gyro_walk: float = 2.0e-5
    sigma_accel_walk: float = 3.0e-4
    gyro_bias_init: float = 1e-3      # std of the initial biases
    accel_bias_init: float = 1e-2
    sigma_px: float = 1.0
    sigma_line_px: float = 1.0        # endpoint jitter, along and across the segment
    sigma_wheel_v: float = 0.02
    sigma_wheel_w: float = 0.02
    slip_events: list = field(default_factory=list)  # [t0, t1, factor] scales wheel vx
    min_depth: float = 0.5
    max_depth: float = 40.0
    min_segment_length: float = 40.0
    max_points_per_frame: int = 0     # 0 = unlimited; keeps the nearest points

    @classmethod
    def zero(cls, **kw):
        z = dict(sigma_gyro=0.0, sigma_accel=0.0, sigma_gyro_walk=0.0, sigma_accel_walk=0.0,
                 gyro_bias_init=0.0, accel_bias_init=0.0, sigma_px=0.0, sigma_line_px=0.0,
                 sigma_wheel_v=0.0, sigma_wheel_w=0.0)
        z.update(kw)
        return cls(**z)


def quat_xyzw(R_ItoG):
    q = Rotation.from_matrix(R_ItoG).as_quat()
    q = np.where(q[..., 3:4] < 0, -q, q)
    return q


def _clip_to_image(a, b, w, h):
    """Liang-Barsky clip of segment ab to [0, w] x [0, h]; None if outside."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], a[0]), (d[0], w - a[0]), (-d[1], a[1]), (d[1], h - a[1])):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return a + t0 * d, a + t1 * d


def render_segment(P0, P1, R_GtoC, p_CinG, cam: CameraModel, near, far=math.inf):
    """Image projection of the 3D segment P0-P1 clipped to the depth range
    ``[near, far]`` and the image, or None."""
    A = R_GtoC @ (P0 - p_CinG)
    B = R_GtoC @ (P1 - p_CinG)
    for lim, sign in ((near, 1.0), (far, -1.0)):
        # keep the part with sign * (z - lim) >= 0
        fa, fb = sign * (A[2] - lim), sign * (B[2] - lim)
        if fa < 0 and fb < 0:
            return None
        if fa < 0:
            A = A + fa / (fa - fb) * (B - A)
        elif fb < 0:
            B = B + fb / (fb - fa) * (A - B)
    a = np.array([cam.fx * A[0] / A[2] + cam.cx, cam.fy * A[1] / A[2] + cam.cy])
    b = np.array([cam.fx * B[0] / B[2] + cam.cx, cam.fy * B[1] / B[2] + cam.cy])
    return _clip_to_image(a, b, float(cam.width), float(cam.height))


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def simulate_sensors(world: World, traj: Trajectory, cam: CameraModel, odo: OdometerExtrinsics, noise: SimNoise,
                     seed=0, gravity=GRAVITY) -> Dataset:
    """Render IMU, wheel, point and line observations plus ground truth."""
    cfg = traj.cfg
    rng_imu, rng_wheel, rng_pts, rng_lines = _streams(seed)
    dur = traj.duration

    # IMU with random-walk biases (Euler at IMU rate)
    n_imu = int(math.floor(dur * cfg.imu_rate + 1e-9)) + 1
    t_imu = np.arange(n_imu) / cfg.imu_rate
    dt = 1.0 / cfg.imu_rate
    w_true = traj.angular_velocity(t_imu)
    f_true = traj.specific_force(t_imu, gravity)
    bg = rng_imu.normal(size=3) * noise.gyro_bias_init
    ba = rng_imu.normal(size=3) * noise.accel_bias_init
    walk_g = rng_imu.normal(size=(n_imu, 3)) * noise.sigma_gyro_walk * math.sqrt(dt)
    walk_a = rng_imu.normal(size=(n_imu, 3)) * noise.sigma_accel_walk * math.sqrt(dt)
    walk_g[0] = walk_a[0] = 0.0
    bgs = bg + np.cumsum(walk_g, axis=0)
    bas = ba + np.cumsum(walk_a, axis=0)
    wn = rng_imu.normal(size=(n_imu, 3)) * noise.sigma_gyro / math.sqrt(dt)
    an = rng_imu.normal(size=(n_imu, 3)) * noise.sigma_accel / math.sqrt(dt)
    imu = np.column_stack([t_imu, w_true + bgs + wn, f_true + bas + an])

    # wheel odometer
    n_wh = int(math.floor(dur * cfg.wheel_rate + 1e-9)) + 1
    t_wh = np.arange(n_wh) / cfg.wheel_rate
    R_ItoG = traj.R_ItoG(t_wh)
    v_I = np.einsum("kji,kj->ki", R_ItoG, traj.velocity(t_wh))
    w_I = traj.angular_velocity(t_wh)
    p_OinI = odo.p_OinI
    v_O = (odo.R_ItoO @ (v_I + np.cross(w_I, p_OinI)).T).T
    w_O = (odo.R_ItoO @ w_I.T).T
    vx = v_O[:, 0] + rng_wheel.normal(size=n_wh) * noise.sigma_wheel_v
    wz = w_O[:, 2] + rng_wheel.normal(size=n_wh) * noise.sigma_wheel_w
    for t0, t1, factor in noise.slip_events:
        m = (t_wh >= t0) & (t_wh <= t1)
        vx[m] *= factor
    wheel = np.column_stack([t_wh, vx, wz])

    # camera
    n_fr = int(math.floor(dur * cfg.frame_rate + 1e-9))
    t_fr = np.arange(1, n_fr + 1) / cfg.frame_rate
    R_fr = traj.R_ItoG(t_fr)
    P_fr = traj.position(t_fr)
    point_rows, line_rows = [], []
    W, H = float(cam.width), float(cam.height)
    for t, R_ItoG_k, p_k in zip(t_fr, R_fr, P_fr):
        pose = cam.camera_pose(R_ItoG_k.T, p_k)
        X = (pose.R @ (world.point_positions(t) - pose.p).T).T
        z = X[:, 2]
        vis = (z >= noise.min_depth) & (z <= noise.max_depth)
        idx = np.nonzero(vis)[0]
        uv = np.column_stack([cam.fx * X[idx, 0] / z[idx] + cam.cx, cam.fy * X[idx, 1] / z[idx] + cam.cy])
        inside = (uv[:, 0] >= 0) & (uv[:, 0] <= W) & (uv[:, 1] >= 0) & (uv[:, 1] <= H)
        idx, uv = idx[inside], uv[inside]
        if noise.max_points_per_frame and len(idx) > noise.max_points_per_frame:
            keep = np.sort(np.argsort(z[idx], kind="stable")[:noise.max_points_per_frame])
            idx, uv = idx[keep], uv[keep]
        uv = uv + rng_pts.normal(size=uv.shape) * noise.sigma_px
        for i, (u, v) in zip(idx, uv):
            point_rows.append((t, i, u, v))

        for j in range(world.n_lines):
            seg = render_segment(world.line_p0[j], world.line_p1[j], pose.R, pose.p, cam, noise.min_depth,
                                 noise.max_depth)
            if seg is None:
                continue
            a, b = seg
            length = float(np.linalg.norm(b - a))
            if length < noise.min_segment_length:
                continue
            d = (b - a) / length
            nrm = np.array([-d[1], d[0]])
            e = rng_lines.normal(size=4) * noise.sigma_line_px
            a = a + e[0] * d + e[1] * nrm
            b = b + e[2] * d + e[3] * nrm
            line_rows.append((t, j, a[0], a[1], b[0], b[1]))

    # ground truth at IMU rate
    q = quat_xyzw(traj.R_ItoG(t_imu))
    gt = np.column_stack([t_imu, traj.position(t_imu), q])

    initial = InitialState(0.0, traj.position(0.0)[0], q[0].copy(), traj.velocity(0.0)[0])
    calib = Calibration(cam, odo, initial, np.asarray(gravity, dtype=float).copy())
    truth_points = np.column_stack([np.arange(world.n_points), world.p_ref, world.vel, world.t_ref,
                                    world.dynamic.astype(int), world.point_line]).reshape(-1, 10)
    truth_lines = np.column_stack([np.arange(world.n_lines), world.line_p0, world.line_p1,
                                   world.line_axis]).reshape(-1, 8)
    ds = Dataset(imu=imu, wheel=wheel,
                 points=np.array(point_rows, dtype=float).reshape(-1, 4),
                 lines=np.array(line_rows, dtype=float).reshape(-1, 6),
                 groundtruth=gt, calib=calib, truth_points=truth_points, truth_lines=truth_lines)
    logger.info("simulated %.1f s: %d frames, %d point obs, %d line obs", dur, n_fr, len(point_rows),
                len(line_rows))
    return ds
