"""IMU mean/covariance propagation and the wheel-velocity update."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonMonotonic, TimestampGap
from .geometry import cross3, exp_so3, right_jacobian, skew
from .state import BA, BG, IMU_DIM, POS, TH, VEL, FilterState, StackedResidual, ekf_update

GRAVITY = np.array([0.0, 0.0, -9.81])
MAX_IMU_GAP = 0.1
WHEEL_TIME_TOL = 5e-3


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    w: np.ndarray  # rad/s
    a: np.ndarray  # m/s^2

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.a))):
            raise ValueError(f"non-finite IMU sample at t={self.t}")
        if np.linalg.norm(self.w) >= 35.0 or np.linalg.norm(self.a) >= 200.0:
            raise ValueError(f"IMU sample out of range at t={self.t}")


@dataclass(frozen=True)
class WheelSample:
    t: float
    vx: float  # forward speed of the odometer frame, m/s
    wz: float  # yaw rate of the odometer frame, rad/s

    def __post_init__(self):
        if not (math.isfinite(self.vx) and math.isfinite(self.wz)) or abs(self.vx) >= 50.0:
            raise ValueError(f"invalid wheel sample at t={self.t}")


@dataclass
class NoiseConfig:
    """Sensor noise. IMU terms are continuous-time densities."""

    sigma_gyro: float = 1.7e-4       # rad/s/sqrt(Hz)
    sigma_accel: float = 2.0e-3      # m/s^2/sqrt(Hz)
    sigma_gyro_walk: float = 2.0e-5  # rad/s^2/sqrt(Hz)
    sigma_accel_walk: float = 3.0e-4  # m/s^3/sqrt(Hz)
    sigma_wheel_v: float = 0.02      # m/s
    sigma_wheel_w: float = 0.02      # rad/s
    sigma_px: float = 1.0            # point observations, px
    sigma_line: float = 1.0          # line endpoint distance, px

    def __post_init__(self):
        for k, v in vars(self).items():
            if not v > 0:
                raise ValueError(f"noise parameter {k} must be positive")


@dataclass
class OdometerExtrinsics:
    R_ItoO: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_IinO: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def p_OinI(self):
        return -self.R_ItoO.T @ self.p_IinO

    def to_dict(self):
        return {"R_ItoO": np.asarray(self.R_ItoO).tolist(), "p_IinO": np.asarray(self.p_IinO).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["R_ItoO"], dtype=float), np.array(d["p_IinO"], dtype=float))


def imu_step(R, p, v, bg, ba, w0, a0, w1, a1, dt, g=GRAVITY, jacobian=True):
    """One midpoint step over ``dt`` with readings at both interval ends.

    Rotation uses the averaged rate; specific force is averaged in the global
    frame (trapezoid). Returns ``(R, p, v, Phi)`` where ``Phi`` is the exact
    first-order error-state transition of this discrete map.
    """
    phi = (0.5 * (w0 + w1) - bg) * dt
    dR = exp_so3(phi)
    A0 = R.T
    A1 = A0 @ dR
    a0h = a0 - ba
    a1h = a1 - ba
    aG = 0.5 * (A0 @ a0h + A1 @ a1h) + g
    v1 = v + aG * dt
    p1 = p + v * dt + 0.5 * dt * dt * aG
    R1 = A1.T
    if not jacobian:
        return R1, p1, v1, None

    Jr = right_jacobian(phi)
    da_dth = -0.5 * (A0 @ skew(a0h) + A0 @ skew(dR @ a1h))
    da_dbg = 0.5 * dt * (A1 @ skew(a1h) @ Jr)
    da_dba = -0.5 * (A0 + A1)
    Phi = np.eye(IMU_DIM)
    Phi[TH, TH] = dR.T
    Phi[TH, BG] = -Jr * dt
    h = 0.5 * dt * dt
    Phi[POS, TH] = h * da_dth
    Phi[POS, VEL] = np.eye(3) * dt
    Phi[POS, BG] = h * da_dbg
    Phi[POS, BA] = h * da_dba
    Phi[VEL, TH] = dt * da_dth
    Phi[VEL, BG] = dt * da_dbg
    Phi[VEL, BA] = dt * da_dba
    return R1, p1, v1, Phi


def process_noise(dt, noise: NoiseConfig):
    Q = np.zeros((IMU_DIM, IMU_DIM))
    I3 = np.eye(3)
    sa2 = noise.sigma_accel ** 2
    Q[TH, TH] = noise.sigma_gyro ** 2 * dt * I3
    Q[VEL, VEL] = sa2 * dt * I3
    Q[POS, POS] = sa2 * dt ** 3 / 4.0 * I3
    Q[POS, VEL] = sa2 * dt ** 2 / 2.0 * I3
    Q[VEL, POS] = Q[POS, VEL]
    Q[BG, BG] = noise.sigma_gyro_walk ** 2 * dt * I3
    Q[BA, BA] = noise.sigma_accel_walk ** 2 * dt * I3
    return Q


def _interp(s0: ImuSample, s1: ImuSample, t):
    if t == s0.t:
        return s0.w, s0.a
    if t == s1.t:
        return s1.w, s1.a
    lam = (t - s0.t) / (s1.t - s0.t)
    return (1 - lam) * s0.w + lam * s1.w, (1 - lam) * s0.a + lam * s1.a


def _knots(samples, t0, t1):
    """(t, w, a) triples covering [t0, t1], interpolating at both ends."""
    times = [s.t for s in samples]
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            raise NonMonotonic(f"IMU timestamps not increasing at {times[i]}")
        if times[i] - times[i - 1] > MAX_IMU_GAP:
            raise TimestampGap(f"IMU gap of {times[i] - times[i - 1]:.3f} s at {times[i]}")
    if not times or times[0] > t0 or times[-1] < t1:
        raise ValueError(f"IMU samples do not cover [{t0}, {t1}]")
    i0 = max(bisect.bisect_right(times, t0) - 1, 0)
    i1 = bisect.bisect_left(times, t1)
    i0 = min(i0, len(times) - 2) if len(times) > 1 else 0
    w, a = _interp(samples[i0], samples[min(i0 + 1, len(samples) - 1)], t0)
    knots = [(t0, w, a)]
    for s in samples[i0 + 1:i1]:
        if t0 < s.t < t1:
            knots.append((s.t, s.w, s.a))
    j = max(i1 - 1, 0)
    w, a = _interp(samples[j], samples[min(j + 1, len(samples) - 1)], t1)
    knots.append((t1, w, a))
    return knots


def propagate(state: FilterState, samples, t_target, noise: NoiseConfig, gravity=GRAVITY):
    """Propagate the IMU state and covariance from ``state.t`` to ``t_target``."""
    t_target = float(t_target)
    if t_target < state.t:
        raise NonMonotonic(f"cannot propagate backwards from {state.t} to {t_target}")
    if t_target == state.t:
        return state
    knots = _knots(samples, state.t, t_target)
    imu = state.imu
    R, p, v = imu.R, imu.p, imu.v
    Phi_tot = np.eye(IMU_DIM)
    Q_tot = np.zeros((IMU_DIM, IMU_DIM))
    for (ta, wa, aa), (tb, wb, ab) in zip(knots[:-1], knots[1:]):
        dt = tb - ta
        R, p, v, Phi = imu_step(R, p, v, imu.bg, imu.ba, wa, aa, wb, ab, dt, gravity)
        Phi_tot = Phi @ Phi_tot
        Q_tot = Phi @ Q_tot @ Phi.T + process_noise(dt, noise)
    imu.R, imu.p, imu.v = R, p, v

    P = state.P
    n = IMU_DIM
    P[:n, :n] = Phi_tot @ P[:n, :n] @ Phi_tot.T + Q_tot
    if P.shape[0] > n:
        P[:n, n:] = Phi_tot @ P[:n, n:]
        P[n:, :n] = P[:n, n:].T
    state.P = 0.5 * (P + P.T)
    state.t = t_target
    state.w_m = knots[-1][1].copy()
    return state


def predict_wheel(state: FilterState, ext: OdometerExtrinsics, jacobian=True):
    """Predicted (forward speed, yaw rate) and its 2 x dim Jacobian."""
    imu = state.imu
    w = state.w_m - imu.bg
    vI = imu.R @ imu.v
    pO = ext.p_OinI
    RIO = ext.R_ItoO
    vO = RIO @ (vI + cross3(w, pO))
    wO = RIO @ w
    z = np.array([vO[0], wO[2]])
    if not jacobian:
        return z, None
    H = np.zeros((2, state.dim))
    ex = RIO[0]
    ez = RIO[2]
    H[0, TH] = ex @ skew(vI)
    H[0, VEL] = ex @ imu.R
    H[0, BG] = ex @ skew(pO)
    H[1, BG] = -ez
    return z, H


def wheel_update(state: FilterState, ws: WheelSample, ext: OdometerExtrinsics, noise: NoiseConfig,
                 chi2_multiplier=1.0):
    if abs(state.t - ws.t) > WHEEL_TIME_TOL:
        raise ValueError(f"wheel sample at {ws.t} too far from state time {state.t}")
    z_hat, H = predict_wheel(state, ext)
    r = np.array([ws.vx, ws.wz]) - z_hat
    Rn = np.array([noise.sigma_wheel_v ** 2, noise.sigma_wheel_w ** 2])
    return ekf_update(state, StackedResidual(r, H, Rn), chi2_multiplier)
