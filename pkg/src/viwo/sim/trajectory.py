"""Smooth planar ground-robot trajectories.

A plan is a list of segments (straight runs, constant-radius arcs and stops).
Speed and yaw rate move between segment values through cosine ramps of
length ``ramp_time`` centred on each boundary, so velocity is C1 and the
IMU signals are continuous. Heading is integrated in closed form; position
by Gauss-Legendre quadrature on pieces split at every ramp breakpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from ..errors import InfeasiblePlan
from ..geometry import rot_y, rot_z

GRAVITY = np.array([0.0, 0.0, -9.81])

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


@dataclass
class Segment:
    kind: str = "straight"   # straight | arc | stop
    duration: float = 10.0
    radius: float = 0.0      # arcs only; sign gives turn direction (+ left)
    speed: float | None = None  # overrides the cruise speed


@dataclass
class TrajectoryConfig:
    segments: list[Segment] = field(default_factory=lambda: [Segment("straight", 20.0)])
    speed: float = 1.5
    ramp_time: float = 2.0
    initial_speed: float | None = None
    initial_yaw: float = 0.0
    initial_position: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    pitch_amplitude: float = 0.0
    pitch_frequency: float = 0.2
    frame_rate: float = 10.0
    imu_rate: float = 100.0
    wheel_rate: float = 20.0

    @property
    def duration(self):
        return float(sum(s.duration for s in self.segments))


def _smooth(x):
    x = np.clip(x, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * x))


def _smooth_d(x):
    inside = (x > 0.0) & (x < 1.0)
    return np.where(inside, 0.5 * np.pi * np.sin(np.pi * np.clip(x, 0.0, 1.0)), 0.0)


def _smooth_int(x):
    """Integral of the ramp from 0 to x (in ramp units), continued linearly."""
    xc = np.clip(x, 0.0, 1.0)
    base = 0.5 * xc - np.sin(np.pi * xc) / (2.0 * np.pi)
    return base + np.maximum(x - 1.0, 0.0)


class Trajectory:
    """Continuous-time ground truth. All methods accept scalar or array time."""

    def __init__(self, cfg: TrajectoryConfig):
        if cfg.imu_rate <= 0 or cfg.frame_rate <= 0 or cfg.wheel_rate <= 0:
            raise InfeasiblePlan("sensor rates must be positive")
        if cfg.imu_rate < cfg.frame_rate:
            raise InfeasiblePlan("IMU rate must be at least the frame rate")
        if not cfg.segments:
            raise InfeasiblePlan("empty plan")
        self.cfg = cfg
        tau = float(cfg.ramp_time)
        speeds, rates, bounds = [], [], [0.0]
        for seg in cfg.segments:
            if seg.duration <= 0:
                raise InfeasiblePlan("segment durations must be positive")
            s = 0.0 if seg.kind == "stop" else (cfg.speed if seg.speed is None else seg.speed)
            if seg.kind == "arc":
                if seg.radius == 0:
                    raise InfeasiblePlan("arc needs a non-zero radius")
                w = s / seg.radius
            elif seg.kind in ("straight", "stop"):
                w = 0.0
            else:
                raise InfeasiblePlan(f"unknown segment kind {seg.kind!r}")
            speeds.append(s)
            rates.append(w)
            bounds.append(bounds[-1] + seg.duration)
        s0 = speeds[0] if cfg.initial_speed is None else cfg.initial_speed
        self._s0, self._w0 = s0, rates[0]
        steps_s = [(0.0, speeds[0] - s0)] if s0 != speeds[0] else []
        steps_w = []
        for k in range(1, len(speeds)):
            steps_s.append((bounds[k], speeds[k] - speeds[k - 1]))
            steps_w.append((bounds[k], rates[k] - rates[k - 1]))
        jumps = [d for _, d in steps_s + steps_w if d != 0.0]
        if jumps and tau <= 0:
            raise InfeasiblePlan("speed or yaw-rate change without a ramp")
        durations = [seg.duration for seg in cfg.segments]
        if jumps and tau > min(durations):
            raise InfeasiblePlan("ramp longer than a segment")
        if s0 != speeds[0] and tau > 2 * durations[0]:
            raise InfeasiblePlan("initial ramp longer than first segment")
        self.tau = tau
        # ramp at t=0 runs over [0, tau]; ramps at boundaries are centred
        self._ramps_s = [(b if b == 0.0 else b - tau / 2, d) for b, d in steps_s]
        self._ramps_w = [(b - tau / 2, d) for b, d in steps_w]
        self.duration = bounds[-1]
        self.bounds = bounds
        self.speeds, self.rates = speeds, rates
        brk = {0.0, self.duration}
        for t0, _ in self._ramps_s + self._ramps_w:
            brk.update((t0, t0 + tau))
        self._breaks = np.array(sorted(b for b in brk if 0.0 <= b <= self.duration))
        self._node_pos = self._integrate_nodes()

    # -- scalar profiles -------------------------------------------------------

    def _profile(self, t, base, ramps):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, base, dtype=float)
        for t0, d in ramps:
            out = out + d * _smooth((t - t0) / self.tau)
        return out

    def _profile_d(self, t, ramps):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for t0, d in ramps:
            out = out + d * _smooth_d((t - t0) / self.tau) / self.tau
        return out

    def speed(self, t):
        return self._profile(t, self._s0, self._ramps_s)

    def speed_rate(self, t):
        return self._profile_d(t, self._ramps_s)

    def yaw_rate(self, t):
        return self._profile(t, self._w0, self._ramps_w)

    def yaw_acc(self, t):
        return self._profile_d(t, self._ramps_w)

    def yaw(self, t):
        t = np.asarray(t, dtype=float)
        out = self.cfg.initial_yaw + self._w0 * t
        for t0, d in self._ramps_w:
            out = out + d * self.tau * _smooth_int((t - t0) / self.tau)
        return out

    def pitch(self, t):
        a, f = self.cfg.pitch_amplitude, self.cfg.pitch_frequency
        return a * np.sin(2.0 * np.pi * f * np.asarray(t, dtype=float))

    def pitch_rate(self, t):
        a, f = self.cfg.pitch_amplitude, self.cfg.pitch_frequency
        return a * 2.0 * np.pi * f * np.cos(2.0 * np.pi * f * np.asarray(t, dtype=float))

    # -- kinematics ------------------------------------------------------------

    def velocity(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s, psi = self.speed(t), self.yaw(t)
        return np.stack([s * np.cos(psi), s * np.sin(psi), np.zeros_like(s)], axis=1)

    def acceleration(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s, ds, psi, w = self.speed(t), self.speed_rate(t), self.yaw(t), self.yaw_rate(t)
        c, sn = np.cos(psi), np.sin(psi)
        return np.stack([ds * c - s * w * sn, ds * sn + s * w * c, np.zeros_like(s)], axis=1)

    def _integrate_nodes(self):
        # dense node grid (<= 0.5 s apart) containing every breakpoint
        nodes = [0.0]
        for a, b in zip(self._breaks[:-1], self._breaks[1:]):
            n = max(1, int(math.ceil((b - a) / 0.5)))
            nodes.extend(np.linspace(a, b, n + 1)[1:])
        self._nodes = np.array(nodes)
        steps = self._quad(self._nodes[:-1], self._nodes[1:])
        pos = np.zeros((len(self._nodes), 3))
        pos[0] = np.asarray(self.cfg.initial_position, dtype=float)
        pos[1:] = pos[0] + np.cumsum(steps, axis=0)
        return pos

    def _quad(self, a, b):
        """Integral of the planar velocity over each [a_i, b_i]."""
        half = 0.5 * (b - a)
        ts = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
        v = self.velocity(ts.ravel()).reshape(len(a), len(_GL_X), 3)
        return half[:, None] * np.einsum("k,nkd->nd", _GL_W, v)

    def position(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self._nodes, t, side="right") - 1, 0, len(self._nodes) - 1)
        return self._node_pos[k] + self._quad(self._nodes[k], t)

    def R_ItoG(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        psi, th = self.yaw(t), self.pitch(t)
        return np.stack([rot_z(a) @ rot_y(b) for a, b in zip(psi, th)])

    def angular_velocity(self, t):
        """Body-frame angular rate."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        w, th, dth = self.yaw_rate(t), self.pitch(t), self.pitch_rate(t)
        # R = Rz(psi) Ry(theta): w_I = Ry(theta)^T (0, 0, psi') + (0, theta', 0)
        return np.stack([-np.sin(th) * w, dth, np.cos(th) * w], axis=1)

    def specific_force(self, t, gravity=GRAVITY):
        """Accelerometer truth in the body frame."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        R = self.R_ItoG(t)
        a = self.acceleration(t) - gravity
        return np.einsum("kji,kj->ki", R, a)

    def path_length(self, n=20000):
        t = np.linspace(0.0, self.duration, n)
        return float(trapezoid(self.speed(t), t))


def generate_trajectory(cfg: TrajectoryConfig) -> Trajectory:
    return Trajectory(cfg)
