"""Synthetic 3D worlds: static and moving points, axis-aligned and generic lines.

Two layouts are supported. ``box`` scatters landmarks uniformly in a cube
around the origin. ``corridor`` places them along a trajectory (as buildings,
poles and road markings would be) so that a long drive keeps seeing
features. A few points are placed on every line so that point-assisted line
triangulation has something to work with.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..geometry import PluckerLine

logger = logging.getLogger(__name__)

AXES = np.eye(3)


@dataclass
class WorldConfig:
    n_static_points: int = 400
    n_dynamic_points: int = 0
    lines_x: int = 10
    lines_y: int = 10
    lines_z: int = 10
    lines_generic: int = 5
    points_per_line_min: int = 3
    points_per_line_max: int = 5
    extent: float = 20.0
    layout: str = "corridor"        # corridor | box
    lateral_min: float = 3.0
    lateral_max: float = 15.0
    ground_z: float = -0.5
    height_max: float = 5.0
    camera_band: float = 0.4        # horizontal lines avoid |z| < band
    lookahead: float = 40.0
    line_length_min: float = 3.0
    line_length_max: float = 10.0
    dynamic_speed_min: float = 0.3
    dynamic_speed_max: float = 1.0
    dynamic_lead: float = 10.0      # a moving point is on its anchor when the robot is this far behind it
    seed: int = 0

    def validate(self):
        counts = [self.n_static_points, self.n_dynamic_points, self.lines_x, self.lines_y, self.lines_z,
                  self.lines_generic, self.points_per_line_min, self.points_per_line_max]
        if any(c < 0 for c in counts):
            raise ValueError("world counts must be non-negative")
        if self.points_per_line_max < self.points_per_line_min:
            raise ValueError("points_per_line_max < points_per_line_min")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.layout not in ("corridor", "box"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if not 0 <= self.dynamic_speed_min <= self.dynamic_speed_max:
            raise ValueError("bad dynamic speed range")
        if self.lateral_max < self.lateral_min or self.height_max <= self.ground_z:
            raise ValueError("bad corridor geometry")


@dataclass
class World:
    """Landmarks. Point ``i`` sits at ``p_ref[i] + vel[i] * (t - t_ref[i])``."""

    p_ref: np.ndarray       # (N, 3)
    vel: np.ndarray         # (N, 3), zero for static points
    t_ref: np.ndarray       # (N,)
    dynamic: np.ndarray     # (N,) bool
    point_line: np.ndarray  # (N,) id of the line a point was placed on, -1 otherwise
    line_p0: np.ndarray     # (M, 3)
    line_p1: np.ndarray     # (M, 3)
    line_axis: np.ndarray   # (M,) 0/1/2 for G-axis aligned lines, -1 for generic

    @property
    def n_points(self):
        return len(self.p_ref)

    @property
    def n_lines(self):
        return len(self.line_p0)

    def point_positions(self, t):
        return self.p_ref + self.vel * (t - self.t_ref)[:, None]

    def line(self, i) -> PluckerLine:
        return PluckerLine.from_point_direction(self.line_p0[i], self.line_p1[i] - self.line_p0[i])

    def line_direction(self, i):
        d = self.line_p1[i] - self.line_p0[i]
        return d / np.linalg.norm(d)


class _Corridor:
    """Arc-length parameterised centreline of a trajectory, extended straight
    past its end."""

    def __init__(self, traj, lookahead):
        t = np.linspace(0.0, traj.duration, max(2, int(traj.duration / 0.05) + 1))
        self.t = t
        self.pos = traj.position(t)
        self.yaw = traj.yaw(t)
        step = np.linalg.norm(np.diff(self.pos[:, :2], axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(step)])
        self.length = float(self.s[-1])
        self.lookahead = lookahead

    def at(self, s):
        """Position and unit tangent (planar) at arc length ``s``."""
        if s <= self.length:
            k = int(np.clip(np.searchsorted(self.s, s), 0, len(self.s) - 1))
            psi = self.yaw[k]
            tan = np.array([np.cos(psi), np.sin(psi), 0.0])
            return self.pos[k] + tan * (s - self.s[k]), tan
        psi = self.yaw[-1]
        tan = np.array([np.cos(psi), np.sin(psi), 0.0])
        return self.pos[-1] + tan * (s - self.length), tan

    def time_at(self, s):
        s = min(max(s, 0.0), self.length)
        return float(np.interp(s, self.s, self.t))


def _box_anchor(rng, cfg):
    e = cfg.extent
    return np.array([rng.uniform(-e, e), rng.uniform(-e, e), rng.uniform(cfg.ground_z, cfg.height_max)])


def _corridor_anchor(rng, cfg, corridor, z=None):
    s = rng.uniform(0.0, corridor.length + corridor.lookahead)
    base, tan = corridor.at(s)
    normal = np.array([-tan[1], tan[0], 0.0])
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    lat = rng.uniform(cfg.lateral_min, cfg.lateral_max)
    if z is None:
        z = rng.uniform(cfg.ground_z, cfg.height_max)
    p = base + side * lat * normal
    p[2] = z
    return p, s


def _line_height(rng, cfg):
    """Height for a horizontal line, outside the band around the camera."""
    lo, hi, band = cfg.ground_z, cfg.height_max, cfg.camera_band
    below = max(0.0, -band - lo)
    above = max(0.0, hi - band)
    if rng.uniform() * (below + above) < below:
        return rng.uniform(lo, -band)
    return rng.uniform(band, hi)


def generate_world(cfg: WorldConfig, trajectory=None) -> World:
    """Build a world deterministically from ``cfg.seed``.

    With ``layout='corridor'`` a trajectory is required; landmarks are laid
    out along its path.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    corridor = None
    if cfg.layout == "corridor":
        if trajectory is None:
            raise ValueError("corridor layout needs a trajectory")
        corridor = _Corridor(trajectory, cfg.lookahead)

    def anchor(z=None):
        if corridor is None:
            p = _box_anchor(rng, cfg)
            if z is not None:
                p[2] = z
            return p, None
        return _corridor_anchor(rng, cfg, corridor, z)

    # lines
    l0, l1, axes = [], [], []
    for axis, count in ((0, cfg.lines_x), (1, cfg.lines_y), (2, cfg.lines_z), (-1, cfg.lines_generic)):
        for _ in range(count):
            length = rng.uniform(cfg.line_length_min, cfg.line_length_max)
            if axis == 2:
                p, _ = anchor(cfg.ground_z)
                d = AXES[2]
                start = p
                end = p + d * min(length, cfg.height_max - cfg.ground_z)
            else:
                if axis >= 0:
                    p, _ = anchor(_line_height(rng, cfg))
                    d = AXES[axis]
                else:
                    p, _ = anchor()
                    d = rng.normal(size=3)
                    d /= np.linalg.norm(d)
                    # keep generic lines clear of the pure axis directions
                    while np.max(np.abs(d)) > 0.95:
                        d = rng.normal(size=3)
                        d /= np.linalg.norm(d)
                start = p - 0.5 * length * d
                end = p + 0.5 * length * d
            l0.append(start)
            l1.append(end)
            axes.append(axis)
    line_p0 = np.array(l0, dtype=float).reshape(-1, 3)
    line_p1 = np.array(l1, dtype=float).reshape(-1, 3)
    line_axis = np.array(axes, dtype=int)

    # points on lines (static)
    p_ref, vel, t_ref, dyn, on_line = [], [], [], [], []
    for i in range(len(line_p0)):
        k = int(rng.integers(cfg.points_per_line_min, cfg.points_per_line_max + 1))
        for lam in np.sort(rng.uniform(0.1, 0.9, size=k)):
            p_ref.append(line_p0[i] + lam * (line_p1[i] - line_p0[i]))
            vel.append(np.zeros(3))
            t_ref.append(0.0)
            dyn.append(False)
            on_line.append(i)

    for _ in range(cfg.n_static_points):
        p, _ = anchor()
        p_ref.append(p)
        vel.append(np.zeros(3))
        t_ref.append(0.0)
        dyn.append(False)
        on_line.append(-1)

    for _ in range(cfg.n_dynamic_points):
        p, s = anchor()
        heading = rng.uniform(-np.pi, np.pi)
        speed = rng.uniform(cfg.dynamic_speed_min, cfg.dynamic_speed_max)
        p_ref.append(p)
        vel.append(speed * np.array([np.cos(heading), np.sin(heading), 0.0]))
        t_ref.append(corridor.time_at(s - cfg.dynamic_lead) if corridor is not None else 0.0)
        dyn.append(True)
        on_line.append(-1)

    world = World(
        p_ref=np.array(p_ref, dtype=float).reshape(-1, 3),
        vel=np.array(vel, dtype=float).reshape(-1, 3),
        t_ref=np.array(t_ref, dtype=float),
        dynamic=np.array(dyn, dtype=bool),
        point_line=np.array(on_line, dtype=int),
        line_p0=line_p0, line_p1=line_p1, line_axis=line_axis,
    )
    logger.debug("world: %d points (%d dynamic), %d lines", world.n_points, int(world.dynamic.sum()), world.n_lines)
    return world
