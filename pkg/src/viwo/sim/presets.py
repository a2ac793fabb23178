"""Scenario presets and the top-level simulation config."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import CameraModel
from ..propagation import GRAVITY, OdometerExtrinsics
from .sensors import SimNoise, simulate_sensors
from .trajectory import Segment, Trajectory, TrajectoryConfig
from .world import WorldConfig, generate_world

# forward-looking camera: C z along IMU x, C x along -IMU y, C y along -IMU z
FORWARD_R_ItoC = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]


@dataclass
class CameraConfig:
    fx: float = 460.0
    fy: float = 460.0
    cx: float = 376.0
    cy: float = 240.0
    width: int = 752
    height: int = 480
    R_ItoC: list = field(default_factory=lambda: [list(r) for r in FORWARD_R_ItoC])
    p_IinC: list = field(default_factory=lambda: [0.0, 0.05, -0.1])

    def model(self) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                           np.array(self.R_ItoC, dtype=float), np.array(self.p_IinC, dtype=float))


@dataclass
class OdometerConfig:
    R_ItoO: list = field(default_factory=lambda: np.eye(3).tolist())
    p_IinO: list = field(default_factory=lambda: [0.1, 0.0, 0.3])

    def model(self) -> OdometerExtrinsics:
        return OdometerExtrinsics(np.array(self.R_ItoO, dtype=float), np.array(self.p_IinO, dtype=float))


@dataclass
class SimConfig:
    seed: int = 0
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    noise: SimNoise = field(default_factory=SimNoise)
    camera: CameraConfig = field(default_factory=CameraConfig)
    odometer: OdometerConfig = field(default_factory=OdometerConfig)
    gravity: list = field(default_factory=lambda: GRAVITY.tolist())

    def with_seed(self, seed):
        self.seed = int(seed)
        self.world.seed = int(seed)
        return self


def _turn(radius, speed, angle_deg=90.0):
    return Segment("arc", abs(radius) * math.radians(angle_deg) / speed, radius=radius)


def urban(seed=0) -> SimConfig:
    """About 200 m in 120 s with four 90 degree turns and a stop."""
    v = 1.75
    segs = [Segment("straight", 20.0), _turn(10.0, v), Segment("straight", 20.0), _turn(-10.0, v),
            Segment("straight", 15.0), Segment("stop", 4.0), Segment("straight", 15.0), _turn(10.0, v)]
    segs.append(Segment("straight", 120.0 - sum(s.duration for s in segs)))
    traj = TrajectoryConfig(segments=segs, speed=v, ramp_time=2.0)
    world = WorldConfig(n_static_points=600, lines_x=70, lines_y=70, lines_z=90, lines_generic=20,
                        points_per_line_min=5, points_per_line_max=8)
    return SimConfig(trajectory=traj, world=world).with_seed(seed)


def low_texture(seed=0) -> SimConfig:
    """Same drive as :func:`urban` with few points and a moderate number of lines."""
    cfg = urban(seed)
    cfg.world = WorldConfig(n_static_points=200, lines_x=45, lines_y=45, lines_z=60, lines_generic=10,
                            points_per_line_min=1, points_per_line_max=2)
    cfg.noise.max_points_per_frame = 30
    return cfg.with_seed(seed)


def straight(seed=0) -> SimConfig:
    """100 m straight along G x with many lines parallel to the motion."""
    v = 1.5
    traj = TrajectoryConfig(segments=[Segment("straight", 100.0 / v)], speed=v, ramp_time=2.0)
    world = WorldConfig(n_static_points=500, lines_x=80, lines_y=10, lines_z=30, lines_generic=5,
                        lateral_min=2.0, lateral_max=10.0, line_length_min=4.0, line_length_max=12.0)
    return SimConfig(trajectory=traj, world=world).with_seed(seed)


def dynamic(seed=0) -> SimConfig:
    """Winding drive with 20% independently moving points."""
    v = 1.5
    segs = [Segment("straight", 6.0), _turn(12.0, v, 60), Segment("straight", 6.0), _turn(-12.0, v, 60),
            Segment("straight", 6.0), _turn(12.0, v, 60), Segment("straight", 6.0)]
    traj = TrajectoryConfig(segments=segs, speed=v, ramp_time=2.0)
    world = WorldConfig(n_static_points=480, n_dynamic_points=120, lines_x=0, lines_y=0, lines_z=0,
                        lines_generic=0, lateral_min=1.5, lateral_max=5.0, height_max=3.0)
    cfg = SimConfig(trajectory=traj, world=world)
    cfg.noise.max_depth = 16.0
    return cfg.with_seed(seed)


def small(seed=0) -> SimConfig:
    """Short 20 s loop segment used by quick tests."""
    v = 1.5
    segs = [Segment("straight", 6.0), _turn(8.0, v, 90), Segment("straight", 6.0)]
    traj = TrajectoryConfig(segments=segs, speed=v, ramp_time=2.0)
    world = WorldConfig(n_static_points=300, lines_x=15, lines_y=15, lines_z=20, lines_generic=5)
    return SimConfig(trajectory=traj, world=world).with_seed(seed)


PRESETS = {"urban": urban, "low_texture": low_texture, "straight": straight, "dynamic": dynamic, "small": small}


def preset(name, seed=0) -> SimConfig:
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


def simulate(cfg: SimConfig):
    """Generate trajectory, world and all sensor streams for ``cfg``."""
    traj = Trajectory(cfg.trajectory)
    world = generate_world(cfg.world, traj)
    ds = simulate_sensors(world, traj, cfg.camera.model(), cfg.odometer.model(), cfg.noise, cfg.seed,
                          np.array(cfg.gravity, dtype=float))
    return ds, world, traj
