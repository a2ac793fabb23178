"""Deterministic simulator: trajectories, worlds and sensor streams."""

from ..dataset import Dataset as SimDataset
from .presets import PRESETS, CameraConfig, OdometerConfig, SimConfig, preset, simulate
from .sensors import SimNoise, render_segment, simulate_sensors
from .trajectory import Segment, Trajectory, TrajectoryConfig, generate_trajectory
from .world import World, WorldConfig, generate_world


__all__ = [
    "PRESETS", "CameraConfig", "OdometerConfig", "Segment", "SimConfig", "SimDataset", "SimNoise", "Trajectory",
    "TrajectoryConfig", "World", "WorldConfig", "generate_trajectory", "generate_world", "preset",
    "render_segment", "simulate", "simulate_sensors",
]
