"""Dataset directory format, ingestion and serialization.

A dataset directory holds::

    imu.csv            t,wx,wy,wz,ax,ay,az
    wheel.csv          t,vx,wz
    point_tracks.csv   t,feature_id,u,v
    line_segments.csv  t,line_id,us,vs,ue,ve
    groundtruth.txt    TUM poses of the IMU in the world frame
    calib.yaml         camera, odometer extrinsics, gravity, initial state

and optionally ``sim_truth/points.csv`` and ``sim_truth/lines.csv`` written
by the simulator (ignored by the estimator). Floats are written with
``repr`` so a write/read cycle is lossless.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from .errors import MissingFile, NonMonotonicTimestamps, ParseError
from .geometry import CameraModel
from .propagation import GRAVITY, ImuSample, OdometerExtrinsics, WheelSample

logger = logging.getLogger(__name__)

IMU_FILE = "imu.csv"
WHEEL_FILE = "wheel.csv"
POINTS_FILE = "point_tracks.csv"
LINES_FILE = "line_segments.csv"
GT_FILE = "groundtruth.txt"
CALIB_FILE = "calib.yaml"
TRUTH_DIR = "sim_truth"

IMU_COLS = ("t", "wx", "wy", "wz", "ax", "ay", "az")
WHEEL_COLS = ("t", "vx", "wz")
POINT_COLS = ("t", "feature_id", "u", "v")
LINE_COLS = ("t", "line_id", "us", "vs", "ue", "ve")
TRUTH_POINT_COLS = ("id", "x", "y", "z", "vx", "vy", "vz", "t_ref", "dynamic", "line_id")
TRUTH_LINE_COLS = ("id", "x0", "y0", "z0", "x1", "y1", "z1", "axis")

# event kinds, in processing order for equal timestamps
EV_IMU, EV_WHEEL, EV_FRAME = 0, 1, 2


@dataclass
class InitialState:
    t: float
    p: np.ndarray
    q: np.ndarray  # xyzw, orientation of the IMU in G
    v: np.ndarray

    @property
    def R_GtoI(self):
        return Rotation.from_quat(self.q).as_matrix().T

    def to_dict(self):
        return {"t": float(self.t), "p": [float(x) for x in self.p], "q": [float(x) for x in self.q],
                "v": [float(x) for x in self.v]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["t"]), np.array(d["p"], dtype=float), np.array(d["q"], dtype=float),
                   np.array(d["v"], dtype=float))


@dataclass
class Calibration:
    camera: CameraModel
    odometer: OdometerExtrinsics
    initial: InitialState
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def to_dict(self):
        return {"camera": self.camera.to_dict(), "odometer": self.odometer.to_dict(),
                "gravity": [float(x) for x in self.gravity], "initial_state": self.initial.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(CameraModel.from_dict(d["camera"]), OdometerExtrinsics.from_dict(d["odometer"]),
                   InitialState.from_dict(d["initial_state"]),
                   np.array(d.get("gravity", GRAVITY), dtype=float))


@dataclass
class Frame:
    t: float
    point_ids: np.ndarray
    uvs: np.ndarray      # (k, 2)
    line_ids: np.ndarray
    segments: np.ndarray  # (m, 4) us, vs, ue, ve


@dataclass
class Dataset:
    """All streams of one recording, as arrays in file column order."""

    imu: np.ndarray          # (N, 7)
    wheel: np.ndarray        # (M, 3)
    points: np.ndarray       # (K, 4)
    lines: np.ndarray        # (L, 6)
    groundtruth: np.ndarray  # (G, 8) TUM rows
    calib: Calibration
    truth_points: np.ndarray | None = None
    truth_lines: np.ndarray | None = None

    def imu_samples(self):
        return [ImuSample(float(r[0]), r[1:4], r[4:7]) for r in self.imu]

    def wheel_samples(self):
        return [WheelSample(float(r[0]), float(r[1]), float(r[2])) for r in self.wheel]

    def frames(self):
        """Per-frame observations, in time order."""
        tp = self.points[:, 0] if len(self.points) else np.zeros(0)
        tl = self.lines[:, 0] if len(self.lines) else np.zeros(0)
        times = np.unique(np.concatenate([tp, tl]))
        ip = np.searchsorted(tp, times, side="left")
        jp = np.searchsorted(tp, times, side="right")
        il = np.searchsorted(tl, times, side="left")
        jl = np.searchsorted(tl, times, side="right")
        out = []
        for k, t in enumerate(times):
            P = self.points[ip[k]:jp[k]]
            L = self.lines[il[k]:jl[k]]
            out.append(Frame(float(t), P[:, 1].astype(int), P[:, 2:4], L[:, 1].astype(int), L[:, 2:6]))
        return out

    def events(self):
        """Merged time-ordered stream of ``(t, kind, payload)`` tuples.

        Equal timestamps are ordered IMU, wheel, frame so that a frame is
        processed with the IMU data up to and including its timestamp.
        """
        ev = [(s.t, EV_IMU, s) for s in self.imu_samples()]
        ev += [(s.t, EV_WHEEL, s) for s in self.wheel_samples()]
        ev += [(f.t, EV_FRAME, f) for f in self.frames()]
        ev.sort(key=lambda e: (e[0], e[1]))
        return ev

    def write(self, path):
        os.makedirs(path, exist_ok=True)
        _write_csv(os.path.join(path, IMU_FILE), IMU_COLS, self.imu)
        _write_csv(os.path.join(path, WHEEL_FILE), WHEEL_COLS, self.wheel)
        _write_csv(os.path.join(path, POINTS_FILE), POINT_COLS, self.points, int_cols=(1,))
        _write_csv(os.path.join(path, LINES_FILE), LINE_COLS, self.lines, int_cols=(1,))
        write_tum(os.path.join(path, GT_FILE), self.groundtruth, fmt=repr)
        with open(os.path.join(path, CALIB_FILE), "w") as f:
            yaml.safe_dump(self.calib.to_dict(), f, sort_keys=True)
        if self.truth_points is not None:
            os.makedirs(os.path.join(path, TRUTH_DIR), exist_ok=True)
            _write_csv(os.path.join(path, TRUTH_DIR, "points.csv"), TRUTH_POINT_COLS, self.truth_points,
                       int_cols=(0, 8, 9))
            _write_csv(os.path.join(path, TRUTH_DIR, "lines.csv"), TRUTH_LINE_COLS, self.truth_lines,
                       int_cols=(0, 7))


def _fmt(x, is_int):
    return str(int(x)) if is_int else repr(float(x))


def _write_csv(fname, cols, rows, int_cols=()):
    with open(fname, "w") as f:
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join(_fmt(x, i in int_cols) for i, x in enumerate(r)) + "\n")


def _read_csv(fname, cols, int_cols=(), strict=True, allow_equal=False):
    """Parse a CSV with a fixed header. Time (column 0) must be strictly
    increasing, or non-decreasing when ``allow_equal``."""
    if not os.path.isfile(fname):
        raise MissingFile(fname)
    name = os.path.basename(fname)
    with open(fname) as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(name, 1, "empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if tuple(header) != tuple(cols):
        raise ParseError(name, 1, f"expected header {','.join(cols)}")
    out = np.empty((len(lines) - 1, len(cols)))
    last = -np.inf
    for k, line in enumerate(lines[1:]):
        lineno = k + 2
        parts = line.split(",")
        if len(parts) != len(cols):
            raise ParseError(name, lineno, f"expected {len(cols)} fields, got {len(parts)}")
        try:
            row = [int(p) if i in int_cols else float(p) for i, p in enumerate(parts)]
        except ValueError as e:
            raise ParseError(name, lineno, str(e)) from None
        if strict and not np.all(np.isfinite(row)):
            raise ParseError(name, lineno, "non-finite value")
        t = row[0]
        if t < last or (t == last and not allow_equal):
            raise NonMonotonicTimestamps(name, lineno)
        last = t
        out[k] = row
    return out


def write_tum(fname, rows, fmt=None, comment=None):
    """Write ``t px py pz qx qy qz qw`` rows. ``fmt`` formats each float
    (default ``%.9f``)."""
    fmt = fmt or (lambda x: "%.9f" % x)
    with open(fname, "w") as f:
        if comment:
            f.write(f"# {comment}\n")
        for r in rows:
            f.write(" ".join(fmt(float(x)) for x in r) + "\n")


def read_tum(fname):
    if not os.path.isfile(fname):
        raise MissingFile(fname)
    name = os.path.basename(fname)
    rows = []
    last = -np.inf
    with open(fname) as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 8:
                raise ParseError(name, lineno, f"expected 8 fields, got {len(parts)}")
            try:
                row = [float(p) for p in parts]
            except ValueError as e:
                raise ParseError(name, lineno, str(e)) from None
            if not np.all(np.isfinite(row)):
                raise ParseError(name, lineno, "non-finite value")
            if abs(np.linalg.norm(row[4:]) - 1.0) > 1e-6:
                raise ParseError(name, lineno, "quaternion is not unit norm")
            if row[0] <= last:
                raise NonMonotonicTimestamps(name, lineno)
            last = row[0]
            rows.append(row)
    return np.array(rows, dtype=float).reshape(-1, 8)


def ingest_dataset(path) -> Dataset:
    """Load and validate a dataset directory."""
    if not os.path.isdir(path):
        raise MissingFile(path)
    imu = _read_csv(os.path.join(path, IMU_FILE), IMU_COLS)
    wheel = _read_csv(os.path.join(path, WHEEL_FILE), WHEEL_COLS)
    points = _read_csv(os.path.join(path, POINTS_FILE), POINT_COLS, int_cols=(1,), allow_equal=True)
    lines = _read_csv(os.path.join(path, LINES_FILE), LINE_COLS, int_cols=(1,), allow_equal=True)
    gt = read_tum(os.path.join(path, GT_FILE))
    cfile = os.path.join(path, CALIB_FILE)
    if not os.path.isfile(cfile):
        raise MissingFile(cfile)
    try:
        with open(cfile) as f:
            calib = Calibration.from_dict(yaml.safe_load(f))
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as e:
        raise ParseError(CALIB_FILE, 0, f"bad calibration: {e}") from None
    for name, arr, k in ((IMU_FILE, imu, 7), (WHEEL_FILE, wheel, 3)):
        if len(arr) == 0:
            raise ParseError(name, 2, "no samples")
    ds = Dataset(imu, wheel, points, lines, gt, calib)
    tdir = os.path.join(path, TRUTH_DIR)
    if os.path.isdir(tdir):
        ds.truth_points = _read_csv(os.path.join(tdir, "points.csv"), TRUTH_POINT_COLS, int_cols=(0, 8, 9),
                                    allow_equal=True, strict=True)
        ds.truth_lines = _read_csv(os.path.join(tdir, "lines.csv"), TRUTH_LINE_COLS, int_cols=(0, 7),
                                   allow_equal=True)
    logger.info("loaded %s: %d imu, %d wheel, %d point obs, %d line obs", path, len(imu), len(wheel),
                len(points), len(lines))
    return ds
