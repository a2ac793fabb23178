"""Rotations, rigid transforms and pinhole projection of points and lines.

Conventions used everywhere in the package:

* Rotations are plain 3x3 ``numpy`` arrays. ``R_AtoB`` maps a vector
  expressed in frame A into frame B.
* A :class:`Pose` ``(R, p)`` for the map A -> B stores ``R = R_AtoB`` and the
  position of B's origin expressed in A, so ``x_B = R @ (x_A - p)``.
* Small rotation errors are left-multiplicative on the G->I rotation:
  ``R_true = (I - [dtheta]x) R_est``.
* Plücker lines are ``(n, v)`` with ``n = q x v`` for any point ``q`` on the
  line and ``|v| = 1``.
* Pixel coordinates are undistorted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProjection, NonPositiveDepth

EPS_DEPTH = 1e-4

_I3 = np.eye(3)


def cross3(a, b):
    """Cross product of two 3-vectors (much cheaper than ``np.cross`` for one pair)."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def skew(x):
    """Return the matrix ``[x]x`` with ``skew(x) @ y == cross(x, y)``."""
    return np.array([[0.0, -x[2], x[1]],
                     [x[2], 0.0, -x[0]],
                     [-x[1], x[0], 0.0]])


def exp_so3(phi):
    """Rodrigues' formula."""
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    K = skew(phi)
    if theta < 1e-8:
        return _I3 + K + 0.5 * (K @ K)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return _I3 + a * K + b * (K @ K)


def log_so3(R):
    """Inverse of :func:`exp_so3` for rotation angles in [0, pi)."""
    cos_t = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    theta = math.acos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if math.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        M = 0.5 * (R + _I3)
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / math.sqrt(max(M[k, k], 1e-300))
        if axis @ w < 0:
            axis = -axis
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * math.sin(theta)) * w


def right_jacobian(phi):
    """Right Jacobian of SO(3): ``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-6:
        return _I3 - 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (_I3 - (1.0 - math.cos(theta)) / t2 * K
            + (theta - math.sin(theta)) / (t2 * theta) * (K @ K))


def normalize_rotation(R):
    """Project a near-rotation back onto SO(3)."""
    U, _, Vt = np.linalg.svd(R)
    M = U @ Vt
    if np.linalg.det(M) < 0:
        U[:, -1] *= -1.0
        M = U @ Vt
    return M


def rot_z(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(pitch):
    c, s = math.cos(pitch), math.sin(pitch)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform A -> B: rotation ``R_AtoB`` and B's origin in A."""

    R: np.ndarray
    p: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, x):
        return self.R @ (np.asarray(x) - self.p)

    def compose(self, other: "Pose") -> "Pose":
        """``self o other``: first ``other`` (A->B), then ``self`` (B->C)."""
        return Pose(self.R @ other.R, other.p + other.R.T @ self.p)

    def inverse(self) -> "Pose":
        return Pose(self.R.T.copy(), -self.R @ self.p)


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R_ItoC: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_IinC: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        object.__setattr__(self, "R_ItoC", np.asarray(self.R_ItoC, dtype=float))
        object.__setattr__(self, "p_IinC", np.asarray(self.p_IinC, dtype=float))

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_line(self):
        return line_projection_matrix(self)

    @property
    def p_CinI(self):
        """Camera origin expressed in the IMU frame."""
        return -self.R_ItoC.T @ self.p_IinC

    def camera_pose(self, R_GtoI, p_IinG) -> Pose:
        """Pose G -> C for an IMU pose given as (R_GtoI, p_IinG)."""
        R_GtoC = self.R_ItoC @ R_GtoI
        p_CinG = p_IinG + R_GtoI.T @ self.p_CinI
        return Pose(R_GtoC, p_CinG)

    def in_image(self, uv, margin=0.0):
        return (margin <= uv[0] <= self.width - margin) and (margin <= uv[1] <= self.height - margin)

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "R_ItoC": np.asarray(self.R_ItoC).tolist(),
            "p_IinC": np.asarray(self.p_IinC).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]),
                   np.array(d["R_ItoC"], dtype=float), np.array(d["p_IinC"], dtype=float))


@dataclass(frozen=True, eq=False)
class PluckerLine:
    """3D line with moment ``n`` and unit direction ``v``."""

    n: np.ndarray
    v: np.ndarray

    @classmethod
    def from_point_direction(cls, q, d):
        d = np.asarray(d, dtype=float)
        v = d / np.linalg.norm(d)
        return cls(cross3(q, v), v)

    def normalized(self) -> "PluckerLine":
        """Rescale to ``|v| = 1`` and strip any component of n along v."""
        s = np.linalg.norm(self.v)
        v = self.v / s
        n = self.n / s
        return PluckerLine(n - (n @ v) * v, v)

    def closest_point(self):
        """Point of the line nearest to the origin (``v x n`` for unit v)."""
        return cross3(self.v, self.n) / (self.v @ self.v)

    def as_vector(self):
        return np.concatenate([self.n, self.v])


def project_point(p_C, cam: CameraModel, eps_depth=EPS_DEPTH):
    x, y, z = p_C
    if z <= eps_depth:
        raise NonPositiveDepth(f"depth {z:.3g} <= {eps_depth}")
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])


def transform_plucker(T: Pose, L: PluckerLine) -> PluckerLine:
    """Express a line given in frame A in frame B, for ``T`` mapping A -> B."""
    R = T.R
    v = R @ L.v
    n = R @ (L.n - cross3(T.p, L.v))
    return PluckerLine(n, v)


def line_projection_matrix(cam: CameraModel):
    fx, fy, cx, cy = cam.fx, cam.fy, cam.cx, cam.cy
    return np.array([[fy, 0.0, 0.0],
                     [0.0, fx, 0.0],
                     [-fy * cx, -fx * cy, fx * fy]])


def project_line(L_C: PluckerLine, cam: CameraModel):
    """Image line ``l`` (homogeneous, pixels) of a line given in camera frame."""
    if np.linalg.norm(L_C.n) < 1e-12:
        raise DegenerateProjection("line passes through the camera centre")
    return line_projection_matrix(cam) @ L_C.n


def homogeneous(uv):
    return np.array([uv[0], uv[1], 1.0])
