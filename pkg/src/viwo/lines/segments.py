"""2D line processing: vanishing-point classification, point-line assignment
and descriptor-free line matching."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..geometry import CameraModel

VP_INFINITY_EPS = 1e-8


class AxisClass(enum.Enum):
    X = 0
    Y = 1
    Z = 2
    UNCLASSIFIED = -1


AXES = (AxisClass.X, AxisClass.Y, AxisClass.Z)


@dataclass(frozen=True, eq=False)
class LineSegment2D:
    id: int
    t: float
    ps: np.ndarray
    pe: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ps", np.asarray(self.ps, dtype=float))
        object.__setattr__(self, "pe", np.asarray(self.pe, dtype=float))
        if np.array_equal(self.ps, self.pe):
            raise ValueError(f"segment {self.id}: start and end points coincide")

    @property
    def midpoint(self):
        return 0.5 * (self.ps + self.pe)

    @property
    def length(self):
        return float(np.linalg.norm(self.pe - self.ps))

    def homogeneous(self):
        """Endpoints as a (2, 3) array of homogeneous pixel coordinates."""
        return np.array([[self.ps[0], self.ps[1], 1.0], [self.pe[0], self.pe[1], 1.0]])


@dataclass(frozen=True, eq=False)
class VanishingPoints:
    vp_x: np.ndarray
    vp_y: np.ndarray
    vp_z: np.ndarray

    def __getitem__(self, axis: AxisClass):
        return (self.vp_x, self.vp_y, self.vp_z)[axis.value]


def compute_vanishing_points(cam: CameraModel, R_GtoI=None) -> VanishingPoints:
    """Homogeneous image vanishing points of the IMU axes.

    With ``R_GtoI`` the global axes are used instead. Points are not
    dehomogenised, so axes parallel to the image plane stay at infinity.
    """
    R = cam.R_ItoC if R_GtoI is None else cam.R_ItoC @ R_GtoI
    K = cam.K
    return VanishingPoints(*(K @ R[:, a] for a in range(3)))


def _wrap_half_pi(a):
    a = abs(a) % math.pi
    return min(a, math.pi - a)


def line_errors(seg: LineSegment2D, vp):
    """Angle error (rad, in [0, pi/2]) and mean endpoint distance (px) between
    the segment and the line joining its midpoint to ``vp``."""
    vp = np.asarray(vp, dtype=float)
    pm = seg.midpoint
    d = seg.pe - seg.ps
    if abs(vp[2]) < VP_INFINITY_EPS:
        dv = vp[:2]
    else:
        dv = vp[:2] / vp[2] - pm
    if dv[0] == 0.0 and dv[1] == 0.0:
        return math.inf, math.inf
    e_angle = _wrap_half_pi(math.atan2(d[1], d[0]) - math.atan2(dv[1], dv[0]))
    n = np.cross(np.array([pm[0], pm[1], 1.0]), vp)
    s = math.hypot(n[0], n[1])
    if s == 0.0:
        return math.inf, math.inf
    hs = seg.homogeneous()
    e_dist = (abs(hs[0] @ n) + abs(hs[1] @ n)) / (2.0 * s)
    return e_angle, e_dist


def classify_line(seg: LineSegment2D, vps: VanishingPoints, e_angle_max=math.radians(2.0), e_dist_max=5.0):
    best, best_angle = AxisClass.UNCLASSIFIED, math.inf
    for axis in AXES:
        e_angle, e_dist = line_errors(seg, vps[axis])
        if e_angle <= e_angle_max and e_dist <= e_dist_max and e_angle < best_angle:
            best, best_angle = axis, e_angle
    return best


def _segment_terms(p, ps, pe):
    d = pe - ps
    len2 = float(d @ d)
    cross = float(d @ (np.asarray(p) - ps))
    return cross, len2


def point_segment_distance(p, ps, pe):
    p = np.asarray(p, dtype=float)
    ps = np.asarray(ps, dtype=float)
    pe = np.asarray(pe, dtype=float)
    cross, len2 = _segment_terms(p, ps, pe)
    if cross <= 0.0:
        return float(math.hypot(p[0] - ps[0], p[1] - ps[1]))
    if cross > len2:
        return float(math.hypot(p[0] - pe[0], p[1] - pe[1]))
    num = abs((pe[1] - ps[1]) * p[0] + (ps[0] - pe[0]) * p[1] + (pe[0] * ps[1] - ps[0] * pe[1]))
    return float(num / math.sqrt(len2))


def point_line_distance(p, seg: LineSegment2D):
    return point_segment_distance(p, seg.ps, seg.pe)


def assign_points(segments, points, max_dist=3.0):
    """Map segment id -> sorted ids of points lying on it.

    ``points`` maps point id -> (u, v). A point is on a segment when its
    projection falls between the endpoints and its distance is below
    ``max_dist``.
    """
    out = {seg.id: [] for seg in segments}
    if not points:
        return out
    ids = np.array(sorted(points))
    P = np.array([points[i] for i in ids], dtype=float)
    for seg in segments:
        d = seg.pe - seg.ps
        len2 = d @ d
        rel = P - seg.ps
        cross = rel @ d
        perp = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / math.sqrt(len2)
        ok = (cross >= 0.0) & (cross <= len2) & (perp < max_dist)
        out[seg.id] = [int(i) for i in ids[ok]]
    return out


def _undirected_angle(d1, d2):
    return _wrap_half_pi(math.atan2(d1[1], d1[0]) - math.atan2(d2[1], d2[0]))


def match_lines(prev, cur, pos_thresh=30.0, dir_thresh_deg=5.0, correspondences=None):
    """One-to-one matches between segments of two adjacent frames.

    ``prev`` and ``cur`` are sequences of ``(LineSegment2D, assigned point
    ids)``. ``correspondences`` maps a previous-frame point id to its
    current-frame id (identity when omitted, i.e. ids come from point
    tracking). Returns sorted ``(prev_segment_id, cur_segment_id)`` pairs.
    """
    dir_thresh = math.radians(dir_thresh_deg)
    cur_sets = [(seg, set(ids)) for seg, ids in cur]
    cands = []
    for sa, ids_a in prev:
        mapped = set(ids_a) if correspondences is None else {correspondences[i] for i in ids_a if i in correspondences}
        if not mapped:
            continue
        for sb, ids_b in cur_sets:
            shared = len(mapped & ids_b)
            if shared == 0:
                continue
            dist = float(np.linalg.norm(sa.midpoint - sb.midpoint))
            if shared == 1:
                if dist > pos_thresh or _undirected_angle(sa.pe - sa.ps, sb.pe - sb.ps) > dir_thresh:
                    continue
            cands.append((-shared, dist, sa.id, sb.id))
    cands.sort()
    used_a, used_b, matches = set(), set(), []
    for _, _, a, b in cands:
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        matches.append((a, b))
    return sorted(matches)
