"""3D line triangulation.

Three methods, tried in order by :func:`triangulate_line`:

1. ``planes``: intersect the back-projected planes of the two best-separated
   observations. Fails when the camera moves parallel to the line, since
   every plane then contains the same camera path.
2. ``two_points``: join two triangulated points assigned to the line.
3. ``point_direction``: one triangulated point plus the IMU axis the line
   was classified against.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import (Degenerate, DegenerateProjection, NoMethodApplicable, PointsTooClose,
                      ResidualTooLarge)
from ..geometry import CameraModel, PluckerLine, cross3
from .measurement import line_batch, orthonormal_plus
from .segments import AxisClass, classify_line, compute_vanishing_points

METHOD_PLANES = "planes"
METHOD_TWO_POINTS = "two_points"
METHOD_POINT_DIRECTION = "point_direction"


def observation_plane(seg, R_GtoC, c_G, cam: CameraModel):
    """Plane ``(a, d)`` with ``a . X + d = 0`` through the camera centre and
    the observed segment; ``a`` is a unit normal in G."""
    hs = seg.homogeneous()
    l = cross3(hs[0], hs[1])
    a = R_GtoC.T @ (cam.K.T @ l)
    a /= np.linalg.norm(a)
    return a, -float(a @ c_G)


def _plane_angle(a1, a2):
    return math.acos(min(1.0, abs(float(a1 @ a2))))


def intersect_planes(a1, d1, a2, d2) -> PluckerLine:
    v = cross3(a1, a2)
    v /= np.linalg.norm(v)
    A = np.vstack([a1, a2])
    x0 = np.linalg.lstsq(A, -np.array([d1, d2]), rcond=None)[0]
    return PluckerLine(cross3(x0, v), v)


def triangulate_line_planes(segs, poses, cam: CameraModel, min_angle_deg=1.0, sigma_px=0.0,
                            min_significance=5.0) -> PluckerLine:
    """``poses`` is a list of ``(R_GtoC, camera centre in G)`` per segment.

    With ``sigma_px > 0`` the plane pair must also be separated by more than
    ``min_significance`` times the angular noise that endpoint jitter induces
    (about ``sqrt(2) sigma / length`` per plane); otherwise noise alone can
    push coincident planes past the fixed angle threshold.
    """
    if len(segs) < 2:
        raise Degenerate("need two observations")
    planes = [observation_plane(s, R, c, cam) for s, (R, c) in zip(segs, poses)]
    noise = [math.sqrt(2.0) * sigma_px / s.length for s in segs]
    best, best_angle, best_score = None, -1.0, -1.0
    for i, j in itertools.combinations(range(len(planes)), 2):
        ang = _plane_angle(planes[i][0], planes[j][0])
        score = ang / math.hypot(noise[i], noise[j]) if sigma_px > 0 else ang
        if score > best_score:
            best, best_angle, best_score = (i, j), ang, score
    if best_angle < math.radians(min_angle_deg):
        raise Degenerate(f"planes separated by {math.degrees(best_angle):.3f} deg")
    if sigma_px > 0 and best_score < min_significance:
        raise Degenerate(f"plane separation {math.degrees(best_angle):.3f} deg is within noise")
    (a1, d1), (a2, d2) = planes[best[0]], planes[best[1]]
    return intersect_planes(a1, d1, a2, d2)


def triangulate_line_two_points(p1, p2, min_separation=0.05) -> PluckerLine:
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    d = p1 - p2
    dist = float(np.linalg.norm(d))
    if dist <= min_separation:
        raise PointsTooClose(f"points {dist:.3g} m apart")
    v = d / dist
    # moment about the origin; n = q x v for any q on the line
    return PluckerLine(cross3(p1, v), v)


def triangulate_line_point_direction(p3, axis: AxisClass, R_GtoI) -> PluckerLine:
    if axis is AxisClass.UNCLASSIFIED:
        raise ValueError("line direction is unknown for unclassified lines")
    v = np.asarray(R_GtoI).T[:, axis.value].copy()
    return PluckerLine(cross3(np.asarray(p3, dtype=float), v), v)


@dataclass
class LineConfig:
    e_angle_max_deg: float = 2.0
    e_dist_max: float = 5.0
    assign_max_dist: float = 3.0
    match_pos_thresh: float = 30.0
    match_dir_thresh_deg: float = 5.0
    min_length: float = 40.0
    plane_min_angle_deg: float = 1.0
    plane_noise_px: float = 1.0       # endpoint noise assumed by the plane degeneracy test
    plane_min_significance: float = 5.0
    min_assign_fraction: float = 0.5  # of a track's observations a point must be assigned in
    axis_check_deg: float = 5.0       # two-point lines must agree with a classified axis
    max_residual: float = 5.0
    min_track_length: int = 3
    max_lines: int = 50
    chi2_multiplier: float = 1.0
    refine_iterations: int = 5


@dataclass
class CascadeResult:
    line: PluckerLine | None = None
    method: str | None = None
    plane_degenerate: bool = False
    n_points: int = 0
    axis: AxisClass = AxisClass.UNCLASSIFIED
    mean_residual: float = math.inf
    error: str | None = None
    tried: list = field(default_factory=list)


def _stack(segs, clone_poses):
    Rs = np.array([R for R, _ in clone_poses], dtype=float)
    ps = np.array([p for _, p in clone_poses], dtype=float)
    P = np.array([seg.homogeneous() for seg in segs])
    return Rs, ps, P


def mean_line_residual(L, segs, clone_poses, cam):
    """Mean absolute endpoint distance (px) over all observations."""
    Rs, ps, P = _stack(segs, clone_poses)
    try:
        d, _, _ = line_batch(L, Rs, ps, cam, P, jacobians=False)
    except DegenerateProjection:
        return math.inf
    return float(np.mean(np.abs(d)))


def _in_front(L, segs, clone_poses, cam):
    """True if the line points seen at every observed endpoint lie in front
    of the camera (ray/line closest-approach depth is positive)."""
    q0 = L.closest_point()
    Kinv = np.linalg.inv(cam.K)
    for seg, (R, p) in zip(segs, clone_poses):
        R_CtoG = (cam.R_ItoC @ R).T
        c = p + R.T @ cam.p_CinI
        w0 = c - q0
        for x in seg.homogeneous():
            b = R_CtoG @ (Kinv @ x)
            bb = float(b @ L.v)
            denom = float(b @ b) - bb * bb
            if denom <= 1e-12 * float(b @ b):
                continue
            t = (bb * float(L.v @ w0) - float(b @ w0)) / denom
            if t <= 0.0:
                return False
    return True


def refine_line(L, segs, clone_poses, cam, iterations=5):
    """Levenberg-Marquardt on endpoint distances over the orthonormal chart."""
    Rs, ps, P = _stack(segs, clone_poses)

    def cost(line):
        try:
            d, _, _ = line_batch(line, Rs, ps, cam, P, jacobians=False)
        except DegenerateProjection:
            return math.inf
        return float(np.sum(d * d))

    c0 = cost(L)
    lam = 1e-3
    for _ in range(iterations):
        try:
            d, _, Hl = line_batch(L, Rs, ps, cam, P)
        except DegenerateProjection:
            break
        J = Hl.reshape(-1, 4)
        r = d.reshape(-1)
        A = J.T @ J
        g = J.T @ r
        improved = False
        for _ in range(6):
            try:
                step = -np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-12), g)
            except np.linalg.LinAlgError:
                break
            L2 = orthonormal_plus(L, step)
            c2 = cost(L2)
            if c2 < c0:
                L, c0, lam = L2, c2, max(lam / 10.0, 1e-9)
                improved = True
                break
            lam *= 10.0
        if not improved or c0 < 1e-24:
            break
    return L


def triangulate_line_detailed(segs, clone_poses, cam: CameraModel, points=None, axis_obs=None,
                              cfg: LineConfig = LineConfig(), support=None) -> CascadeResult:
    """Run the triangulation cascade and report what happened.

    ``clone_poses`` holds ``(R_GtoI, p_IinG)`` per segment. ``points`` maps
    assigned point ids to triangulated positions in G. ``axis_obs`` is an
    optional ``(AxisClass, R_GtoI)`` anchor; when omitted, the first segment
    that classifies against an IMU axis provides it. ``support`` maps point
    ids to the number of observations they were assigned in and ranks the
    points for the two point-based methods.
    """
    res = CascadeResult()
    points = points or {}
    res.n_points = len(points)
    poses_c = [(cam.R_ItoC @ R, p + R.T @ cam.p_CinI) for R, p in clone_poses]

    candidates = []
    try:
        candidates.append((METHOD_PLANES, triangulate_line_planes(segs, poses_c, cam, cfg.plane_min_angle_deg,
                                                                  cfg.plane_noise_px, cfg.plane_min_significance)))
    except Degenerate:
        res.plane_degenerate = True

    c_last = poses_c[-1][1]
    support = support or {}
    # most consistently assigned points first, then nearest
    ordered = sorted(points.items(), key=lambda kv: (-support.get(kv[0], 0),
                                                     float(np.linalg.norm(kv[1] - c_last)), kv[0]))
    if points:
        if axis_obs is None:
            axis_obs = _first_axis(segs, clone_poses, cam, cfg)
        if axis_obs is not None:
            res.axis = axis_obs[0]

    if len(points) >= 2:
        v_axis = None
        if axis_obs is not None:
            v_axis = np.asarray(axis_obs[1]).T[:, axis_obs[0].value]
        for (_, p1), (_, p2) in itertools.combinations(ordered, 2):
            try:
                L = triangulate_line_two_points(p1, p2)
            except PointsTooClose:
                continue
            if v_axis is not None and abs(float(L.v @ v_axis)) < math.cos(math.radians(cfg.axis_check_deg)):
                continue
            candidates.append((METHOD_TWO_POINTS, L))
            break

    if points and axis_obs is not None:
        candidates.append((METHOD_POINT_DIRECTION,
                           triangulate_line_point_direction(ordered[0][1], axis_obs[0], axis_obs[1])))

    if not candidates:
        res.error = "no_method"
        return res
    for method, L in candidates:
        res.tried.append(method)
        if cfg.refine_iterations > 0:
            L = refine_line(L, segs, clone_poses, cam, cfg.refine_iterations)
        L = L.normalized()
        if not _in_front(L, segs, clone_poses, cam):
            continue
        r = mean_line_residual(L, segs, clone_poses, cam)
        if r <= cfg.max_residual:
            res.line, res.method, res.mean_residual = L, method, r
            return res
        res.mean_residual = min(res.mean_residual, r)
    res.error = "residual"
    return res


def _first_axis(segs, clone_poses, cam, cfg):
    vps = compute_vanishing_points(cam)
    for seg, (R, _) in zip(segs, clone_poses):
        a = classify_line(seg, vps, math.radians(cfg.e_angle_max_deg), cfg.e_dist_max)
        if a is not AxisClass.UNCLASSIFIED:
            return a, R
    return None


def triangulate_line(segs, clone_poses, cam, points=None, axis_obs=None, cfg: LineConfig = LineConfig()):
    """Cascade triangulation; raises ``NoMethodApplicable`` or ``ResidualTooLarge``."""
    res = triangulate_line_detailed(segs, clone_poses, cam, points, axis_obs, cfg)
    if res.line is not None:
        return res.line, res.method
    if res.error == "no_method":
        raise NoMethodApplicable("no triangulation method applies")
    raise ResidualTooLarge(f"mean residual {res.mean_residual:.2f} px")
