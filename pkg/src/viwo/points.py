"""Point features: triangulation, motion consistency check and MSCKF update."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (BehindCamera, GateRejected, IllConditioned, InsufficientBaseline, NonPositiveDepth,
                     RankDeficientNoNull, TriangulationError)
from .geometry import CameraModel, skew
from .state import CLONE_DIM, FilterState, StackedResidual, chi2_gate, ekf_update, nullspace_project

logger = logging.getLogger(__name__)


class TrackStatus(enum.Enum):
    ACTIVE = "active"
    TRIANGULATED = "triangulated"
    REJECTED_MCC = "rejected_mcc"
    REJECTED_TRIANGULATION = "rejected_triangulation"
    REJECTED_GATE = "rejected_gate"
    USED = "used"


@dataclass
class PointTrack:
    id: int
    times: list = field(default_factory=list)
    uvs: list = field(default_factory=list)
    status: TrackStatus = TrackStatus.ACTIVE

    def add(self, t, uv):
        if self.times and t <= self.times[-1]:
            raise ValueError(f"track {self.id}: observation times must increase")
        self.times.append(t)
        self.uvs.append(np.asarray(uv, dtype=float))

    def __len__(self):
        return len(self.times)

    def prune_before(self, t):
        k = 0
        while k < len(self.times) and self.times[k] < t:
            k += 1
        del self.times[:k]
        del self.uvs[:k]


@dataclass
class TriangulatedPoint:
    p: np.ndarray
    condition: float
    avg_reproj: float


@dataclass
class PointConfig:
    min_baseline: float = 0.05
    max_condition: float = 1e4
    max_distance: float = 200.0
    gn_iterations: int = 5
    mcc_threshold: float = 3.0
    min_track_length: int = 3
    max_points: int = 150
    chi2_multiplier: float = 1.0


class CloneCameras:
    """Camera rotations ``R_GtoC`` and centres in G for every clone, stacked.

    Built once per update so per-track work is plain fancy indexing.
    """

    def __init__(self, state: FilterState, cam: CameraModel):
        n = len(state.clones)
        self.R_GtoI = np.array([c.R for c in state.clones]).reshape(n, 3, 3)
        self.p = np.array([c.p for c in state.clones]).reshape(n, 3)
        self.R = np.einsum("ij,kjl->kil", cam.R_ItoC, self.R_GtoI)
        self.c = self.p + np.einsum("kji,j->ki", self.R_GtoI, cam.p_CinI)
        self.index = state._index

    def take(self, times):
        idx = [self.index[t] for t in times]
        return self.R[idx], self.c[idx]


def _camera_poses(state, times, cam, cams: CloneCameras | None = None):
    """Stacked ``R_GtoC`` (m,3,3) and camera centres (m,3) for clone times."""
    cams = cams or CloneCameras(state, cam)
    return cams.take(times)


def _project_many(p, Rs, cs, cam):
    pc = np.einsum("...kij,...kj->...ki", Rs, p[..., None, :] - cs)
    z = pc[..., 2]
    uv = np.stack([cam.fx * pc[..., 0] / z + cam.cx, cam.fy * pc[..., 1] / z + cam.cy], axis=-1)
    return uv, pc


def triangulate_batch(uvs, Rs, cs, cam, cfg: PointConfig = PointConfig()):
    """Triangulate ``G`` tracks of equal length ``m`` at once.

    ``uvs`` (G,m,2), ``Rs`` (G,m,3,3) camera rotations ``R_GtoC`` and ``cs``
    (G,m,3) camera centres. Returns a list holding a
    :class:`TriangulatedPoint` or the :class:`TriangulationError` for each.
    Midpoint solution refined by Gauss-Newton on pixel error.
    """
    uvs = np.asarray(uvs, dtype=float)
    G, m = uvs.shape[:2]
    out = [None] * G
    if m < 2:
        return [InsufficientBaseline("need at least two observations") for _ in range(G)]
    baseline = np.max(np.linalg.norm(cs - cs[:, :1], axis=2), axis=1)
    rays_c = np.stack([(uvs[..., 0] - cam.cx) / cam.fx, (uvs[..., 1] - cam.cy) / cam.fy, np.ones((G, m))], axis=2)
    b = np.einsum("gkji,gkj->gki", Rs, rays_c)
    b /= np.linalg.norm(b, axis=2)[..., None]
    A_k = np.eye(3) - b[..., :, None] * b[..., None, :]
    A = A_k.sum(axis=1)
    rhs = np.einsum("gkij,gkj->gi", A_k, cs)
    # condition number of the stacked system [I - b b^T]_k p = [I - b b^T]_k c_k,
    # i.e. the square root of that of its normal matrix A
    ev = np.linalg.eigvalsh(A)
    cond = np.sqrt(ev[:, -1] / np.maximum(ev[:, 0], 1e-300))
    ok = np.ones(G, dtype=bool)
    for g in range(G):
        if baseline[g] < cfg.min_baseline:
            out[g] = InsufficientBaseline(f"baseline {baseline[g]:.3g} m < {cfg.min_baseline}")
        elif not cond[g] <= cfg.max_condition:
            out[g] = IllConditioned(f"condition number {cond[g]:.3g}")
        ok[g] = out[g] is None
    if not ok.any():
        return out
    sel = np.nonzero(ok)[0]
    uvs, Rs, cs = uvs[sel], Rs[sel], cs[sel]
    p = np.linalg.solve(A[sel], rhs[sel][..., None])[..., 0]

    fx, fy = cam.fx, cam.fy
    active = np.ones(len(sel), dtype=bool)
    for _ in range(cfg.gn_iterations):
        uv_hat, pc = _project_many(p, Rs, cs, cam)
        z = pc[..., 2]
        active &= np.all(z > 1e-6, axis=1)
        if not active.any():
            break
        zs = np.where(z > 1e-6, z, 1.0)
        J = np.zeros(z.shape + (2, 3))
        J[..., 0, 0] = fx / zs
        J[..., 0, 2] = -fx * pc[..., 0] / zs ** 2
        J[..., 1, 1] = fy / zs
        J[..., 1, 2] = -fy * pc[..., 1] / zs ** 2
        J = np.einsum("gkab,gkbc->gkac", J, Rs).reshape(len(sel), 2 * m, 3)
        res = (uvs - uv_hat).reshape(len(sel), 2 * m)
        JtJ = np.einsum("gki,gkj->gij", J, J)
        Jtr = np.einsum("gki,gk->gi", J, res)
        solvable = np.abs(np.linalg.det(JtJ)) > 1e-300
        active &= solvable
        JtJ[~active] = np.eye(3)
        Jtr[~active] = 0.0
        dp = np.linalg.solve(JtJ, Jtr[..., None])[..., 0]
        p = p + dp
        active &= np.linalg.norm(dp, axis=1) >= 1e-10 * (1.0 + np.linalg.norm(p, axis=1))
        if not active.any():
            break

    uv_hat, pc = _project_many(p, Rs, cs, cam)
    reproj = np.mean(np.linalg.norm(uvs - uv_hat, axis=2), axis=1)
    for j, g in enumerate(sel):
        if not np.all(np.isfinite(p[j])):
            out[g] = IllConditioned("non-finite triangulation")
        elif np.any(pc[j, :, 2] <= 0):
            out[g] = BehindCamera("triangulated point behind an observing camera")
        elif np.linalg.norm(p[j] - cs[j, -1]) > cfg.max_distance:
            out[g] = IllConditioned("triangulated point too far")
        else:
            out[g] = TriangulatedPoint(p[j].copy(), float(cond[g]), float(reproj[j]))
    return out


def triangulate_from_poses(uvs, Rs, cs, cam, cfg: PointConfig = PointConfig()):
    """Single-track triangulation; raises on failure."""
    res = triangulate_batch(np.asarray(uvs, dtype=float)[None], np.asarray(Rs)[None], np.asarray(cs)[None],
                            cam, cfg)[0]
    if isinstance(res, Exception):
        raise res
    return res


def triangulate_tracks(tracks, state: FilterState, cam: CameraModel, cfg: PointConfig = PointConfig(),
                       cams: CloneCameras | None = None):
    """Triangulate many tracks, batching those of equal length.

    Returns ``{track id: TriangulatedPoint or TriangulationError}``.
    """
    cams = cams or CloneCameras(state, cam)
    groups: dict[int, list] = {}
    for tr in tracks:
        groups.setdefault(len(tr), []).append(tr)
    out = {}
    for m, grp in sorted(groups.items()):
        if m == 0:
            for tr in grp:
                out[tr.id] = InsufficientBaseline("empty track")
            continue
        idx = np.array([[cams.index[t] for t in tr.times] for tr in grp])
        uvs = np.array([tr.uvs for tr in grp], dtype=float)
        res = triangulate_batch(uvs, cams.R[idx], cams.c[idx], cam, cfg)
        for tr, r in zip(grp, res):
            out[tr.id] = r
    return out


def triangulate_point(track: PointTrack, state: FilterState, cam: CameraModel, cfg: PointConfig = PointConfig(),
                      cams: CloneCameras | None = None):
    Rs, cs = _camera_poses(state, track.times, cam, cams)
    return triangulate_from_poses(np.array(track.uvs), Rs, cs, cam, cfg)


def mcc_residual(track: PointTrack, p_G, state: FilterState, cam: CameraModel, cams: CloneCameras | None = None):
    """Mean pixel reprojection error of ``p_G`` over the track's clone poses."""
    Rs, cs = _camera_poses(state, track.times, cam, cams)
    uv_hat, pc = _project_many(np.asarray(p_G, dtype=float), Rs, cs, cam)
    if np.any(pc[:, 2] <= 0):
        return float("inf")
    return float(np.mean(np.linalg.norm(np.array(track.uvs) - uv_hat, axis=1)))


def motion_consistency_check(track, tp: TriangulatedPoint, state, cam, threshold_px=3.0):
    """True if the feature is consistent with a static world point."""
    return mcc_residual(track, tp.p, state, cam) <= threshold_px


def point_measurement_jacobians(p_G, R_GtoI, p_IinG, cam: CameraModel, uv=None):
    """Pixel residual and its Jacobians w.r.t. the clone pose and the point.

    Returns ``(H_clone (2x6), H_f (2x3), residual (2,))``; the residual is
    ``uv - h`` (zero vector if ``uv`` is None).
    """
    R_GtoC = cam.R_ItoC @ R_GtoI
    d = p_G - p_IinG
    x_I = R_GtoI @ d
    pc = cam.R_ItoC @ x_I + cam.p_IinC
    z = pc[2]
    if z <= 1e-4:
        raise NonPositiveDepth(f"depth {z:.3g}")
    Jp = np.array([[cam.fx / z, 0.0, -cam.fx * pc[0] / z ** 2],
                   [0.0, cam.fy / z, -cam.fy * pc[1] / z ** 2]])
    H_th = Jp @ cam.R_ItoC @ skew(x_I)
    H_p = -Jp @ R_GtoC
    H_f = Jp @ R_GtoC
    h = np.array([cam.fx * pc[0] / z + cam.cx, cam.fy * pc[1] / z + cam.cy])
    res = np.zeros(2) if uv is None else np.asarray(uv, dtype=float) - h
    return np.hstack([H_th, H_p]), H_f, res


def feature_system(track: PointTrack, p_G, state: FilterState, cam: CameraModel, cams: CloneCameras | None = None):
    """Stacked ``(H_x, H_f, r)`` of one point track against the filter state.

    Vectorized form of :func:`point_measurement_jacobians` over the track.
    """
    cams = cams or CloneCameras(state, cam)
    m = len(track)
    idx = np.array([cams.index[t] for t in track.times])
    R = cams.R_GtoI[idx]
    RC = cams.R[idx]
    x_I = np.einsum("kij,kj->ki", R, p_G[None, :] - cams.p[idx])
    pc = x_I @ cam.R_ItoC.T + cam.p_IinC
    z = pc[:, 2]
    if np.any(z <= 1e-4):
        raise NonPositiveDepth(f"depth {z.min():.3g}")
    Jp = np.zeros((m, 2, 3))
    Jp[:, 0, 0] = cam.fx / z
    Jp[:, 0, 2] = -cam.fx * pc[:, 0] / z ** 2
    Jp[:, 1, 1] = cam.fy / z
    Jp[:, 1, 2] = -cam.fy * pc[:, 1] / z ** 2
    Sx = np.zeros((m, 3, 3))
    Sx[:, 0, 1], Sx[:, 0, 2] = -x_I[:, 2], x_I[:, 1]
    Sx[:, 1, 0], Sx[:, 1, 2] = x_I[:, 2], -x_I[:, 0]
    Sx[:, 2, 0], Sx[:, 2, 1] = -x_I[:, 1], x_I[:, 0]
    H_th = Jp @ cam.R_ItoC @ Sx
    H_f = Jp @ RC
    h = np.stack([cam.fx * pc[:, 0] / z + cam.cx, cam.fy * pc[:, 1] / z + cam.cy], axis=1)
    H_x = np.zeros((2 * m, state.dim))
    for k, i in enumerate(idx):
        o = FilterState.clone_offset(int(i))
        H_x[2 * k:2 * k + 2, o:o + 3] = H_th[k]
        H_x[2 * k:2 * k + 2, o + 3:o + CLONE_DIM] = -H_f[k]
    r = (np.asarray(track.uvs, dtype=float) - h).reshape(2 * m)
    return H_x, H_f.reshape(2 * m, 3), r


@dataclass
class PointUpdateResult:
    statuses: dict = field(default_factory=dict)
    mcc_residuals: dict = field(default_factory=dict)
    triangulated: dict = field(default_factory=dict)
    applied: bool = False
    rows: int = 0


def point_update(state: FilterState, tracks, cam: CameraModel, cfg: PointConfig, sigma_px=1.0, use_mcc=True):
    """Triangulate, MCC-check, gate and apply one stacked MSCKF point update.

    ``tracks`` are mature tracks whose observations all have clones in the
    window. Failures of a single feature never abort the batch.
    """
    out = PointUpdateResult()
    blocks = []
    var = sigma_px ** 2
    cams = CloneCameras(state, cam)
    tracks = sorted(tracks, key=lambda tr: tr.id)
    long_enough = [tr for tr in tracks if len(tr) >= max(2, cfg.min_track_length)]
    tri = triangulate_tracks(long_enough, state, cam, cfg, cams)
    for track in tracks:
        tp = tri.get(track.id)
        if tp is None or isinstance(tp, TriangulationError):
            out.statuses[track.id] = TrackStatus.REJECTED_TRIANGULATION
            continue
        out.triangulated[track.id] = tp
        r_mcc = mcc_residual(track, tp.p, state, cam, cams)
        out.mcc_residuals[track.id] = r_mcc
        if use_mcc and not r_mcc <= cfg.mcc_threshold:
            out.statuses[track.id] = TrackStatus.REJECTED_MCC
            continue
        try:
            H_x, H_f, r = feature_system(track, tp.p, state, cam, cams)
            Hp, rp = nullspace_project(H_x, H_f, r)
            chi2_gate(state, Hp, rp, var, cfg.chi2_multiplier)
        except (GateRejected, NonPositiveDepth, RankDeficientNoNull):
            out.statuses[track.id] = TrackStatus.REJECTED_GATE
            continue
        out.statuses[track.id] = TrackStatus.TRIANGULATED
        blocks.append((track.id, Hp, rp))
        if len(blocks) >= cfg.max_points:
            break

    if blocks:
        H = np.vstack([b[1] for b in blocks])
        r = np.concatenate([b[2] for b in blocks])
        ekf_update(state, StackedResidual(r, H, var), chi2_multiplier=None)
        for tid, _, _ in blocks:
            out.statuses[tid] = TrackStatus.USED
        out.applied = True
        out.rows = len(r)
    return out
