"""Line tracks and the line MSCKF update."""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateProjection, GateRejected, RankDeficientNoNull
from ..geometry import CameraModel
from ..state import CLONE_DIM, FilterState, StackedResidual, chi2_gate, ekf_update, nullspace_project
from .measurement import line_batch
from .segments import AxisClass
from .triangulation import LineConfig, triangulate_line_detailed

logger = logging.getLogger(__name__)


class LineStatus(enum.Enum):
    ACTIVE = "active"
    TRIANGULATED = "triangulated"
    REJECTED = "rejected"
    USED = "used"


@dataclass
class LineTrack:
    id: int
    times: list = field(default_factory=list)
    segs: list = field(default_factory=list)
    assigned: list = field(default_factory=list)  # point ids per observation
    axis: AxisClass = AxisClass.UNCLASSIFIED
    status: LineStatus = LineStatus.ACTIVE

    def add(self, seg, point_ids=()):
        if self.times and seg.t <= self.times[-1]:
            raise ValueError(f"line track {self.id}: observation times must increase")
        self.times.append(seg.t)
        self.segs.append(seg)
        self.assigned.append(list(point_ids))

    def __len__(self):
        return len(self.times)

    def point_ids(self):
        out = set()
        for ids in self.assigned:
            out.update(ids)
        return sorted(out)

    def point_support(self, min_fraction=0.0):
        """``{point id: observations it was assigned in}``, keeping points
        assigned in at least ``min_fraction`` of the observations."""
        counts = Counter(i for ids in self.assigned for i in ids)
        need = min_fraction * len(self)
        return {i: n for i, n in sorted(counts.items()) if n >= need}

    def prune_before(self, t):
        k = 0
        while k < len(self.times) and self.times[k] < t:
            k += 1
        del self.times[:k]
        del self.segs[:k]
        del self.assigned[:k]


@dataclass
class LineRecord:
    """Outcome of one line-track update attempt (reported by ``run``)."""

    line_id: int
    t: float
    n_obs: int
    n_points: int
    plane_degenerate: bool
    method: str | None
    status: str


@dataclass
class LineUpdateResult:
    records: list = field(default_factory=list)
    lines: dict = field(default_factory=dict)
    applied: bool = False
    rows: int = 0


def line_system(track: LineTrack, L, state: FilterState, cam: CameraModel):
    m = len(track)
    idx = [state.clone_position(t) for t in track.times]
    Rs = np.array([state.clones[i].R for i in idx])
    ps = np.array([state.clones[i].p for i in idx])
    P = np.array([seg.homogeneous() for seg in track.segs])
    h, Hc, Hl = line_batch(L, Rs, ps, cam, P)
    H_x = np.zeros((2 * m, state.dim))
    for k, i in enumerate(idx):
        o = FilterState.clone_offset(i)
        H_x[2 * k:2 * k + 2, o:o + CLONE_DIM] = Hc[k]
    return H_x, Hl.reshape(2 * m, 4), -h.reshape(2 * m)


def line_update(state: FilterState, tracks, cam: CameraModel, cfg: LineConfig, points=None, dynamic=frozenset(),
                sigma_line=1.0):
    """Triangulate each mature line and apply one stacked MSCKF update.

    ``points`` maps point id -> triangulated position (MCC-passed points
    only); ``dynamic`` holds ids of points the motion check flagged.
    """
    points = points or {}
    out = LineUpdateResult()
    blocks = []
    var = sigma_line ** 2
    for track in sorted(tracks, key=lambda tr: tr.id):
        support = track.point_support(cfg.min_assign_fraction)
        ids = list(support)

        def record(status, res=None):
            out.records.append(LineRecord(
                track.id, track.times[-1] if track.times else float("nan"), len(track),
                res.n_points if res else sum(1 for i in ids if i in points),
                bool(res.plane_degenerate) if res else False,
                res.method if res else None, status))

        if len(track) < max(3, cfg.min_track_length):
            track.status = LineStatus.REJECTED
            record("too_short")
            continue
        checked = [i for i in ids if i in points or i in dynamic]
        if checked and all(i in dynamic for i in checked):
            track.status = LineStatus.REJECTED
            record("dynamic")
            continue

        poses = [(state.clone_at(t).R, state.clone_at(t).p) for t in track.times]
        pts = {i: points[i] for i in ids if i in points}
        res = triangulate_line_detailed(track.segs, poses, cam, pts, None, cfg, support)
        track.axis = res.axis
        if res.line is None:
            track.status = LineStatus.REJECTED
            record("triangulation_" + (res.error or "failed"), res)
            continue
        out.lines[track.id] = (res.line, res.method)
        try:
            H_x, H_L, r = line_system(track, res.line, state, cam)
            Hp, rp = nullspace_project(H_x, H_L, r)
            chi2_gate(state, Hp, rp, var, cfg.chi2_multiplier)
        except GateRejected:
            track.status = LineStatus.REJECTED
            record("gate", res)
            continue
        except (DegenerateProjection, RankDeficientNoNull):
            track.status = LineStatus.REJECTED
            record("degenerate_update", res)
            continue
        track.status = LineStatus.TRIANGULATED
        blocks.append((track, Hp, rp, res))
        if len(blocks) >= cfg.max_lines:
            break

    if blocks:
        H = np.vstack([b[1] for b in blocks])
        r = np.concatenate([b[2] for b in blocks])
        ekf_update(state, StackedResidual(r, H, var), chi2_multiplier=None)
        out.applied = True
        out.rows = len(r)
    for track, _, _, res in blocks:
        track.status = LineStatus.USED
        out.records.append(LineRecord(track.id, track.times[-1], len(track), res.n_points,
                                      res.plane_degenerate, res.method, "used"))
    return out
