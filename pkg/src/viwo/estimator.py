"""Event-driven visual-inertial-wheel estimator.

The estimator consumes IMU samples, wheel samples and camera frames in time
order. Wheel samples and frames are held until IMU data covers their
timestamps. Each frame runs: propagate, clone, point update (with the motion
consistency check), line update, then marginalization of the oldest clone
once the window is full.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .config import RunConfig
from .dataset import EV_FRAME, EV_IMU, EV_WHEEL, Calibration, Frame, InitialState
from .errors import GateRejected, NumericalFailure, TriangulationError, ViwoError
from .lines import LineSegment2D, LineTrack, assign_points, line_update, match_lines
from .points import (CloneCameras, PointTrack, TrackStatus, mcc_residual, point_update, triangulate_point,
                     triangulate_tracks)
from .propagation import ImuSample, WheelSample, propagate, wheel_update
from .state import BA, BG, IMU_DIM, POS, TH, VEL, FilterState, ImuState, augment_clone, marginalize_oldest

logger = logging.getLogger(__name__)


@dataclass
class PointRecord:
    id: int
    t: float
    n_obs: int
    status: str
    mcc_residual: float


@dataclass
class RunStats:
    frames: int = 0
    wheel_updates: int = 0
    wheel_gate_rejections: int = 0
    point_tracks: int = 0
    points_used: int = 0
    point_triangulation_failures: int = 0
    point_gate_rejections: int = 0
    mcc_rejections: int = 0
    point_updates: int = 0
    line_tracks: int = 0
    lines_used: int = 0
    line_updates: int = 0
    plane_degenerate: int = 0
    line_methods: Counter = field(default_factory=Counter)
    line_outcomes: Counter = field(default_factory=Counter)
    match_pairs: int = 0
    match_correct: int = 0
    match_possible: int = 0
    skipped_events: int = 0

    def to_dict(self):
        out = {}
        for k, v in vars(self).items():
            out[k] = dict(sorted(v.items())) if isinstance(v, Counter) else v
        return out


class Estimator:
    """Filter plus feature bookkeeping. Feed events with :meth:`process`."""

    def __init__(self, cfg: RunConfig, calib: Calibration):
        self.cfg = cfg
        self.cam = calib.camera
        self.odo = calib.odometer
        self.gravity = np.asarray(calib.gravity, dtype=float)
        self.state: FilterState | None = None
        self.imu_buf: list[ImuSample] = []
        self.pending: deque = deque()
        self.point_tracks: dict[int, PointTrack] = {}
        self.line_tracks: dict[int, LineTrack] = {}
        self.landmarks: dict[int, tuple[np.ndarray, float]] = {}  # id -> (p_G, time)
        self.dynamic: dict[int, float] = {}                     # id -> time flagged
        self._prev_segments = []   # (segment, point ids, track id) of the last frame
        self._next_line_track = 0
        self.trajectory: list = []
        self.stats = RunStats()
        self.point_records: list[PointRecord] = []
        self.line_records: list = []

    # -- setup -----------------------------------------------------------------

    def initialize(self, init: InitialState):
        fc = self.cfg.filter
        imu = ImuState(R=init.R_GtoI.copy(), p=np.array(init.p, dtype=float), v=np.array(init.v, dtype=float),
                       bg=np.zeros(3), ba=np.zeros(3))
        P = np.zeros((IMU_DIM, IMU_DIM))
        P[TH, TH] = np.eye(3) * fc.init_sigma_theta ** 2
        P[POS, POS] = np.eye(3) * fc.init_sigma_p ** 2
        P[VEL, VEL] = np.eye(3) * fc.init_sigma_v ** 2
        P[BG, BG] = np.eye(3) * fc.init_sigma_bg ** 2
        P[BA, BA] = np.eye(3) * fc.init_sigma_ba ** 2
        self.state = FilterState(imu, P, t=init.t, n_clones=fc.n_clones)

    # -- event loop --------------------------------------------------------------

    def process(self, kind, payload):
        if self.state is None:
            raise RuntimeError("estimator not initialized")
        t = payload.t
        if t < self.state.t:
            self.stats.skipped_events += 1
            return
        if kind == EV_IMU:
            self.imu_buf.append(payload)
            self._drain(t)
        else:
            self.pending.append((kind, payload))
            if self.imu_buf and self.imu_buf[-1].t >= t:
                self._drain(self.imu_buf[-1].t)

    def finish(self):
        if self.imu_buf:
            self._drain(self.imu_buf[-1].t)
        self.stats.skipped_events += len(self.pending)
        self.pending.clear()

    def _drain(self, t_imu):
        while self.pending and self.pending[0][1].t <= t_imu:
            kind, payload = self.pending.popleft()
            try:
                if kind == EV_WHEEL:
                    self._on_wheel(payload)
                elif kind == EV_FRAME:
                    self._on_frame(payload)
            except ViwoError as e:
                e.args = (f"t={payload.t:.6f}: {e}",)
                raise
        self._trim_buffer()

    def _trim_buffer(self):
        t = self.state.t
        k = 0
        while k + 1 < len(self.imu_buf) and self.imu_buf[k + 1].t <= t:
            k += 1
        if k:
            del self.imu_buf[:k]

    def _propagate(self, t):
        if t > self.state.t:
            propagate(self.state, self.imu_buf, t, self.cfg.noise, self.gravity)

    # -- wheel -------------------------------------------------------------------

    def _on_wheel(self, ws: WheelSample):
        if not self.cfg.features.use_wheel:
            return
        self._propagate(ws.t)
        try:
            wheel_update(self.state, ws, self.odo, self.cfg.noise, self.cfg.filter.wheel_chi2_multiplier)
            self.stats.wheel_updates += 1
        except GateRejected:
            self.stats.wheel_gate_rejections += 1

    # -- frames ------------------------------------------------------------------

    def _on_frame(self, frame: Frame):
        st = self.state
        self._propagate(frame.t)
        t = st.t
        self.stats.frames += 1
        feats = self.cfg.features
        visual = feats.use_points or feats.use_lines
        if visual:
            augment_clone(st, t)
            obs = {int(i): uv for i, uv in zip(frame.point_ids, frame.uvs)}
            for i, uv in obs.items():
                tr = self.point_tracks.get(i)
                if tr is None:
                    tr = self.point_tracks[i] = PointTrack(i)
                tr.add(t, uv)
            self._point_stage(t, obs)
            if feats.use_lines:
                self._line_stage(t, frame, obs)
            if len(st.clones) >= st.n_clones:
                marginalize_oldest(st)
                self._prune(st.clones[0].t)
        if self.cfg.filter.check_covariance:
            st.check()
        self._record_pose(t)

    def _mature(self, tracks, t):
        n = self.state.n_clones
        return [tr for tr in tracks.values() if tr.times[-1] < t or len(tr) >= n]

    def _point_stage(self, t, obs):
        pc = self.cfg.points
        mature = self._mature(self.point_tracks, t)
        for tr in mature:
            del self.point_tracks[tr.id]
        if not mature:
            return
        if self.cfg.features.use_points:
            res = point_update(self.state, mature, self.cam, pc, self.cfg.noise.sigma_px,
                               use_mcc=self.cfg.features.use_mcc)
            statuses = res.statuses
            tri = {k: v.p for k, v in res.triangulated.items()}
            mcc = res.mcc_residuals
            if res.applied:
                self.stats.point_updates += 1
        else:
            statuses, tri, mcc = {}, {}, {}
            for tr in mature:
                statuses[tr.id], p, r = self._triangulate_check(tr)
                if p is not None:
                    tri[tr.id] = p
                    mcc[tr.id] = r
        for tr in sorted(mature, key=lambda x: x.id):
            s = statuses.get(tr.id, TrackStatus.REJECTED_TRIANGULATION)
            self.stats.point_tracks += 1
            if s is TrackStatus.USED:
                self.stats.points_used += 1
            elif s is TrackStatus.REJECTED_MCC:
                self.stats.mcc_rejections += 1
            elif s is TrackStatus.REJECTED_TRIANGULATION:
                self.stats.point_triangulation_failures += 1
            elif s is TrackStatus.REJECTED_GATE:
                self.stats.point_gate_rejections += 1
            self.point_records.append(PointRecord(tr.id, t, len(tr), s.value, float(mcc.get(tr.id, math.nan))))
            if s is TrackStatus.REJECTED_MCC:
                self.dynamic[tr.id] = t
                self.landmarks.pop(tr.id, None)
            elif tr.id in tri and s is not TrackStatus.REJECTED_TRIANGULATION:
                self.landmarks[tr.id] = (tri[tr.id], t)
                self.dynamic.pop(tr.id, None)

    def _triangulate_check(self, tr):
        """Triangulate and motion-check one track without updating the filter."""
        try:
            tp = triangulate_point(tr, self.state, self.cam, self.cfg.points)
        except TriangulationError:
            return TrackStatus.REJECTED_TRIANGULATION, None, math.nan
        r = mcc_residual(tr, tp.p, self.state, self.cam)
        if self.cfg.features.use_mcc and not r <= self.cfg.points.mcc_threshold:
            return TrackStatus.REJECTED_MCC, tp.p, r
        return TrackStatus.TRIANGULATED, tp.p, r

    def _line_stage(self, t, frame: Frame, obs):
        lc = self.cfg.lines
        segs = []
        for k, (lid, s) in enumerate(zip(frame.line_ids, frame.segments)):
            seg_id = k if self.cfg.features.rematch_lines else int(lid)
            try:
                seg = LineSegment2D(seg_id, t, s[0:2], s[2:4])
            except ValueError:
                continue
            if seg.length >= lc.min_length:
                segs.append((seg, int(lid)))
        assigned = assign_points([s for s, _ in segs], obs, lc.assign_max_dist)

        if self.cfg.features.rematch_lines:
            track_ids = self._rematch(segs, assigned)
        else:
            track_ids = [seg.id for seg, _ in segs]
        cur = []
        for (seg, gt), tid in zip(segs, track_ids):
            tr = self.line_tracks.get(tid)
            if tr is None:
                tr = self.line_tracks[tid] = LineTrack(tid)
            tr.add(seg, assigned[seg.id])
            cur.append((seg, assigned[seg.id], tid, gt))
        self._prev_segments = cur

        mature = self._mature(self.line_tracks, t)
        for tr in mature:
            del self.line_tracks[tr.id]
        if not mature:
            return
        points, dynamic = self._line_points(mature, t)
        res = line_update(self.state, mature, self.cam, lc, points, dynamic, self.cfg.noise.sigma_line)
        if res.applied:
            self.stats.line_updates += 1
        for rec in res.records:
            self.stats.line_tracks += 1
            self.stats.line_outcomes[rec.status] += 1
            if rec.plane_degenerate:
                self.stats.plane_degenerate += 1
            if rec.status == "used":
                self.stats.lines_used += 1
                self.stats.line_methods[rec.method] += 1
            self.line_records.append(rec)

    def _rematch(self, segs, assigned):
        """Track ids for the current segments from matching against the last frame."""
        prev = [(s, ids) for s, ids, _, _ in self._prev_segments]
        cur = [(s, assigned[s.id]) for s, _ in segs]
        pairs = match_lines(prev, cur, self.cfg.lines.match_pos_thresh, self.cfg.lines.match_dir_thresh_deg)
        prev_by_id = {s.id: (tid, gt) for s, _, tid, gt in self._prev_segments}
        cur_gt = {s.id: gt for s, gt in segs}
        matched = {b: a for a, b in pairs}
        self.stats.match_pairs += len(pairs)
        self.stats.match_correct += sum(1 for a, b in pairs if prev_by_id[a][1] == cur_gt[b])
        prev_gt = {gt for _, gt in prev_by_id.values()}
        self.stats.match_possible += len(prev_gt & set(cur_gt.values()))
        ids = []
        for s, _ in segs:
            if s.id in matched:
                ids.append(prev_by_id[matched[s.id]][0])
            else:
                ids.append(self._next_line_track)
                self._next_line_track += 1
        return ids

    def _line_points(self, tracks, t):
        """Triangulated positions and dynamic flags of points assigned to lines."""
        pc = self.cfg.points
        wanted = []
        for tr in tracks:
            wanted.extend(tr.point_ids())
        wanted = list(dict.fromkeys(wanted))
        live = [self.point_tracks[pid] for pid in wanted
                if pid not in self.dynamic and pid in self.point_tracks
                and len(self.point_tracks[pid]) >= max(2, pc.min_track_length)]
        cams = CloneCameras(self.state, self.cam) if live else None
        tri = triangulate_tracks(live, self.state, self.cam, pc, cams) if live else {}
        points, dynamic = {}, set()
        for pid in wanted:
            if pid in self.dynamic:
                dynamic.add(pid)
                continue
            tp = tri.get(pid)
            if tp is not None and not isinstance(tp, TriangulationError):
                r = mcc_residual(self.point_tracks[pid], tp.p, self.state, self.cam, cams)
                if self.cfg.features.use_mcc and not r <= pc.mcc_threshold:
                    dynamic.add(pid)
                else:
                    points[pid] = tp.p
            elif pid in self.landmarks:
                points[pid] = self.landmarks[pid][0]
        return points, frozenset(dynamic)

    def _prune(self, t_oldest):
        for tracks in (self.point_tracks, self.line_tracks):
            for tid in list(tracks):
                tr = tracks[tid]
                tr.prune_before(t_oldest)
                if len(tr) == 0:
                    del tracks[tid]
        horizon = t_oldest
        self.landmarks = {k: v for k, v in self.landmarks.items() if v[1] >= horizon}
        self.dynamic = {k: v for k, v in self.dynamic.items() if v >= horizon}

    def _record_pose(self, t):
        imu = self.state.imu
        q = Rotation.from_matrix(imu.R.T).as_quat()
        if q[3] < 0:
            q = -q
        self.trajectory.append(np.concatenate([[t], imu.p, q]))

    def trajectory_array(self):
        return np.array(self.trajectory, dtype=float).reshape(-1, 8)


def run_events(cfg: RunConfig, calib: Calibration, events) -> Estimator:
    """Initialize at the calibration's initial state and replay ``events``."""
    est = Estimator(cfg, calib)
    est.initialize(calib.initial)
    t0 = calib.initial.t
    for t, kind, payload in events:
        if t < t0:
            continue
        est.process(kind, payload)
    est.finish()
    if not np.all(np.isfinite(est.state.P)):
        raise NumericalFailure("non-finite covariance at end of run")
    return est
