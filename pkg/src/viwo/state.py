"""MSCKF filter state: IMU state, sliding window of pose clones, covariance.

Error-state layout (the single source of truth for every Jacobian)::

    [ dtheta(3) dp(3) dv(3) dbg(3) dba(3) | clone_0 dtheta dp | clone_1 ... ]

Clones are kept oldest first. Rotation errors follow the left-multiplicative
convention of :mod:`viwo.geometry`.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import chi2

from .errors import EmptyWindow, GateRejected, NumericalFailure, RankDeficientNoNull, WindowFull
from .geometry import exp_so3

logger = logging.getLogger(__name__)

IMU_DIM = 15
CLONE_DIM = 6
TH, POS, VEL, BG, BA = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))

DEFAULT_N_CLONES = 11


@dataclass
class ImuState:
    R: np.ndarray  # G -> I
    p: np.ndarray  # IMU position in G
    v: np.ndarray  # IMU velocity in G
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self):
        return ImuState(self.R.copy(), self.p.copy(), self.v.copy(), self.bg.copy(), self.ba.copy())


@dataclass
class Clone:
    t: float
    R: np.ndarray  # G -> I at time t
    p: np.ndarray

    def copy(self):
        return Clone(self.t, self.R.copy(), self.p.copy())


class FilterState:
    """Current IMU state, clone window and joint error-state covariance.

    ``t`` is the time the IMU state refers to and ``w_m`` the most recent
    (interpolated) gyro reading, which the wheel model needs.
    """

    def __init__(self, imu: ImuState, P=None, t=0.0, n_clones=DEFAULT_N_CLONES):
        self.imu = imu
        self.clones: list[Clone] = []
        self.P = np.eye(IMU_DIM) * 1e-6 if P is None else np.array(P, dtype=float)
        self.t = float(t)
        self.n_clones = int(n_clones)
        self.w_m = np.zeros(3)
        self._index: dict[float, int] = {}

    @property
    def dim(self):
        return IMU_DIM + CLONE_DIM * len(self.clones)

    def copy(self):
        s = FilterState(self.imu.copy(), self.P.copy(), self.t, self.n_clones)
        s.clones = [c.copy() for c in self.clones]
        s.w_m = self.w_m.copy()
        s._index = dict(self._index)
        return s

    def clone_position(self, t):
        """Index of the clone with timestamp ``t`` (KeyError if absent)."""
        return self._index[t]

    def has_clone(self, t):
        return t in self._index

    def clone_at(self, t) -> Clone:
        return self.clones[self._index[t]]

    @staticmethod
    def clone_offset(i):
        return IMU_DIM + CLONE_DIM * i

    def _reindex(self):
        self._index = {c.t: i for i, c in enumerate(self.clones)}

    def check(self, tol=1e-9):
        """Raise ``NumericalFailure`` if the covariance invariants are violated."""
        if self.P.shape != (self.dim, self.dim):
            raise NumericalFailure("covariance dimension mismatch")
        if not np.all(np.isfinite(self.P)):
            raise NumericalFailure("non-finite covariance")
        if np.max(np.abs(self.P - self.P.T)) > 1e-12 * max(1.0, np.max(np.abs(self.P))):
            raise NumericalFailure("covariance not symmetric")
        if np.linalg.eigvalsh(self.P)[0] < -tol:
            raise NumericalFailure("covariance not PSD")


@dataclass
class StackedResidual:
    r: np.ndarray
    H: np.ndarray
    R_noise: np.ndarray  # diagonal entries (variances)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R_noise = np.broadcast_to(np.asarray(self.R_noise, dtype=float), self.r.shape).copy()
        if not (self.H.shape[0] == self.r.shape[0] == self.R_noise.shape[0]):
            raise ValueError("residual, Jacobian and noise row counts differ")


def augment_clone(state: FilterState, timestamp):
    """Stochastic cloning of the current IMU pose."""
    if len(state.clones) >= state.n_clones:
        raise WindowFull(f"window holds {state.n_clones} clones")
    if state.clones and timestamp <= state.clones[-1].t:
        raise ValueError("clone timestamps must increase")
    P = state.P
    n = P.shape[0]
    Pn = np.empty((n + CLONE_DIM, n + CLONE_DIM))
    Pn[:n, :n] = P
    Pn[n:, :n] = P[0:6, :]
    Pn[:n, n:] = P[:, 0:6]
    Pn[n:, n:] = P[0:6, 0:6]
    state.P = Pn
    state.clones.append(Clone(float(timestamp), state.imu.R.copy(), state.imu.p.copy()))
    state._reindex()
    return state


def marginalize_oldest(state: FilterState):
    if not state.clones:
        raise EmptyWindow("no clone to marginalize")
    keep = np.r_[0:IMU_DIM, IMU_DIM + CLONE_DIM:state.dim]
    state.P = state.P[np.ix_(keep, keep)]
    state.clones.pop(0)
    state._reindex()
    return state


def nullspace_project(H_x, H_f, r, rank_tol=1e-9):
    """Project a linearised measurement onto the left null space of ``H_f``.

    Uses a column-pivoted Householder QR of ``H_f``; the trailing columns of
    the full ``Q`` span the left null space. Returns ``(H_x', r')`` with
    ``rows - rank(H_f)`` rows.
    """
    H_f = np.atleast_2d(H_f)
    m = H_f.shape[0]
    if H_x.shape[0] != m or r.shape[0] != m:
        raise ValueError("row counts of H_x, H_f and r differ")
    Q, Rf, _ = scipy.linalg.qr(H_f, pivoting=True)
    diag = np.abs(np.diag(Rf))
    rank = int(np.sum(diag > rank_tol * max(diag[0] if diag.size else 0.0, 1e-300))) if diag.size else 0
    if m - rank <= 0:
        raise RankDeficientNoNull(f"{m} rows, rank {rank}: no null space")
    Qn = Q[:, rank:]
    return Qn.T @ H_x, Qn.T @ r


@functools.lru_cache(maxsize=1024)
def _chi2_95(dof):
    return float(chi2.ppf(0.95, dof))


def chi2_threshold(dof, multiplier=1.0):
    return multiplier * _chi2_95(int(dof))


def innovation_gamma(P, H, r, R_noise):
    S = H @ P @ H.T + np.diag(R_noise)
    try:
        return float(r @ np.linalg.solve(S, r))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular innovation covariance") from exc


def chi2_gate(state: FilterState, H, r, R_noise, multiplier=1.0):
    """Raise :class:`GateRejected` if the residual fails the 95% chi-square test."""
    gamma = innovation_gamma(state.P, H, r, np.broadcast_to(R_noise, r.shape))
    thr = chi2_threshold(len(r), multiplier)
    if gamma > thr:
        raise GateRejected(gamma, thr)
    return gamma


def inject_error(state: FilterState, dx):
    imu = state.imu
    imu.R = exp_so3(-dx[TH]) @ imu.R
    imu.p = imu.p + dx[POS]
    imu.v = imu.v + dx[VEL]
    imu.bg = imu.bg + dx[BG]
    imu.ba = imu.ba + dx[BA]
    for i, c in enumerate(state.clones):
        o = IMU_DIM + CLONE_DIM * i
        c.R = exp_so3(-dx[o:o + 3]) @ c.R
        c.p = c.p + dx[o + 3:o + 6]


def ekf_update(state: FilterState, sr: StackedResidual, chi2_multiplier=1.0):
    """Gated EKF update with Joseph-form covariance.

    ``chi2_multiplier=None`` disables the gate (used when the caller already
    gated each feature). Raises ``GateRejected`` before touching the state.
    Measurements with more rows than the state dimension are compressed with
    a thin QR after whitening; the chi-square statistic accounts for the
    discarded rows.
    """
    r, H, Rn = sr.r, sr.H, sr.R_noise
    if H.shape[1] != state.dim:
        raise ValueError(f"H has {H.shape[1]} columns, state has {state.dim}")
    m = len(r)
    if m == 0:
        return state
    if np.any(Rn <= 0):
        raise ValueError("measurement noise must be positive")
    w = 1.0 / np.sqrt(Rn)
    Hw = H * w[:, None]
    rw = r * w
    leftover = 0.0
    if m > state.dim:
        Q1, T = np.linalg.qr(Hw, mode="reduced")
        r1 = Q1.T @ rw
        leftover = max(0.0, float(rw @ rw - r1 @ r1))
        Hw, rw = T, r1

    P = state.P
    PHt = P @ Hw.T
    S = Hw @ PHt + np.eye(len(rw))
    try:
        cho = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("innovation covariance not invertible") from exc
    if chi2_multiplier is not None:
        gamma = float(rw @ scipy.linalg.cho_solve(cho, rw)) + leftover
        thr = chi2_threshold(m, chi2_multiplier)
        if gamma > thr:
            raise GateRejected(gamma, thr)

    K = scipy.linalg.cho_solve(cho, PHt.T).T
    IKH = np.eye(state.dim) - K @ Hw
    Pn = IKH @ P @ IKH.T + K @ K.T
    Pn = 0.5 * (Pn + Pn.T)
    if not np.all(np.isfinite(Pn)):
        raise NumericalFailure("non-finite covariance after update")
    dx = K @ rw
    state.P = Pn
    inject_error(state, dx)
    return state
