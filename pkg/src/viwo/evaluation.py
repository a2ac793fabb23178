"""Absolute trajectory error with rigid (no scale) Umeyama alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InsufficientOverlap

MAX_OFFSET = 0.01  # s
MIN_PAIRS = 10


@dataclass
class AteReport:
    rmse_position: float          # m
    rmse_orientation: float       # deg
    times: np.ndarray
    position_errors: np.ndarray   # m, per associated pair
    orientation_errors: np.ndarray  # deg
    R_align: np.ndarray           # maps estimate into the ground-truth frame
    t_align: np.ndarray

    def to_dict(self):
        return {"rmse_position": self.rmse_position, "rmse_orientation": self.rmse_orientation,
                "pairs": int(len(self.times)), "R_align": self.R_align.tolist(), "t_align": self.t_align.tolist()}


def associate(t_est, t_gt, max_offset=MAX_OFFSET):
    """Nearest-neighbour association; returns index arrays (i_est, i_gt)."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    if len(t_gt) == 0 or len(t_est) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    j = np.clip(np.searchsorted(t_gt, t_est), 1, len(t_gt) - 1) if len(t_gt) > 1 else np.zeros(len(t_est), int)
    if len(t_gt) > 1:
        left = j - 1
        pick_left = np.abs(t_est - t_gt[left]) <= np.abs(t_gt[j] - t_est)
        j = np.where(pick_left, left, j)
    ok = np.abs(t_gt[j] - t_est) <= max_offset
    return np.nonzero(ok)[0], j[ok]


def umeyama_rigid(src, dst):
    """``R, t`` minimising ``sum |dst - (R src + t)|^2`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def evaluate_ate(est, gt, max_offset=MAX_OFFSET, align=True) -> AteReport:
    """ATE between two TUM arrays ``(t, px, py, pz, qx, qy, qz, qw)``."""
    est = np.asarray(est, dtype=float).reshape(-1, 8)
    gt = np.asarray(gt, dtype=float).reshape(-1, 8)
    ie, ig = associate(est[:, 0], gt[:, 0], max_offset)
    if len(ie) < MIN_PAIRS:
        raise InsufficientOverlap(f"only {len(ie)} associated poses (need {MIN_PAIRS})")
    pe, pg = est[ie, 1:4], gt[ig, 1:4]
    if align:
        R, t = umeyama_rigid(pe, pg)
    else:
        R, t = np.eye(3), np.zeros(3)
    pe_al = pe @ R.T + t
    dp = np.linalg.norm(pe_al - pg, axis=1)
    Re = Rotation.from_quat(est[ie, 4:8]).as_matrix()
    Rg = Rotation.from_quat(gt[ig, 4:8]).as_matrix()
    D = np.einsum("ij,njk,nlk->nil", R, Re, Rg)  # R_align R_est R_gt^T
    dang = np.degrees(Rotation.from_matrix(D).magnitude())
    return AteReport(float(np.sqrt(np.mean(dp ** 2))), float(np.sqrt(np.mean(dang ** 2))), est[ie, 0], dp, dang,
                     R, t)
