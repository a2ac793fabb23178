"""Line measurement model (signed endpoint-to-projected-line distances) and its
analytic Jacobians.

Line errors in the update use the 4-DOF orthonormal representation: a line
``(n, v)`` is written as ``U = [n/|n|, v/|v|, n x v / |n x v|]`` and
``(cos phi, sin phi) ~ (|n|, |v|)``; perturbations are ``U Exp(dpsi)`` and
``phi + dphi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateProjection
from ..geometry import CameraModel, PluckerLine, cross3, exp_so3, line_projection_matrix, skew


def _camera_moment(L: PluckerLine, R_GtoI, p_IinG, cam: CameraModel):
    c = cam.p_CinI
    p_CinG = p_IinG + R_GtoI.T @ c
    m = L.n - cross3(p_CinG, L.v)
    return m, p_CinG, c


def _distances(l, seg):
    s = math.hypot(l[0], l[1])
    if s < 1e-12:
        raise DegenerateProjection("projected line has no direction")
    P = seg.homogeneous()
    return (P @ l) / s, s, P


def line_measurement(L_G: PluckerLine, R_GtoI, p_IinG, cam: CameraModel, seg):
    """Signed distances ``(d_s, d_e)`` of the observed endpoints to the
    projection of ``L_G`` seen from the clone pose (R_GtoI, p_IinG)."""
    m, _, _ = _camera_moment(L_G, R_GtoI, p_IinG, cam)
    n_C = cam.R_ItoC @ (R_GtoI @ m)
    if np.linalg.norm(n_C) < 1e-12:
        raise DegenerateProjection("line passes through the camera centre")
    l = line_projection_matrix(cam) @ n_C
    d, _, _ = _distances(l, seg)
    return d


def orthonormal_basis(L: PluckerLine):
    """``(U, phi)`` of the orthonormal representation.

    For a line through the origin (``n = 0``) the first column is an
    arbitrary unit vector orthogonal to ``v``.
    """
    nn = float(np.linalg.norm(L.n))
    nv = float(np.linalg.norm(L.v))
    u2 = L.v / nv
    if nn > 1e-12 * max(nv, 1.0):
        u1 = L.n / nn
        u1 = u1 - (u1 @ u2) * u2
        u1 /= np.linalg.norm(u1)
    else:
        a = np.eye(3)[int(np.argmin(np.abs(u2)))]
        u1 = cross3(u2, a)
        u1 /= np.linalg.norm(u1)
        nn = 0.0
    u3 = cross3(u1, u2)
    return np.column_stack([u1, u2, u3]), math.atan2(nv, nn)


def orthonormal_plus(L: PluckerLine, delta) -> PluckerLine:
    """Retraction of a 4-vector ``(dpsi(3), dphi)`` onto the line manifold."""
    U, phi = orthonormal_basis(L)
    U2 = U @ exp_so3(delta[:3])
    phi2 = phi + delta[3]
    n = math.cos(phi2) * U2[:, 0]
    v = math.sin(phi2) * U2[:, 1]
    return PluckerLine(n / np.linalg.norm(v), v / np.linalg.norm(v))


def plucker_tangent(L: PluckerLine):
    """6x4 derivative of ``(n, v)`` with respect to the orthonormal error."""
    U, phi = orthonormal_basis(L)
    u1, u2, u3 = U.T
    scale = math.hypot(float(np.linalg.norm(L.n)), float(np.linalg.norm(L.v)))
    w1 = scale * math.cos(phi)
    w2 = scale * math.sin(phi)
    T = np.zeros((6, 4))
    T[0:3, 1] = -w1 * u3
    T[0:3, 2] = w1 * u2
    T[3:6, 0] = w2 * u3
    T[3:6, 2] = -w2 * u1
    T[0:3, 3] = -w2 * u1
    T[3:6, 3] = w1 * u2
    return T


@dataclass
class LineJacobians:
    h: np.ndarray          # (d_s, d_e)
    H_clone: np.ndarray    # 2x6, w.r.t. clone (dtheta, dp)
    H_plucker: np.ndarray  # 2x6, w.r.t. (n, v) in G
    H_line: np.ndarray     # 2x4, w.r.t. orthonormal error


def line_jacobians(L_G: PluckerLine, R_GtoI, p_IinG, cam: CameraModel, seg) -> LineJacobians:
    m, p_CinG, c = _camera_moment(L_G, R_GtoI, p_IinG, cam)
    R_GtoC = cam.R_ItoC @ R_GtoI
    Rm = R_GtoI @ m
    n_C = cam.R_ItoC @ Rm
    if np.linalg.norm(n_C) < 1e-12:
        raise DegenerateProjection("line passes through the camera centre")
    KL = line_projection_matrix(cam)
    l = KL @ n_C
    d, s, P = _distances(l, seg)
    dd_dl = P / s - np.outer(d / (s * s), np.array([l[0], l[1], 0.0]))
    dd_dn = dd_dl @ KL

    Sv = skew(L_G.v)
    dn_dth = cam.R_ItoC @ (skew(Rm) - R_GtoI @ Sv @ R_GtoI.T @ skew(c))
    dn_dp = cam.R_ItoC @ R_GtoI @ Sv
    H_clone = np.hstack([dd_dn @ dn_dth, dd_dn @ dn_dp])
    H_plucker = np.hstack([dd_dn @ R_GtoC, -dd_dn @ R_GtoC @ skew(p_CinG)])
    H_line = H_plucker @ plucker_tangent(L_G)
    return LineJacobians(d, H_clone, H_plucker, H_line)


def _skew_many(x):
    S = np.zeros(x.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -x[..., 2], x[..., 1]
    S[..., 1, 0], S[..., 1, 2] = x[..., 2], -x[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -x[..., 1], x[..., 0]
    return S


def line_batch(L_G: PluckerLine, Rs, ps, cam: CameraModel, P, jacobians=True):
    """Vectorized :func:`line_jacobians` over ``m`` observations.

    ``Rs`` (m,3,3) and ``ps`` (m,3) are clone poses, ``P`` (m,2,3) the
    homogeneous endpoints. Returns ``(h (m,2), H_clone (m,2,6), H_line
    (m,2,4))``; the Jacobians are None when ``jacobians`` is False.
    """
    c = cam.p_CinI
    cG = ps + np.einsum("kji,j->ki", Rs, c)
    v = L_G.v
    m_G = L_G.n[None, :] - np.cross(cG, v[None, :])
    Rm = np.einsum("kij,kj->ki", Rs, m_G)
    n_C = Rm @ cam.R_ItoC.T
    if np.any(np.linalg.norm(n_C, axis=1) < 1e-12):
        raise DegenerateProjection("line passes through the camera centre")
    KL = line_projection_matrix(cam)
    l = n_C @ KL.T
    s = np.hypot(l[:, 0], l[:, 1])
    if np.any(s < 1e-12):
        raise DegenerateProjection("projected line has no direction")
    d = np.einsum("kij,kj->ki", P, l) / s[:, None]
    if not jacobians:
        return d, None, None
    l2 = l.copy()
    l2[:, 2] = 0.0
    dd_dl = P / s[:, None, None] - (d / (s * s)[:, None])[:, :, None] * l2[:, None, :]
    dd_dn = dd_dl @ KL                                   # (m,2,3)
    R_GtoC = np.einsum("ij,kjl->kil", cam.R_ItoC, Rs)    # (m,3,3)
    Sv = skew(v)
    RSvRt = np.einsum("kij,jl,kml->kim", Rs, Sv, Rs)      # R [v]x R^T
    dn_dth = np.einsum("ij,kjl->kil", cam.R_ItoC, _skew_many(Rm) - RSvRt @ skew(c))
    dn_dp = np.einsum("ij,kjl->kil", cam.R_ItoC, Rs @ Sv)
    H_clone = np.concatenate([dd_dn @ dn_dth, dd_dn @ dn_dp], axis=2)
    A = dd_dn @ R_GtoC
    H_pl = np.concatenate([A, -A @ _skew_many(cG)], axis=2)
    H_line = H_pl @ plucker_tangent(L_G)
    return d, H_clone, H_line
