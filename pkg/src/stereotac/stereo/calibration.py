"""Checkerboard stereo calibration.

Each camera is initialized from plane homographies (closed-form intrinsics,
then per-view poses); intrinsics, distortion, board poses and the
inter-camera transform are then refined jointly by damped least squares on
the reprojection error of both cameras.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .camera import PinholeCamera, StereoRig, rotation_matrix, rotation_vector

log = logging.getLogger(__name__)

MIN_VIEWS = 10
MIN_NORMAL_SPREAD_DEG = 5.0


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class BoardSpec:
    cols: int = 8
    rows: int = 6
    pitch_mm: float = 17.0

    @property
    def n_corners(self) -> int:
        return self.cols * self.rows

    def object_points(self) -> np.ndarray:
        """Corner coordinates on the board plane (Z = 0), row-major."""
        j, i = np.mgrid[0:self.rows, 0:self.cols]
        return np.column_stack([i.ravel() * self.pitch_mm, j.ravel() * self.pitch_mm,
                                np.zeros(self.n_corners)])


def _normalizer(pts):
    c = pts.mean(axis=0)
    s = np.sqrt(2) / np.mean(np.linalg.norm(pts - c, axis=1))
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])


def homography(src, dst) -> np.ndarray:
    """Normalized DLT estimate of H with dst ~ H @ src (2-D points)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    Ts, Td = _normalizer(src), _normalizer(dst)
    s = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    d = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    H = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H @ Ts
    return H / H[2, 2]


def _v(H, i, j):
    h = H.T
    return np.array([h[i, 0] * h[j, 0],
                     h[i, 0] * h[j, 1] + h[i, 1] * h[j, 0],
                     h[i, 1] * h[j, 1],
                     h[i, 2] * h[j, 0] + h[i, 0] * h[j, 2],
                     h[i, 2] * h[j, 1] + h[i, 1] * h[j, 2],
                     h[i, 2] * h[j, 2]])


def intrinsics_from_homographies(Hs) -> np.ndarray:
    """Closed-form K (zero skew) from three or more plane homographies."""
    V = []
    for H in Hs:
        V.append(_v(H, 0, 1))
        V.append(_v(H, 0, 0) - _v(H, 1, 1))
    _, sv, vt = np.linalg.svd(np.asarray(V))
    b = vt[-1]
    B11, B12, B22, B13, B23, B33 = b
    den = B11 * B22 - B12 ** 2
    if abs(den) < 1e-300 or B11 == 0:
        raise CalibrationError("insufficient pose diversity: intrinsics are unobservable")
    v0 = (B12 * B13 - B11 * B23) / den
    lam = B33 - (B13 ** 2 + v0 * (B12 * B13 - B11 * B23)) / B11
    if lam / B11 <= 0 or lam * B11 / den <= 0:
        raise CalibrationError("insufficient pose diversity: intrinsics are unobservable")
    alpha = np.sqrt(lam / B11)
    beta = np.sqrt(lam * B11 / den)
    u0 = -B13 * alpha ** 2 / lam
    return np.array([[alpha, 0, u0], [0, beta, v0], [0, 0, 1]])


def pose_from_homography(K, H):
    A = np.linalg.inv(K) @ H
    lam = 1.0 / np.linalg.norm(A[:, 0])
    if A[2, 2] * lam < 0:
        lam = -lam
    r1, r2, t = lam * A[:, 0], lam * A[:, 1], lam * A[:, 2]
    Rm = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(Rm)
    Rm = u @ vt
    if np.linalg.det(Rm) < 0:
        Rm = u @ np.diag([1, 1, -1]) @ vt
    return Rm, t


def _check_diversity(rotations):
    normals = np.array([R[:, 2] for R in rotations])
    cosines = np.clip(normals @ normals.T, -1.0, 1.0)
    spread = np.degrees(np.arccos(cosines.min()))
    if spread < MIN_NORMAL_SPREAD_DEG:
        raise CalibrationError(f"insufficient pose diversity: board normals span only {spread:.2f} deg")


def _project(params, pts_cam):
    fx, fy, cx, cy, k1, k2, p1, p2, k3 = params
    x = pts_cam[..., 0] / pts_cam[..., 2]
    y = pts_cam[..., 1] / pts_cam[..., 2]
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.stack([fx * xd + cx, fy * yd + cy], axis=-1)


def _rotate(rvecs, pts):
    """Apply per-view Rodrigues rotations (V, 3) to points (V, N, 3)."""
    return np.einsum("vij,vnj->vni", Rotation.from_rotvec(rvecs).as_matrix(), pts)


def calibrate_stereo(left_points, right_points, board: BoardSpec = BoardSpec(),
                     image_size=(640, 480), max_nfev: int = 200) -> StereoRig:
    """Joint stereo calibration from per-view corner observations.

    ``left_points`` / ``right_points`` have shape (views, corners, 2) with
    corners ordered like :meth:`BoardSpec.object_points`.
    """
    L = np.asarray(left_points, dtype=np.float64)
    R = np.asarray(right_points, dtype=np.float64)
    if L.shape != R.shape or L.ndim != 3 or L.shape[1:] != (board.n_corners, 2):
        raise ValueError(f"expected (views, {board.n_corners}, 2) corner arrays for both cameras")
    n_views = len(L)
    if n_views < MIN_VIEWS:
        raise CalibrationError(f"insufficient pose diversity: {n_views} views (< {MIN_VIEWS})")
    obj = board.object_points()

    inits = []
    for obs in (L, R):
        Hs = [homography(obj[:, :2], o) for o in obs]
        K = intrinsics_from_homographies(Hs)
        poses = [pose_from_homography(K, H) for H in Hs]
        _check_diversity([p[0] for p in poses])
        inits.append((K, poses))
    (KL, poses_l), (KR, poses_r) = inits

    # relative transform: median of per-view estimates
    rel_r, rel_t = [], []
    for (Rl, tl), (Rr, tr) in zip(poses_l, poses_r):
        Rrel = Rr @ Rl.T
        rel_r.append(rotation_vector(Rrel))
        rel_t.append(tr - Rrel @ tl)
    r0, t0 = np.median(rel_r, axis=0), np.median(rel_t, axis=0)

    def intr(K):
        return [K[0, 0], K[1, 1], K[0, 2], K[1, 2], 0, 0, 0, 0, 0]

    x0 = np.concatenate([intr(KL), intr(KR), r0, t0,
                         np.concatenate([np.concatenate([rotation_vector(Rl), tl]) for Rl, tl in poses_l])])
    obj_v = np.broadcast_to(obj, (n_views,) + obj.shape)

    def residuals(x):
        pl, pr = x[:9], x[9:18]
        Rs = rotation_matrix(x[18:21])
        Ts = x[21:24]
        views = x[24:].reshape(n_views, 6)
        cam_l = _rotate(views[:, :3], obj_v) + views[:, None, 3:]
        cam_r = cam_l @ Rs.T + Ts
        return np.concatenate([(_project(pl, cam_l) - L).ravel(), (_project(pr, cam_r) - R).ravel()])

    sol = least_squares(residuals, x0, method="lm", max_nfev=max_nfev * len(x0), x_scale="jac")
    res = sol.fun
    rms = float(np.sqrt(np.mean(res ** 2)))  # per coordinate
    x = sol.x
    w, h = image_size

    def cam(p):
        fx, fy, cx, cy, k1, k2, p1, p2, k3 = p
        return PinholeCamera(fx, fy, cx, cy, w, h, k1, k2, k3, p1, p2)

    rig = StereoRig(cam(x[:9]), cam(x[9:18]), rotation_matrix(x[18:21]), x[21:24], rms)
    log.info("stereo calibration: %d views, RMS reprojection %.4f px, baseline %.3f mm",
             n_views, rms, rig.baseline)
    return rig
