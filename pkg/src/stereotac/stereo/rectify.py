"""Row-aligning rectification (Bouguet's split-rotation method)."""

import numpy as np
from scipy.ndimage import map_coordinates

from ..imaging_io import ImageRGB8
from .camera import Rectification, StereoRig, rotation_matrix, rotation_vector


def stereo_rectify(rig: StereoRig) -> Rectification:
    """Rotations R1/R2 that make both image planes coplanar and rows epipolar.

    Each camera is turned by half the relative rotation, then both by the
    rotation taking the baseline onto the x axis. The rectified cameras share
    focal length and principal point, so ``Q`` maps ``(x, y, d, 1)`` to depth
    ``Z = f * B / d``.
    """
    r_half = rotation_matrix(-0.5 * rotation_vector(rig.R))
    t = r_half @ rig.T
    if abs(t[1]) > abs(t[0]):
        raise ValueError("vertical rigs are not supported")
    # rotate t onto the x axis on its own side
    axis = np.array([np.sign(t[0]) or 1.0, 0.0, 0.0])
    w = np.cross(t, axis)
    nw = np.linalg.norm(w)
    if nw > 1e-15:
        ang = np.arccos(np.clip(abs(t @ axis) / np.linalg.norm(t), -1.0, 1.0))
        wR = rotation_matrix(w / nw * ang)
    else:
        wR = np.eye(3)
    R1 = wR @ r_half.T
    R2 = wR @ r_half
    f = 0.5 * (rig.left.fy + rig.right.fy)
    cx = 0.5 * (rig.left.cx + rig.right.cx)
    cy = 0.5 * (rig.left.cy + rig.right.cy)
    tx = (R2 @ rig.T)[0]
    P1 = np.array([[f, 0, cx, 0], [0, f, cy, 0], [0, 0, 1, 0]], dtype=np.float64)
    P2 = P1.copy()
    P2[0, 3] = tx * f
    Q = np.array([[1, 0, 0, -cx],
                  [0, 1, 0, -cy],
                  [0, 0, 0, f],
                  [0, 0, -1.0 / tx, 0]], dtype=np.float64)
    return Rectification(R1, R2, P1, P2, Q)


def rectify_maps(rig: StereoRig, side: str):
    """Source pixel coordinates (map_x, map_y) for every rectified pixel."""
    rect = rig.rectification
    cam, Ri, P = (rig.left, rect.R1, rect.P1) if side == "left" else (rig.right, rect.R2, rect.P2)
    w, h = cam.size
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    f, cx, cy = P[0, 0], P[0, 2], P[1, 2]
    rays = np.stack([(u - cx) / f, (v - cy) / f, np.ones_like(u)], axis=-1) @ Ri  # Ri.T applied per row
    xn = rays[..., 0] / rays[..., 2]
    yn = rays[..., 1] / rays[..., 2]
    xd, yd = cam.distort_normalized(xn, yn)
    return cam.fx * xd + cam.cx, cam.fy * yd + cam.cy


def remap(image: ImageRGB8, map_x, map_y) -> ImageRGB8:
    src = image.pixels.astype(np.float64)
    out = np.empty(src.shape)
    for c in range(src.shape[2]):
        out[..., c] = map_coordinates(src[..., c], [map_y, map_x], order=1, mode="constant", cval=0.0)
    return ImageRGB8(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def rectify_pair(left: ImageRGB8, right: ImageRGB8, rig: StereoRig):
    for img, cam in ((left, rig.left), (right, rig.right)):
        if (img.width, img.height) != cam.size:
            raise ValueError(f"image size {(img.width, img.height)} does not match "
                             f"calibration size {cam.size}")
    return (remap(left, *rectify_maps(rig, "left")), remap(right, *rectify_maps(rig, "right")))


def rectify_points(rig: StereoRig, pixels, side: str) -> np.ndarray:
    """Map raw pixel coordinates (N, 2) to rectified pixel coordinates."""
    rect = rig.rectification
    cam, Ri, P = (rig.left, rect.R1, rect.P1) if side == "left" else (rig.right, rect.R2, rect.P2)
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    xn, yn = cam.pixel_rays(px[:, 0], px[:, 1])
    r = np.column_stack([xn, yn, np.ones_like(xn)]) @ Ri.T
    return np.column_stack([P[0, 0] * r[:, 0] / r[:, 2] + P[0, 2], P[1, 1] * r[:, 1] / r[:, 2] + P[1, 2]])
