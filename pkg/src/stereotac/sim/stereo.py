"""Vision-mode renders: a textured plane seen through the membrane by both cameras."""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from ..imaging_io import ImageRGB8
from ..stereo.calibration import BoardSpec
from ..stereo.camera import PinholeCamera, StereoRig, rotation_matrix
from .membranes import MembraneSpec
from .tactile import ExternalScene

# blur sigma (px) at opacity 1
BLUR_PX_PER_OPACITY = 2.0
# grey level of the coating's own scattered light
MEMBRANE_GREY = 0.5
DEFAULT_JITTER = 0.01
SPECKLE_STRENGTH = 0.3
TEXTURE_SIZE = 1024
# (sigma in texels, weight) of the summed noise octaves
TEXTURE_OCTAVES = ((1.0, 0.5), (3.0, 1.0), (8.0, 1.0))


@lru_cache(maxsize=4)
def default_texture(seed: int = 7, size: int = TEXTURE_SIZE) -> ImageRGB8:
    """Multi-scale random pattern with full-range contrast; tiles seamlessly."""
    rng = np.random.default_rng(seed)
    t = 0.0
    for sigma, weight in TEXTURE_OCTAVES:
        band = gaussian_filter(rng.random((size, size)), sigma, mode="wrap")
        t = t + weight * (band - band.mean()) / band.std()
    t = (t - t.min()) / (t.max() - t.min())
    t = 0.1 + 0.8 * t
    return ImageRGB8.from_float(np.repeat(t[..., None], 3, axis=2))


def plane_scene(distance_mm: float, texture: Optional[ImageRGB8] = None, texel_mm: float = 0.25):
    return ExternalScene(distance_mm=distance_mm, texture=texture or default_texture(),
                         ambient=1.0, texel_mm=texel_mm)


def _camera_view(cam: PinholeCamera, R_wc, C_w, scene: ExternalScene, tex: np.ndarray):
    """Sample the plane Z = distance (left-camera frame) for every pixel of one camera."""
    v, u = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
    xn, yn = cam.pixel_rays(u, v)
    dirs = np.stack([xn, yn, np.ones_like(xn)], axis=-1) @ R_wc.T
    with np.errstate(divide="ignore"):
        s = (scene.distance_mm - C_w[2]) / dirs[..., 2]
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("plane behind camera")
    X = C_w[0] + s * dirs[..., 0]
    Y = C_w[1] + s * dirs[..., 1]
    th, tw = tex.shape[:2]
    col = X / scene.texel_mm + tw / 2.0
    row = Y / scene.texel_mm + th / 2.0
    out = np.empty((cam.height, cam.width, tex.shape[2]))
    for c in range(tex.shape[2]):
        out[..., c] = map_coordinates(tex[..., c], [row, col], order=1, mode="grid-wrap")
    return out


def _degrade(img, membrane: MembraneSpec, rng, jitter):
    img = (1.0 - membrane.opacity) * img + membrane.opacity * MEMBRANE_GREY
    sigma = BLUR_PX_PER_OPACITY * membrane.opacity
    if sigma > 0:
        img = gaussian_filter(img, (sigma, sigma, 0))
    if rng is not None:
        if membrane.speckle_density > 0:
            spots = rng.random(img.shape[:2]) < membrane.speckle_density
            gain = np.where(spots, 1.0 + SPECKLE_STRENGTH * rng.standard_normal(img.shape[:2]), 1.0)
            img = img * gain[..., None]
        if jitter > 0:
            img = img + rng.normal(0.0, jitter, img.shape)
    return ImageRGB8.from_float(np.clip(img, 0.0, 1.0))


def render_stereo_pair(scene: ExternalScene, membrane: MembraneSpec, rig: StereoRig,
                       rng=None, jitter: float = DEFAULT_JITTER):
    """Left/right renders of the scene plane through the membrane.

    The plane ``Z = scene.distance_mm`` (left-camera frame) is ray-cast from
    each camera, including lens distortion. The membrane then mixes in its own
    grey, blurs with sigma proportional to opacity and, when ``rng`` is
    given, adds per-frame paint speckle and intensity jitter. Without ``rng``
    the render is noise-free.
    """
    if scene.distance_mm is None:
        raise ValueError("scene has no plane distance")
    tex = (scene.texture or default_texture()).to_float() * max(scene.ambient, 0.0)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    left = _camera_view(rig.left, np.eye(3), np.zeros(3), scene, tex)
    right = _camera_view(rig.right, rig.R.T, -rig.R.T @ rig.T, scene, tex)
    return _degrade(left, membrane, rng, jitter), _degrade(right, membrane, rng, jitter)


def true_disparity(rig: StereoRig, distance_mm: float) -> float:
    """Rectified disparity of a fronto-parallel plane: f * B / Z."""
    return float(rig.rectification.P1[0, 0] * rig.baseline / distance_mm)


def synthetic_board_views(rig: StereoRig, n_views: int, seed: int, noise_px: float = 0.0,
                          board: BoardSpec = BoardSpec(), max_tries: int = 1000):
    """Corner observations of a checkerboard in random poses seen by both cameras.

    Returns ``(left_points, right_points)`` of shape (views, corners, 2).
    """
    rng = np.random.default_rng(seed)
    obj = board.object_points()
    obj = obj - obj.mean(axis=0)
    L, R = [], []
    tries = 0
    while len(L) < n_views:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not place the board inside both views")
        rot = rotation_matrix(np.radians([rng.uniform(-35, 35), rng.uniform(-35, 35),
                                          rng.uniform(-20, 20)]))
        t = np.array([rng.uniform(-40, 40), rng.uniform(-30, 30), rng.uniform(250, 450)])
        pts_l = obj @ rot.T + t
        pts_r = pts_l @ rig.R.T + rig.T
        if np.any(pts_l[:, 2] <= 0) or np.any(pts_r[:, 2] <= 0):
            continue
        pl, pr = rig.left.project(pts_l), rig.right.project(pts_r)
        w, h = rig.left.size
        if not all(((p[:, 0] >= 0) & (p[:, 0] < w) & (p[:, 1] >= 0) & (p[:, 1] < h)).all()
                   for p in (pl, pr)):
            continue
        L.append(pl + rng.normal(0, noise_px, pl.shape) if noise_px else pl)
        R.append(pr + rng.normal(0, noise_px, pr.shape) if noise_px else pr)
    return np.array(L), np.array(R)
