"""Input coercion shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .imaging_io import FloatMap, ImageRGB8, PointCloud3D


def check_image(image, name: str = "image") -> ImageRGB8:
    """Accept an ImageRGB8 or an (H, W, 3) uint8 array."""
    if isinstance(image, ImageRGB8):
        return image
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name}: expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"{name}: expected uint8 pixels, got {arr.dtype}")
    return ImageRGB8(arr)


def check_frame_pair(pair):
    """Accept a TactileFramePair or a (dx, dy) tuple of images."""
    from .sim.tactile import TactileFramePair

    if isinstance(pair, TactileFramePair):
        return pair
    try:
        dx, dy = pair
    except (TypeError, ValueError):
        raise ValueError("expected a frame pair (dx frame, dy frame)") from None
    return TactileFramePair(check_image(dx, "dx frame"), check_image(dy, "dy frame"))


def check_stereo_pair(pair):
    try:
        left, right = pair
    except (TypeError, ValueError):
        raise ValueError("expected a (left, right) image pair") from None
    left, right = check_image(left, "left"), check_image(right, "right")
    if left.pixels.shape != right.pixels.shape:
        raise ValueError(f"image sizes differ: {left.pixels.shape} vs {right.pixels.shape}")
    return left, right


def check_floatmap(fmap, unit: str = "mm") -> FloatMap:
    if isinstance(fmap, FloatMap):
        return fmap
    return FloatMap.from_masked(np.asarray(fmap, dtype=np.float64), unit)


def check_cloud(cloud) -> PointCloud3D:
    if isinstance(cloud, PointCloud3D):
        return cloud
    return PointCloud3D(np.asarray(cloud, dtype=np.float64))


def check_positive(value, name: str, integer: bool = False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind) or not value > 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value
