"""Sum-of-absolute-differences block matching on rectified pairs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter
from sklearn.base import BaseEstimator

from .._validation import check_stereo_pair
from ..imaging_io import INVALID_DEPTH, FloatMap, ImageRGB8

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class MatcherSettings:
    window: int = 11
    min_disparity: int = 0
    max_disparity: int = 128
    uniqueness_ratio: float = 1.15
    texture_threshold: float = 1.0
    strip_rows: int = 64

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd number")
        if not 0 <= self.min_disparity < self.max_disparity:
            raise ValueError("need 0 <= min_disparity < max_disparity")
        if self.uniqueness_ratio < 1.0:
            raise ValueError("uniqueness ratio must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class DisparityMap:
    disparity: FloatMap
    settings: MatcherSettings

    @property
    def valid(self):
        return self.disparity.valid


def to_gray(image) -> np.ndarray:
    if isinstance(image, ImageRGB8):
        return (image.pixels.astype(np.float32) @ _LUMA.astype(np.float32))
    arr = np.asarray(image, dtype=np.float32)
    return arr @ _LUMA.astype(np.float32) if arr.ndim == 3 else arr


def _strip(left, right, grad, r0, r1, s: MatcherSettings):
    """Disparities for rows [r0, r1); works on a padded row band."""
    half = s.window // 2
    a, b = max(0, r0 - half), min(left.shape[0], r1 + half)
    L, R = left[a:b], right[a:b]
    n_d = s.max_disparity - s.min_disparity + 1
    h, w = L.shape
    cost = np.full((n_d, h, w), np.inf, dtype=np.float32)
    for k in range(n_d):
        d = s.min_disparity + k
        if d >= w:
            break
        diff = np.abs(L[:, d:] - R[:, :w - d]) if d else np.abs(L - R)
        box = uniform_filter(diff, s.window, mode="nearest")
        cost[k, :, d:] = box
        # blocks reaching past the left edge of the right image are unusable
        cost[k, :, d:d + half] = np.inf
    cost = cost[:, r0 - a:r0 - a + (r1 - r0)]
    best = np.argmin(cost, axis=0)
    rows = np.arange(cost.shape[1])[:, None]
    cols = np.arange(w)[None, :]
    c_best = cost[best, rows, cols]
    # second best outside the +-1 neighbourhood of the winner
    masked = cost.copy()
    for off in (-1, 0, 1):
        idx = np.clip(best + off, 0, n_d - 1)
        masked[idx, rows, cols] = np.inf
    c_second = masked.min(axis=0)
    ok = np.isfinite(c_best) & (c_second > s.uniqueness_ratio * c_best)
    ok &= grad[r0:r1] >= s.texture_threshold

    disp = best.astype(np.float64)
    inner = (best > 0) & (best < n_d - 1)
    lo = cost[np.clip(best - 1, 0, n_d - 1), rows, cols].astype(np.float64)
    hi = cost[np.clip(best + 1, 0, n_d - 1), rows, cols].astype(np.float64)
    with np.errstate(invalid="ignore"):
        den = lo - 2.0 * c_best + hi
    fine = inner & np.isfinite(lo) & np.isfinite(hi) & (den > 0)
    disp[fine] += 0.5 * (lo[fine] - hi[fine]) / den[fine]
    disp += s.min_disparity
    return np.where(ok, disp, np.nan)


def block_match(left, right, settings: MatcherSettings = MatcherSettings(),
                rows=None) -> DisparityMap:
    """Integer SAD winner with parabolic subpixel refinement.

    Pixels are rejected (sentinel) when the best cost does not beat every
    cost outside its +-1 neighbourhood by ``uniqueness_ratio``, when the
    block's mean horizontal gradient is below ``texture_threshold`` (grey
    levels per pixel), or when the block leaves the image. ``rows`` =
    ``(first, stop)`` limits matching to a band; other rows are invalid.
    """
    L, R = to_gray(left), to_gray(right)
    if L.shape != R.shape:
        raise ValueError(f"image sizes differ: {L.shape} vs {R.shape}")
    h, w = L.shape
    if settings.window > min(h, w):
        raise ValueError(f"window {settings.window} larger than image {w}x{h}")
    grad = uniform_filter(np.abs(np.gradient(L, axis=1)), settings.window, mode="nearest")
    out = np.full((h, w), np.nan)
    first, stop = (0, h) if rows is None else (max(0, rows[0]), min(h, rows[1]))
    for r0 in range(first, stop, settings.strip_rows):
        r1 = min(stop, r0 + settings.strip_rows)
        out[r0:r1] = _strip(L, R, grad, r0, r1, settings)
    half = settings.window // 2
    out[:half] = np.nan
    out[h - half:] = np.nan
    out[:, :half] = np.nan
    out[:, w - half:] = np.nan
    return DisparityMap(FloatMap.from_masked(out, "disparity-px", INVALID_DEPTH), settings)


class BlockMatcher(BaseEstimator):
    """Estimator wrapper: ``transform((left, right))`` returns a :class:`DisparityMap`."""

    def __init__(self, window=11, min_disparity=0, max_disparity=128, uniqueness_ratio=1.15,
                 texture_threshold=1.0):
        self.window = window
        self.min_disparity = min_disparity
        self.max_disparity = max_disparity
        self.uniqueness_ratio = uniqueness_ratio
        self.texture_threshold = texture_threshold

    def fit(self, X=None, y=None):
        self.settings_ = MatcherSettings(self.window, self.min_disparity, self.max_disparity,
                                         self.uniqueness_ratio, self.texture_threshold)
        return self

    def transform(self, pair):
        if not hasattr(self, "settings_"):
            self.fit()
        left, right = check_stereo_pair(pair)
        return block_match(left, right, self.settings_)
