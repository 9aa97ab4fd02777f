"""Disparity reprojection and statistical outlier removal."""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin

from .._validation import check_cloud, check_positive
from ..imaging_io import INVALID_DEPTH, FloatMap, ImageRGB8, PointCloud3D
from .matching import DisparityMap

log = logging.getLogger(__name__)

MAX_REMOVED_FRACTION = 0.5


def reproject(disparity, Q, colors: ImageRGB8 = None, roi=None):
    """Map valid ``(x, y, d)`` pixels through ``Q`` to millimetres.

    ``disparity`` is a :class:`DisparityMap` or :class:`FloatMap`. Returns
    ``(cloud, n_skipped)`` where ``n_skipped`` counts valid pixels dropped
    for non-positive disparity. ``roi`` is ``(x0, y0, x1, y1)``, exclusive.
    """
    dmap = disparity.disparity if isinstance(disparity, DisparityMap) else disparity
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (4, 4):
        raise ValueError("Q must be 4x4")
    d = dmap.values.astype(np.float64)
    ok = dmap.valid.copy()
    if roi is not None:
        x0, y0, x1, y1 = roi
        region = np.zeros_like(ok)
        region[y0:y1, x0:x1] = True
        ok &= region
    nonpos = ok & (d <= 0)
    n_skipped = int(nonpos.sum())
    if n_skipped:
        log.info("reproject: skipped %d pixels with non-positive disparity", n_skipped)
    ok &= ~nonpos
    ys, xs = np.nonzero(ok)
    hom = np.column_stack([xs, ys, d[ys, xs], np.ones(len(xs))]) @ Q.T
    pts = hom[:, :3] / hom[:, 3:4]
    cols = colors.pixels[ys, xs] if colors is not None else None
    return PointCloud3D(pts, cols, np.column_stack([xs, ys])), n_skipped


def outlier_scores(points, k_neighbors: int):
    """Mean distance from each point to its k nearest neighbours."""
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=k_neighbors + 1, workers=-1)
    return dist[:, 1:].mean(axis=1)


def remove_outliers(cloud: PointCloud3D, k_neighbors: int = 20, std_ratio: float = 2.0):
    """Drop points whose mean k-NN distance exceeds ``mean + std_ratio * std``.

    At most half of the cloud is removed; if more points are flagged, only
    the worst half goes.
    """
    n = len(cloud)
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    if n <= k_neighbors:
        raise ValueError(f"cloud too small: {n} points for k={k_neighbors}")
    score = outlier_scores(cloud.points, k_neighbors)
    thresh = score.mean() + std_ratio * score.std()
    drop = score > thresh
    limit = int(MAX_REMOVED_FRACTION * n)
    if drop.sum() > limit:
        worst = np.argsort(-score, kind="stable")[:limit]
        drop = np.zeros(n, dtype=bool)
        drop[worst] = True
    return cloud.subset(~drop)


class StatisticalOutlierRemoval(BaseEstimator, TransformerMixin):
    def __init__(self, k_neighbors=20, std_ratio=2.0):
        self.k_neighbors = k_neighbors
        self.std_ratio = std_ratio

    def fit(self, X=None, y=None):
        return self

    def transform(self, cloud: PointCloud3D) -> PointCloud3D:
        check_positive(self.k_neighbors, "k_neighbors", integer=True)
        check_positive(self.std_ratio, "std_ratio")
        return remove_outliers(check_cloud(cloud), self.k_neighbors, self.std_ratio)


def depth_from_cloud(cloud: PointCloud3D, shape) -> FloatMap:
    """Z of each point written back at its source pixel; the rest is invalid."""
    if cloud.pixels is None:
        raise ValueError("cloud carries no pixel indices")
    z = np.full(shape, np.nan)
    if len(cloud):
        z[cloud.pixels[:, 1], cloud.pixels[:, 0]] = cloud.points[:, 2]
    return FloatMap.from_masked(z, "mm", INVALID_DEPTH)
