"""Flat-target depth metrics and table assembly.

All three vision metrics are percentages of the ground-truth distance:

* z-accuracy: signed median of ``D - GT`` after rotating the points so their
  best-fit plane faces the camera,
* spatial RMSE: RMS of vertical residuals to the best-fit plane,
* temporal noise: per-pixel population std across frames, averaged over
  the ROI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .imaging_io import Cell, FloatMap, ReportTable, read_json

DISTANCES_MM = (100, 150, 200, 250, 300)
DEFAULT_ROI_FRACTION = 0.6


def central_roi(shape, fraction: float = DEFAULT_ROI_FRACTION):
    """``(x0, y0, x1, y1)`` covering the central ``fraction`` of each axis."""
    h, w = shape
    mx = int(round(w * (1 - fraction) / 2))
    my = int(round(h * (1 - fraction) / 2))
    return (mx, my, w - mx, h - my)


@dataclass
class EvalConfig:
    gt_mm: float
    roi: Optional[tuple] = None
    n_frames: int = 10
    membrane: str = ""
    focal_px: Optional[float] = None
    cx: Optional[float] = None
    cy: Optional[float] = None
    absolute: bool = False

    def __post_init__(self):
        if not self.gt_mm > 0:
            raise ValueError("ground-truth distance must be positive")
        if self.roi is not None:
            x0, y0, x1, y1 = self.roi
            if x1 <= x0 or y1 <= y0:
                raise ValueError("empty ROI")
            self.roi = tuple(int(v) for v in self.roi)
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")

    def roi_for(self, shape):
        return self.roi if self.roi is not None else central_roi(shape)

    @classmethod
    def from_json(cls, path) -> "EvalConfig":
        return cls(**read_json(path))


def _values_valid(depth):
    """``(values, valid)`` in float64 for a FloatMap or a bare array (NaN = invalid).

    Bare float64 arrays skip the float32 storage rounding of FloatMap.
    """
    if isinstance(depth, FloatMap):
        return depth.values.astype(np.float64), depth.valid
    v = np.asarray(depth, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {v.shape}")
    return v, np.isfinite(v)


def _shape(depth):
    return depth.values.shape if isinstance(depth, FloatMap) else np.shape(depth)


def _roi_pixels(depth, roi):
    values, valid = _values_valid(depth)
    x0, y0, x1, y1 = roi
    ys, xs = np.nonzero(valid[y0:y1, x0:x1])
    z = values[y0:y1, x0:x1][ys, xs]
    return xs + x0, ys + y0, z


def _lsq_plane(x, y, z):
    A = np.column_stack([x, y, np.ones_like(x)])
    if len(z) < 3 or np.linalg.matrix_rank(A) < 3:
        raise ValueError("rank-deficient plane fit (fewer than 3 non-collinear valid pixels)")
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    return coef, z - A @ coef


def fit_plane(depth: FloatMap, roi=None):
    """Least-squares ``z = a*x + b*y + c`` over valid ROI pixels.

    Returns ``((a, b, c), residuals)``.
    """
    roi = roi if roi is not None else central_roi(_shape(depth))
    x, y, z = _roi_pixels(depth, roi)
    if len(z) == 0:
        raise ValueError("empty ROI: no valid pixels")
    coef, res = _lsq_plane(x.astype(np.float64), y.astype(np.float64), z)
    return tuple(float(c) for c in coef), res


def _lateral(x, y, z, cfg: EvalConfig):
    if cfg.focal_px is None:
        return x.astype(np.float64), y.astype(np.float64)
    cx = cfg.cx if cfg.cx is not None else 0.0
    cy = cfg.cy if cfg.cy is not None else 0.0
    return (x - cx) * z / cfg.focal_px, (y - cy) * z / cfg.focal_px


def tilt_corrected(depth: FloatMap, cfg: EvalConfig) -> np.ndarray:
    """Depths after rotating the point set about its centroid so the plane normal is the optical axis."""
    x, y, z = _roi_pixels(depth, cfg.roi_for(_shape(depth)))
    if len(z) == 0:
        raise ValueError("empty ROI: no valid pixels")
    X, Y = _lateral(x, y, z, cfg)
    (a, b, _), _ = _lsq_plane(X, Y, z)
    n = np.array([-a, -b, 1.0]) / np.sqrt(a * a + b * b + 1.0)
    P = np.column_stack([X, Y, z])
    c = P.mean(axis=0)
    return c[2] + (P - c) @ n


def z_accuracy(depth: FloatMap, cfg: EvalConfig) -> float:
    err = np.median(tilt_corrected(depth, cfg) - cfg.gt_mm) / cfg.gt_mm * 100.0
    return float(abs(err) if cfg.absolute else err)


def spatial_rmse_pct(depth: FloatMap, cfg: EvalConfig) -> float:
    _, res = fit_plane(depth, cfg.roi_for(_shape(depth)))
    return float(np.sqrt(np.mean(res ** 2)) / cfg.gt_mm * 100.0)


def temporal_noise_pct(frames: Sequence[FloatMap], cfg: EvalConfig) -> float:
    if len(frames) < 2:
        raise ValueError("temporal noise needs at least 2 frames")
    pairs = [_values_valid(f) for f in frames]
    shape = pairs[0][0].shape
    for v, _ in pairs:
        if v.shape != shape:
            raise ValueError(f"frame size mismatch: {v.shape} vs {shape}")
    x0, y0, x1, y1 = cfg.roi_for(shape)
    stack = np.stack([v[y0:y1, x0:x1] for v, _ in pairs])
    ok = np.all(np.stack([m[y0:y1, x0:x1] for _, m in pairs]), axis=0)
    if not ok.any():
        raise ValueError("empty ROI: no pixel valid in every frame")
    std = stack[:, ok].std(axis=0)
    return float(std.mean() / cfg.gt_mm * 100.0)


@dataclass
class EvalResult:
    membrane: str
    distance_mm: float
    z_accuracy_pct: float
    rmse_pct_mean: float
    rmse_pct_std: float
    temporal_noise_pct: Optional[float]
    per_frame_rmse: list = field(default_factory=list)
    per_frame_z_accuracy: list = field(default_factory=list)
    valid_fraction: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_sequence(frames: Sequence[FloatMap], cfg: EvalConfig) -> EvalResult:
    """Per-frame z-accuracy and RMSE plus cross-frame temporal noise."""
    if not frames:
        raise ValueError("no frames to evaluate")
    rm = [spatial_rmse_pct(f, cfg) for f in frames]
    za = [z_accuracy(f, cfg) for f in frames]
    masks = [_values_valid(f)[1] for f in frames]
    x0, y0, x1, y1 = cfg.roi_for(masks[0].shape)
    vf = [float(m[y0:y1, x0:x1].mean()) for m in masks]
    tn = temporal_noise_pct(frames, cfg) if len(frames) >= 2 else None
    return EvalResult(cfg.membrane, cfg.gt_mm, float(np.mean(za)), float(np.mean(rm)),
                      float(np.std(rm)), tn, rm, za, vf)


def assemble_report(results: Sequence[EvalResult], metric: str = "rmse",
                    membranes: Optional[Sequence[str]] = None,
                    distances: Sequence[float] = DISTANCES_MM) -> ReportTable:
    """Distance-by-membrane table of one metric; absent cells stay gaps.

    ``metric`` is ``"rmse"`` (mean with spread), ``"temporal"`` or
    ``"z_accuracy"``.
    """
    if metric not in ("rmse", "temporal", "z_accuracy"):
        raise ValueError(f"unknown metric {metric!r}")
    if membranes is None:
        membranes = list(dict.fromkeys(r.membrane for r in results))
    index = {(r.membrane, float(r.distance_mm)): r for r in results}
    cells = []
    for d in distances:
        row = []
        for m in membranes:
            r = index.get((m, float(d)))
            if r is None:
                row.append(None)
            elif metric == "rmse":
                row.append(Cell(r.rmse_pct_mean, "%", r.rmse_pct_std))
            elif metric == "temporal":
                row.append(None if r.temporal_noise_pct is None else Cell(r.temporal_noise_pct, "%"))
            else:
                row.append(Cell(r.z_accuracy_pct, "%"))
        cells.append(row)
    titles = {"rmse": "Spatial RMSE on a flat target (%) [mean : std]",
              "temporal": "Temporal noise on a flat target (%)",
              "z_accuracy": "Z-accuracy on a flat target (%)"}
    return ReportTable([f"{d:g} mm" for d in distances], list(membranes), cells,
                       titles[metric], "distance")


def disk_report(depths_by_membrane: dict) -> ReportTable:
    """Mean/std table of repeated disk-depth measurements (mm)."""
    rows, cells = [], []
    for m, vals in depths_by_membrane.items():
        v = np.asarray(vals, dtype=np.float64)
        rows.append(m)
        if len(v) == 0:
            cells.append([None, None])
        else:
            std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
            cells.append([Cell(float(v.mean()), "mm"), Cell(std, "mm")])
    return ReportTable(rows, ["mean", "std"], cells, "Disk indentation depth (mm)", "membrane")
