"""Tactile pipeline: ball labels, gradient regression, Poisson depth, disk metric."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from scipy import ndimage
from scipy.ndimage import gaussian_filter
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .._validation import check_frame_pair, check_positive
from ..imaging_io import (FloatMap, FormatError, ImageRGB8, _atomic_write, read_image,
                          read_json, write_image, write_json)
from ..sim.tactile import PX_PER_MM, TactileFramePair
from .hsv import HsvFilterSpec, hsv_mask
from .mlp import GradientRegressor
from .poisson import fast_poisson

log = logging.getLogger(__name__)

CSV_COLUMNS = ("R", "B", "x", "y", "dx", "dy")
DISK_PLATEAU_FRACTION = 0.8
# about a 0.5 mm contact at 15 px/mm
MIN_CONTACT_AREA_PX = 50


class IlluminationMismatch(ValueError):
    pass


@dataclass
class CalibrationSample:
    """One labelled contact pixel: colour/position features and two angles."""

    R: float
    B: float
    x: float
    y: float
    dx: float
    dy: float


class CalibrationSet:
    """Column-stored calibration samples; iterates as :class:`CalibrationSample`."""

    def __init__(self, features, labels):
        self.features = np.asarray(features, dtype=np.float64).reshape(-1, 4)
        self.labels = np.asarray(labels, dtype=np.float64).reshape(-1, 2)
        if len(self.features) != len(self.labels):
            raise ValueError("feature and label counts differ")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite calibration features")
        if np.any(np.abs(self.labels) >= np.pi / 2):
            raise ValueError("calibration angles must lie strictly inside (-pi/2, pi/2)")

    def __len__(self):
        return len(self.features)

    def __iter__(self) -> Iterator[CalibrationSample]:
        for f, l in zip(self.features, self.labels):
            yield CalibrationSample(*f, *l)

    @classmethod
    def concat(cls, sets) -> "CalibrationSet":
        sets = list(sets)
        if not sets:
            return cls(np.empty((0, 4)), np.empty((0, 2)))
        return cls(np.vstack([s.features for s in sets]), np.vstack([s.labels for s in sets]))


def write_calibration_csv(samples: CalibrationSet, path) -> None:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for f, l in zip(samples.features, samples.labels):
        w.writerow([repr(float(v)) for v in (*f, *l)])
    _atomic_write(path, out.getvalue().encode("ascii"))


def read_calibration_csv(path) -> CalibrationSet:
    """Parse a calibration CSV; schema problems report the offending line."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise FormatError(f"{path}: line 1: expected header {','.join(CSV_COLUMNS)}, "
                              f"got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise FormatError(f"{path}: line {lineno}: expected {len(CSV_COLUMNS)} fields, "
                                  f"got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: non-numeric field in {row!r}") from None
            if not all(np.isfinite(vals)):
                raise FormatError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: empty dataset")
    arr = np.array(rows)
    return CalibrationSet(arr[:, :4], arr[:, 4:])


def ball_angle(offset, radius):
    """Surface angle of a sphere at a horizontal offset from its centre."""
    return np.arcsin(np.asarray(offset, dtype=np.float64) / radius)


def smooth_pair(pair: TactileFramePair, sigma: float) -> TactileFramePair:
    """Gaussian denoising of both frames; ``sigma <= 0`` returns the pair as is."""
    if sigma <= 0:
        return pair
    blur = lambda im: ImageRGB8.from_float(gaussian_filter(im.to_float(), (sigma, sigma, 0)))
    return TactileFramePair(blur(pair.frame_dx), blur(pair.frame_dy))


def contrast_image(frame: ImageRGB8, reference: Optional[ImageRGB8], gain: float) -> np.ndarray:
    """Background-subtracted, amplified frame; negative changes clip to 0."""
    f = frame.to_float()
    if reference is not None:
        f = f - reference.to_float()
    return np.clip(gain * f, 0.0, 1.0)


def contact_mask(pair: TactileFramePair, reference: Optional[TactileFramePair],
                 hsv: HsvFilterSpec = HsvFilterSpec(), gain: float = 16.0,
                 min_area: int = MIN_CONTACT_AREA_PX) -> np.ndarray:
    """Pixels showing an LED tone change in either illumination step.

    Connected blobs smaller than ``min_area`` pixels are sensor noise and
    are dropped.
    """
    ref_dx = reference.frame_dx if reference is not None else None
    ref_dy = reference.frame_dy if reference is not None else None
    mask = (hsv_mask(contrast_image(pair.frame_dx, ref_dx, gain), hsv)
            | hsv_mask(contrast_image(pair.frame_dy, ref_dy, gain), hsv))
    if min_area > 1 and mask.any():
        lab, _ = ndimage.label(mask)
        sizes = np.bincount(lab.ravel())
        sizes[0] = 0
        mask = sizes[lab] >= min_area
    return mask


def pixel_features(pair: TactileFramePair, mask: np.ndarray) -> np.ndarray:
    """Rows of ``(R, B, x, y)``.

    R is the red response under the x-step (red row on the left edge), B the
    blue response under the y-step (blue row on the bottom edge); x and y are
    pixel coordinates normalized by the frame size.
    """
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    r = pair.frame_dx.pixels[ys, xs, 0] / 255.0
    b = pair.frame_dy.pixels[ys, xs, 2] / 255.0
    return np.column_stack([r, b, xs / (w - 1), ys / (h - 1)])


def gen_ball_labels(pair: TactileFramePair, center, radius: float, *,
                    reference: Optional[TactileFramePair] = None,
                    hsv: HsvFilterSpec = HsvFilterSpec(), gain: float = 16.0,
                    max_offset: Optional[float] = None) -> CalibrationSet:
    """Label masked contact pixels of a ball press with their sphere angles.

    ``radius`` is the ball radius in pixels; pixels at or beyond it are
    dropped. ``max_offset`` optionally narrows the labelled disk further
    (e.g. to the part of the contact where the membrane follows the ball).
    """
    if radius <= 0:
        raise ValueError("ball radius must be positive")
    mask = contact_mask(pair, reference, hsv, gain)
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    ox = xx - center[0]
    oy = yy - center[1]
    dist = np.hypot(ox, oy)
    keep = mask & (dist < radius)
    if max_offset is not None:
        keep &= dist < max_offset
    if not keep.any():
        raise ValueError("empty calibration frame")
    feats = pixel_features(pair, keep)
    labels = np.column_stack([ball_angle(ox[keep], radius), ball_angle(oy[keep], radius)])
    return CalibrationSet(feats, labels)


@dataclass
class TrainingConfig:
    hidden_layer_sizes: tuple = (32, 32, 32)
    learning_rate: float = 1e-2
    n_epochs: int = 1500
    validation_fraction: float = 0.1
    max_samples: Optional[int] = 8000
    seed: int = 0


def fit_calibration(samples: CalibrationSet, config: TrainingConfig = TrainingConfig()) -> GradientRegressor:
    model = GradientRegressor(hidden_layer_sizes=tuple(config.hidden_layer_sizes),
                              learning_rate=config.learning_rate, n_epochs=config.n_epochs,
                              validation_fraction=config.validation_fraction,
                              max_samples=config.max_samples, random_state=config.seed)
    model.fit(samples.features, samples.labels)
    log.info("calibration: %d samples, held-out RMSE %.4f rad", len(samples), model.validation_rmse_)
    return model


@dataclass
class GradientField:
    gx: FloatMap
    gy: FloatMap

    def __post_init__(self):
        if self.gx.values.shape != self.gy.values.shape:
            raise ValueError("gx and gy differ in size")

    @classmethod
    def from_arrays(cls, gx, gy) -> "GradientField":
        return cls(FloatMap(gx, "dimensionless-slope"), FloatMap(gy, "dimensionless-slope"))


def _axis_strength(frame: ImageRGB8):
    """Correlation of the red-minus-blue signal with the x and y pixel axes."""
    px = frame.pixels.astype(np.float64)
    rb = (px[..., 0] - px[..., 2]).ravel()
    h, w = frame.pixels.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    if rb.std() == 0:
        return 0.0, 0.0
    cx = np.corrcoef(rb, xx.ravel())[0, 1]
    cy = np.corrcoef(rb, yy.ravel())[0, 1]
    return abs(cx), abs(cy)


def check_illumination_steps(pair: TactileFramePair, min_corr: float = 0.3) -> None:
    """Raise when the x-step frame varies along y and the y-step frame along x."""
    dx_x, dx_y = _axis_strength(pair.frame_dx)
    dy_x, dy_y = _axis_strength(pair.frame_dy)
    if max(dx_x, dx_y) < min_corr or max(dy_x, dy_y) < min_corr:
        return
    if dx_y > dx_x and dy_x > dy_y:
        raise IlluminationMismatch("illumination step mismatch: the dx frame is lit along y "
                                   "and the dy frame along x (frames swapped?)")


def predict_gradients(model: GradientRegressor, pair: TactileFramePair,
                      hsv: HsvFilterSpec = HsvFilterSpec(), *,
                      reference: Optional[TactileFramePair] = None,
                      gain: float = 16.0, check_steps: bool = True) -> GradientField:
    """Per-pixel slopes ``(tan(ax), tan(ay))`` on masked pixels, zero elsewhere."""
    if reference is not None and reference.shape != pair.shape:
        raise ValueError(f"frame size {pair.shape} differs from calibration size {reference.shape}")
    if check_steps:
        check_illumination_steps(pair)
    mask = contact_mask(pair, reference, hsv, gain)
    gx = np.zeros(pair.shape)
    gy = np.zeros(pair.shape)
    if mask.any():
        ang = model.predict(pixel_features(pair, mask))
        # no extrapolation past the calibrated angles; tan() explodes near pi/2
        lim = getattr(model, "angle_limit_", None)
        if lim is not None:
            ang = np.clip(ang, -lim, lim)
        gx[mask] = np.tan(ang[:, 0])
        gy[mask] = np.tan(ang[:, 1])
    return GradientField.from_arrays(gx, gy)


def integrate_fast_poisson(field: GradientField, px_per_mm: float = PX_PER_MM) -> FloatMap:
    """Indentation depth in mm (positive into the membrane) from surface slopes.

    The slopes describe the membrane height, which is negative under contact;
    the integrated height is negated so the returned map reads as depth, and
    small negative ripples are clipped to zero.
    """
    z = fast_poisson(field.gx.values, field.gy.values)
    # indentation magnitude; upward bulges are not representable
    return FloatMap(np.maximum(-z / px_per_mm, 0.0), unit="mm")


def measure_disk_depth(depth: FloatMap, center, diameter_mm: float,
                       px_per_mm: float = PX_PER_MM) -> float:
    """Mean depth over the disk plateau (inner 80% of the radius)."""
    h, w = depth.values.shape
    yy, xx = np.mgrid[0:h, 0:w]
    r = DISK_PLATEAU_FRACTION * diameter_mm * px_per_mm / 2.0
    region = (np.hypot(xx - center[0], yy - center[1]) <= r) & depth.valid
    if not region.any():
        raise ValueError("region empty")
    return float(depth.values[region].astype(np.float64).mean())


class TactileReconstructor(BaseEstimator, TransformerMixin):
    """Calibrate on ball presses, then turn frame pairs into depth maps.

    ``fit`` takes a sequence of :class:`~stereotac.sim.tactile.BallPress`
    records (or anything with ``pair``, ``center``, ``radius_px`` and
    ``label_radius_px``) plus the no-contact reference pair.
    """

    def __init__(self, hsv=None, contrast_gain=16.0, hidden_layer_sizes=(32, 32, 32),
                 learning_rate=1e-2, n_epochs=1500, max_samples=8000, random_state=0,
                 px_per_mm=PX_PER_MM, smoothing_sigma=1.5):
        self.hsv = hsv
        self.smoothing_sigma = smoothing_sigma
        self.contrast_gain = contrast_gain
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.n_epochs = n_epochs
        self.max_samples = max_samples
        self.random_state = random_state
        self.px_per_mm = px_per_mm

    @property
    def hsv_(self):
        return self.hsv or HsvFilterSpec()

    def _prep(self, pair):
        return None if pair is None else smooth_pair(pair, self.smoothing_sigma)

    def labels_from_presses(self, presses, reference):
        sets = []
        reference = self._prep(reference)
        for p in presses:
            try:
                sets.append(gen_ball_labels(self._prep(p.pair), p.center, p.radius_px, reference=reference,
                                            hsv=self.hsv_, gain=self.contrast_gain,
                                            max_offset=getattr(p, "label_radius_px", None)))
            except ValueError:
                log.warning("press at %s produced no contact pixels; skipped", p.center)
        if not sets:
            raise ValueError("empty dataset: no press produced calibration samples")
        return CalibrationSet.concat(sets)

    def fit(self, presses, reference: Optional[TactileFramePair] = None):
        samples = self.labels_from_presses(presses, reference)
        return self.fit_samples(samples, reference)

    def fit_samples(self, samples: CalibrationSet, reference: Optional[TactileFramePair] = None):
        check_positive(self.n_epochs, "n_epochs", integer=True)
        check_positive(self.contrast_gain, "contrast_gain")
        if len(samples) == 0:
            raise ValueError("empty dataset: no calibration samples")
        cfg = TrainingConfig(tuple(self.hidden_layer_sizes), self.learning_rate, self.n_epochs,
                             0.1, self.max_samples, self.random_state)
        self.model_ = fit_calibration(samples, cfg)
        self.reference_ = self._prep(reference)
        self.n_samples_ = len(samples)
        return self

    def _check(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("TactileReconstructor is not fitted yet")

    def gradients(self, pair: TactileFramePair) -> GradientField:
        self._check()
        pair = check_frame_pair(pair)
        return predict_gradients(self.model_, self._prep(pair), self.hsv_, reference=self.reference_,
                                 gain=self.contrast_gain)

    def reconstruct(self, pair: TactileFramePair) -> FloatMap:
        return integrate_fast_poisson(self.gradients(pair), self.px_per_mm)

    def transform(self, pairs):
        if isinstance(pairs, TactileFramePair) or (
                isinstance(pairs, tuple) and len(pairs) == 2 and not isinstance(pairs[0], TactileFramePair)):
            return self.reconstruct(pairs)
        return [self.reconstruct(p) for p in pairs]

    def save(self, path) -> None:
        """Model JSON at ``path``; reference frames as PPM files beside it."""
        self._check()
        path = Path(path)
        doc = {
            "model": self.model_.to_dict(),
            "hsv": self.hsv_.to_dict(),
            "contrast_gain": self.contrast_gain,
            "px_per_mm": self.px_per_mm,
            "smoothing_sigma": self.smoothing_sigma,
            "n_samples": self.n_samples_,
            "reference": None,
        }
        if self.reference_ is not None:
            names = (f"{path.stem}_ref_dx.ppm", f"{path.stem}_ref_dy.ppm")
            write_image(self.reference_.frame_dx, path.parent / names[0])
            write_image(self.reference_.frame_dy, path.parent / names[1])
            doc["reference"] = list(names)
        write_json(doc, path)

    @classmethod
    def load(cls, path) -> "TactileReconstructor":
        path = Path(path)
        doc = read_json(path)
        model = GradientRegressor.from_dict(doc["model"])
        rec = cls(hsv=HsvFilterSpec.from_dict(doc["hsv"]), contrast_gain=doc["contrast_gain"],
                  hidden_layer_sizes=model.hidden_layer_sizes, learning_rate=model.learning_rate,
                  n_epochs=model.n_epochs, max_samples=model.max_samples,
                  random_state=model.random_state, px_per_mm=doc["px_per_mm"],
                  smoothing_sigma=doc["smoothing_sigma"])
        rec.model_ = model
        rec.n_samples_ = doc["n_samples"]
        rec.reference_ = None
        if doc["reference"]:
            rec.reference_ = TactileFramePair(read_image(path.parent / doc["reference"][0]),
                                              read_image(path.parent / doc["reference"][1]))
        return rec
