"""Colour isolation of the red and blue LED tones."""

from dataclasses import dataclass

import numpy as np

from ..imaging_io import ImageRGB8


@dataclass(frozen=True)
class HsvFilterSpec:
    """Hue windows in degrees; thresholds on saturation and value in [0, 1].

    Red wraps around 0 and is given as two intervals.
    """

    red_hue: tuple = ((0.0, 20.0), (340.0, 360.0))
    blue_hue: tuple = ((200.0, 260.0),)
    min_saturation: float = 0.35
    min_value: float = 0.2

    def __post_init__(self):
        for lo, hi in (*self.red_hue, *self.blue_hue):
            if not 0.0 <= lo < hi <= 360.0:
                raise ValueError(f"empty or out-of-range hue window ({lo}, {hi})")
        if not (0.0 <= self.min_saturation <= 1.0 and 0.0 <= self.min_value <= 1.0):
            raise ValueError("saturation/value thresholds must lie in [0, 1]")

    def to_dict(self):
        return {"red_hue": [list(w) for w in self.red_hue],
                "blue_hue": [list(w) for w in self.blue_hue],
                "min_saturation": self.min_saturation, "min_value": self.min_value}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(w) for w in d["red_hue"]), tuple(tuple(w) for w in d["blue_hue"]),
                   d["min_saturation"], d["min_value"])


def rgb_to_hsv(rgb):
    """Vectorized RGB (floats in [0, 1]) to hue in degrees, saturation, value."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)
    safe = np.where(c > 0, c, 1.0)
    h = np.where(v == r, ((g - b) / safe) % 6.0,
                 np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(c > 0, h * 60.0, 0.0)
    return h, s, v


def _in_windows(hue, windows):
    out = np.zeros(hue.shape, dtype=bool)
    for lo, hi in windows:
        out |= (hue >= lo) & (hue <= hi)
    return out


def hsv_mask(frame, spec: HsvFilterSpec = HsvFilterSpec()):
    """True where a pixel shows the red or blue LED tone."""
    rgb = frame.to_float() if isinstance(frame, ImageRGB8) else np.asarray(frame, dtype=np.float64)
    h, s, v = rgb_to_hsv(rgb)
    tone = _in_windows(h, spec.red_hue) | _in_windows(h, spec.blue_hue)
    return tone & (s >= spec.min_saturation) & (v >= spec.min_value)
