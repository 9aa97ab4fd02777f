"""Tactile-mode rendering: membrane deformation and two-step LED shading.

Coordinates are pixels on the fixed 640x480 sensor grid (15 px/mm). LED rows
sit on the grid perimeter: row 1 on the right edge, row 3 on the left, row 2
on the bottom, row 4 on the top. Surface heights are in millimetres,
negative where the membrane is pushed in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from ..imaging_io import FloatMap, ImageRGB8
from .membranes import MembraneSpec

GRID_WIDTH = 640
GRID_HEIGHT = 480
PX_PER_MM = 15.0

TACTILE_NOISE_FLOOR = 0.004
TACTILE_NOISE_TRANSMISSION = 0.02
LEAK_DECAY_MM = 1.0
LABEL_GUARD_SIGMAS = 2.5

_CHANNEL = {"red": 0, "blue": 2}


@dataclass
class IndenterSpec:
    """Rigid indenter: an analytic primitive or a heightfield profile.

    ``shape`` is ``"sphere"`` (needs ``radius_mm``), ``"disk"`` (needs
    ``diameter_mm``), ``"plane"``, or a 2-D array of profile heights in mm on
    the sensor grid whose minimum is the tip.
    """

    shape: Union[str, np.ndarray]
    penetration: float
    center: tuple = (GRID_WIDTH // 2, GRID_HEIGHT // 2)
    radius_mm: Optional[float] = None
    diameter_mm: Optional[float] = None

    def __post_init__(self):
        if self.penetration < 0:
            raise ValueError("penetration must be >= 0")
        if isinstance(self.shape, str):
            if self.shape == "sphere" and not (self.radius_mm and self.radius_mm > 0):
                raise ValueError("sphere indenter needs a positive radius_mm")
            if self.shape == "disk" and not (self.diameter_mm and self.diameter_mm > 0):
                raise ValueError("disk indenter needs a positive diameter_mm")
            if self.shape not in ("sphere", "disk", "plane"):
                raise ValueError(f"unknown indenter shape {self.shape!r}")

    @classmethod
    def sphere(cls, radius_mm, penetration, center=None):
        return cls("sphere", penetration, center or cls.center, radius_mm=radius_mm)

    @classmethod
    def disk(cls, diameter_mm, penetration, center=None):
        return cls("disk", penetration, center or cls.center, diameter_mm=diameter_mm)

    def to_dict(self) -> dict:
        if not isinstance(self.shape, str):
            raise ValueError("heightfield indenters are not JSON-serializable")
        d = {"shape": self.shape, "penetration": self.penetration,
             "center": [float(c) for c in self.center]}
        if self.radius_mm is not None:
            d["radius_mm"] = self.radius_mm
        if self.diameter_mm is not None:
            d["diameter_mm"] = self.diameter_mm
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IndenterSpec":
        d = dict(d)
        d["center"] = tuple(d.get("center", cls.center))
        return cls(**d)

    def profile(self, shape=(GRID_HEIGHT, GRID_WIDTH), px_per_mm=PX_PER_MM) -> np.ndarray:
        """Height of the indenter's lower surface above its tip, in mm (inf = no body)."""
        h, w = shape
        if not isinstance(self.shape, str):
            prof = np.asarray(self.shape, dtype=np.float64)
            if prof.shape != (h, w):
                raise ValueError(f"indenter larger than the sensor grid: heightfield "
                                 f"{prof.shape} vs grid {(h, w)}")
            return prof - np.nanmin(prof)
        if self.shape == "plane":
            return np.zeros((h, w))
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        rho = np.hypot(xx - self.center[0], yy - self.center[1]) / px_per_mm
        if self.shape == "sphere":
            r = self.radius_mm
            if 2 * r * px_per_mm > min(h, w):
                raise ValueError(f"indenter larger than the sensor grid: sphere of radius {r} mm")
            inside = rho < r
            prof = np.full((h, w), np.inf)
            prof[inside] = r - np.sqrt(r * r - rho[inside] ** 2)
            return prof
        d = self.diameter_mm
        if d * px_per_mm > min(h, w):
            raise ValueError(f"indenter larger than the sensor grid: disk of diameter {d} mm")
        return np.where(rho * px_per_mm <= d * px_per_mm / 2.0, 0.0, np.inf)


def contact_radius_px(radius_mm: float, penetration: float, px_per_mm=PX_PER_MM) -> float:
    """Radius of the circle where a pressed sphere meets the undeformed plane."""
    p = min(penetration, radius_mm)
    return float(np.sqrt(radius_mm ** 2 - (radius_mm - p) ** 2) * px_per_mm)


def deform_membrane(indenter: IndenterSpec, membrane: MembraneSpec,
                    shape=(GRID_HEIGHT, GRID_WIDTH)) -> FloatMap:
    """Membrane surface height (mm, <= 0) under ``indenter``.

    The indenter is clamped at the rest plane and smoothed by a Gaussian whose
    support is ``membrane.stiffness_radius`` pixels (sigma = radius / 3).
    """
    prof = indenter.profile(shape)
    h = np.minimum(0.0, prof - indenter.penetration)
    if membrane.stiffness_radius > 0 and indenter.penetration > 0:
        sigma = membrane.stiffness_radius / 3.0
        h = gaussian_filter(h, sigma, mode="nearest", truncate=3.0)
        h = np.clip(h, -indenter.penetration, 0.0)
    return FloatMap(h, unit="mm")


@dataclass
class LightRig:
    """LED row colours for both illumination steps plus shading constants.

    Rows are indexed 1-4; each step lists the colour of rows (1, 2, 3, 4).
    ``elevation_deg`` is the angle of the light above the membrane plane and
    ``attenuation_coeff`` the exponential falloff per pixel of distance from
    the row.
    """

    dx_colors: tuple = ("blue", "off", "red", "off")
    dy_colors: tuple = ("off", "blue", "off", "red")
    intensity: float = 0.9
    attenuation_coeff: float = 1.0 / 640.0
    elevation_deg: float = 45.0

    def __post_init__(self):
        self.dx_colors = tuple(self.dx_colors)
        self.dy_colors = tuple(self.dy_colors)
        for name, cols, lit, dark in (("dx", self.dx_colors, (0, 2), (1, 3)),
                                      ("dy", self.dy_colors, (1, 3), (0, 2))):
            if len(cols) != 4:
                raise ValueError(f"{name} step needs four row colours")
            if {cols[i] for i in lit} != {"blue", "red"}:
                raise ValueError(f"{name} step must light rows {lit[0] + 1},{lit[1] + 1} "
                                 f"in blue and red, got {cols}")
            if any(cols[i] != "off" for i in dark):
                raise ValueError(f"{name} step must keep rows {dark[0] + 1},{dark[1] + 1} off")

    def to_dict(self) -> dict:
        return {"dx_colors": list(self.dx_colors), "dy_colors": list(self.dy_colors),
                "intensity": self.intensity, "attenuation_coeff": self.attenuation_coeff,
                "elevation_deg": self.elevation_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "LightRig":
        return cls(**d)


@dataclass
class ReflectiveObject:
    """Shiny object hovering above the membrane (not touching it)."""

    standoff_mm: float
    reflectivity: float = 0.3
    center: tuple = (GRID_WIDTH // 2, GRID_HEIGHT // 2)
    radius_mm: float = 3.0


@dataclass
class ExternalScene:
    """What lies outside the membrane.

    ``distance_mm`` is the standoff of a textured plane used in vision mode;
    ``ambient`` scales the radiance that reaches the camera through the
    membrane in tactile mode.
    """

    distance_mm: Optional[float] = None
    texture: Optional[ImageRGB8] = None
    ambient: float = 0.0
    reflective_object: Optional[ReflectiveObject] = None
    texel_mm: float = 0.25

    def __post_init__(self):
        if self.distance_mm is not None and not 50.0 <= self.distance_mm <= 600.0:
            raise ValueError(f"scene distance {self.distance_mm} mm outside the 50-600 mm range")
        if self.ambient < 0:
            raise ValueError("ambient must be >= 0")

    def radiance(self, shape) -> np.ndarray:
        """Scene radiance seen straight through the membrane, (H, W, 3) floats."""
        h, w = shape
        if self.texture is None:
            return np.full((h, w, 3), self.ambient)
        tex = self.texture.to_float()
        if tex.shape[:2] != (h, w):
            tex = zoom(tex, (h / tex.shape[0], w / tex.shape[1], 1), order=1)
        return self.ambient * tex


@dataclass
class TactileFramePair:
    frame_dx: ImageRGB8
    frame_dy: ImageRGB8

    def __post_init__(self):
        if self.frame_dx.pixels.shape != self.frame_dy.pixels.shape:
            raise ValueError("dx and dy frames differ in size")

    @property
    def shape(self):
        return self.frame_dx.pixels.shape[:2]


def _row_geometry(shape, elevation_deg):
    """Per-row unit light vector and distance-to-row field."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    e = np.deg2rad(elevation_deg)
    ce, se = np.cos(e), np.sin(e)
    return [
        (np.array([ce, 0.0, se]), (w - 1) - xx),   # row 1, right edge
        (np.array([0.0, ce, se]), (h - 1) - yy),   # row 2, bottom edge
        (np.array([-ce, 0.0, se]), xx),            # row 3, left edge
        (np.array([0.0, -ce, se]), yy),            # row 4, top edge
    ]


def surface_normals(height_mm: np.ndarray, px_per_mm=PX_PER_MM) -> np.ndarray:
    """Camera-facing unit normals (H, W, 3); n = (dh/dx, dh/dy, 1) / norm."""
    hy, hx = np.gradient(height_mm, 1.0 / px_per_mm)
    n = np.stack([hx, hy, np.ones_like(hx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _shade_step(normals, colors, rig, contrast, geometry):
    out = np.zeros(normals.shape[:2] + (3,))
    floor = np.sin(np.deg2rad(rig.elevation_deg))
    for color, (l, dist) in zip(colors, geometry):
        if color == "off":
            continue
        lam = np.maximum(0.0, normals @ l)
        lobe = contrast * lam + (1.0 - contrast) * floor
        out[..., _CHANNEL[color]] += rig.intensity * np.exp(-rig.attenuation_coeff * dist) * lobe
    return out


def _leakage(obj: ReflectiveObject, colors, rig, membrane, geometry, shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r_px = obj.radius_mm * PX_PER_MM
    dx, dy = xx - obj.center[0], yy - obj.center[1]
    inside = np.hypot(dx, dy) < r_px
    nx = np.where(inside, dx / r_px, 0.0)
    ny = np.where(inside, dy / r_px, 0.0)
    nz = np.sqrt(np.clip(1.0 - nx ** 2 - ny ** 2, 0.0, 1.0))
    n_obj = np.stack([nx, ny, nz], axis=-1)
    # light crosses the coating twice: out to the object and back
    gain = obj.reflectivity * (1.0 - membrane.opacity) ** 2 * np.exp(-obj.standoff_mm / LEAK_DECAY_MM)
    out = np.zeros((h, w, 3))
    for color, (l, dist) in zip(colors, geometry):
        if color == "off":
            continue
        lam = np.maximum(0.0, n_obj @ l)
        out[..., _CHANNEL[color]] += rig.intensity * np.exp(-rig.attenuation_coeff * dist) * lam
    return gain * out * inside[..., None]


def tactile_noise_std(membrane: MembraneSpec) -> float:
    """Per-pixel sensor noise after exposure compensation for the coating."""
    return TACTILE_NOISE_FLOOR + TACTILE_NOISE_TRANSMISSION * (1.0 - membrane.opacity)


def _as_rng(rng):
    if rng is None or isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def render_tactile_float(surface: FloatMap, rig: LightRig, membrane: MembraneSpec,
                         scene: Optional[ExternalScene] = None, rng=None):
    """Unquantized (dx, dy) renders as float arrays; see :func:`render_tactile_pair`."""
    shape = surface.values.shape
    height = np.where(surface.valid, surface.values.astype(np.float64), 0.0)
    normals = surface_normals(height)
    geometry = _row_geometry(shape, rig.elevation_deg)
    contrast = membrane.shading_contrast
    rng = _as_rng(rng)
    frames = []
    for colors in (rig.dx_colors, rig.dy_colors):
        img = _shade_step(normals, colors, rig, contrast, geometry)
        if scene is not None:
            img += (1.0 - membrane.opacity) * scene.radiance(shape)
            if scene.reflective_object is not None:
                img += _leakage(scene.reflective_object, colors, rig, membrane, geometry, shape)
        if rng is not None:
            img += rng.normal(0.0, tactile_noise_std(membrane), img.shape)
        frames.append(img)
    return frames[0], frames[1]


def render_tactile_pair(surface: FloatMap, rig: LightRig, membrane: MembraneSpec,
                        scene: Optional[ExternalScene] = None, rng=None) -> TactileFramePair:
    """Render the two sequential LED steps over a deformed membrane.

    Each lit row adds a Lambert-type lobe scaled by the row intensity and an
    exponential falloff with distance to the row. Scene radiance leaks in
    through ``1 - opacity``; a reflective object hovering over the membrane
    returns LED light scaled by ``reflectivity * (1 - opacity)**2``. Sensor
    noise is added only when ``rng`` (a seed or Generator) is given.
    """
    dx, dy = render_tactile_float(surface, rig, membrane, scene, rng)
    return TactileFramePair(ImageRGB8.from_float(dx), ImageRGB8.from_float(dy))


def flat_surface(shape=(GRID_HEIGHT, GRID_WIDTH)) -> FloatMap:
    return FloatMap(np.zeros(shape), unit="mm")


@dataclass
class BallPress:
    """One calibration press with its exact ground truth."""

    pair: TactileFramePair
    center: tuple
    radius_px: float
    contact_radius_px: float
    label_radius_px: float
    surface: Optional[FloatMap] = field(default=None, repr=False)


def ball_press_sequence(membrane: MembraneSpec, ball_radius_mm: float, n_frames: int,
                        rng_seed: int, penetration_mm: float = 3.0,
                        rig: Optional[LightRig] = None,
                        scene: Optional[ExternalScene] = None,
                        noise: bool = True) -> list:
    """Press a calibration ball at ``n_frames`` uniformly random positions.

    The ball footprint always lies fully inside the grid. ``label_radius_px``
    is the contact radius minus a ``LABEL_GUARD_SIGMAS`` band where membrane smoothing
    bends the surface away from the ball.
    """
    if ball_radius_mm <= 0:
        raise ValueError("ball radius must be positive")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rig = rig or LightRig()
    r_px = ball_radius_mm * PX_PER_MM
    if 2 * r_px + 2 >= min(GRID_WIDTH, GRID_HEIGHT):
        raise ValueError("ball does not fit the sensor grid")
    rng = np.random.default_rng(rng_seed)
    a_px = contact_radius_px(ball_radius_mm, penetration_mm)
    guard = LABEL_GUARD_SIGMAS * membrane.stiffness_radius / 3.0
    presses = []
    for _ in range(n_frames):
        cx = rng.uniform(r_px + 1, GRID_WIDTH - r_px - 1)
        cy = rng.uniform(r_px + 1, GRID_HEIGHT - r_px - 1)
        ind = IndenterSpec.sphere(ball_radius_mm, penetration_mm, (cx, cy))
        surf = deform_membrane(ind, membrane)
        pair = render_tactile_pair(surf, rig, membrane, scene, rng if noise else None)
        presses.append(BallPress(pair, (cx, cy), r_px, a_px, max(0.0, a_px - guard), surf))
    return presses


def press(indenter: IndenterSpec, membrane: MembraneSpec, rig: Optional[LightRig] = None,
          scene: Optional[ExternalScene] = None, rng=None):
    """Deform and render in one go; returns ``(pair, surface)``."""
    surf = deform_membrane(indenter, membrane)
    return render_tactile_pair(surf, rig or LightRig(), membrane, scene, rng), surf


def reference_pair(membrane: MembraneSpec, rig: Optional[LightRig] = None,
                   scene: Optional[ExternalScene] = None, rng=None,
                   n_average: int = 8) -> TactileFramePair:
    """No-contact frames, averaged over ``n_average`` captures when noisy."""
    rig = rig or LightRig()
    surf = flat_surface()
    rng = _as_rng(rng)
    if rng is None:
        return render_tactile_pair(surf, rig, membrane, scene)
    acc_dx, acc_dy = 0.0, 0.0
    for _ in range(n_average):
        dx, dy = render_tactile_float(surf, rig, membrane, scene, rng)
        acc_dx = acc_dx + np.clip(dx, 0, 1)
        acc_dy = acc_dy + np.clip(dy, 0, 1)
    return TactileFramePair(ImageRGB8.from_float(acc_dx / n_average),
                            ImageRGB8.from_float(acc_dy / n_average))


def random_disk_centers(n: int, diameter_mm: float, rng_seed: int, margin_px: float = 40.0):
    """Uniformly random disk centres keeping the imprint and its skirt inside the grid."""
    rng = np.random.default_rng(rng_seed)
    r = diameter_mm * PX_PER_MM / 2.0 + margin_px
    xs = rng.uniform(r, GRID_WIDTH - r, n)
    ys = rng.uniform(r, GRID_HEIGHT - r, n)
    return [(float(x), float(y)) for x, y in zip(xs, ys)]


def centers_distinct(centers: Sequence) -> bool:
    return len({(round(c[0], 6), round(c[1], 6)) for c in centers}) == len(centers)
