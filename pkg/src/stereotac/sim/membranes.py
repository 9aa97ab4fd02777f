"""Optical membrane models and the lux-meter opacity procedure."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

FINISHES = (
    "transparent",
    "semi_reflective",
    "semi_matte",
    "opaque_reflective",
    "opaque_matte",
)

# Lux readings behind each membrane for a 466 lux source (stable lamp + lux meter).
NO_MEMBRANE_LUX = 466.0
MEASURED_LUX = {
    "transparent": 442.0,
    "semi_reflective": 352.0,
    "semi_matte": 363.0,
    "opaque_reflective": 93.0,
    "opaque_matte": 141.0,
}

SEE_THROUGH = ("transparent", "semi_matte", "semi_reflective")


@dataclass(frozen=True)
class MembraneSpec:
    """Optical and mechanical description of one coated elastomer.

    ``specular_exponent`` sets how sharply the coating's reflectance follows
    the local surface normal: glossy (reflective) paint keeps most of the
    shading contrast, matte paint scatters a large share of it uniformly.
    ``speckle_density`` is the fraction of pixels covered by paint spots in
    vision mode. ``stiffness_radius`` is the support (px) of the Gaussian
    kernel that smooths indentations.
    """

    finish: str
    opacity: float
    specular_exponent: float = 1.0
    speckle_density: float = 0.0
    stiffness_radius: float = 24.0

    def __post_init__(self):
        if self.finish not in FINISHES:
            raise ValueError(f"unknown finish {self.finish!r}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must lie in [0, 1], got {self.opacity}")
        if not 0.0 <= self.speckle_density <= 1.0:
            raise ValueError(f"speckle_density must lie in [0, 1], got {self.speckle_density}")
        if self.stiffness_radius < 0:
            raise ValueError("stiffness_radius must be >= 0")
        if self.specular_exponent < 0:
            raise ValueError("specular_exponent must be >= 0")

    @property
    def shading_contrast(self) -> float:
        """Share of reflected LED light that depends on the surface normal."""
        s = self.specular_exponent
        return s / (1.0 + s)

    @property
    def reflective(self) -> bool:
        return self.finish.endswith("reflective")

    def to_dict(self) -> dict:
        return {
            "finish": self.finish,
            "opacity": self.opacity,
            "specular_exponent": self.specular_exponent,
            "speckle_density": self.speckle_density,
            "stiffness_radius": self.stiffness_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MembraneSpec":
        if "finish" in d and set(d) == {"finish"}:
            return preset(d["finish"])
        return cls(**d)

    def with_opacity(self, opacity: float) -> "MembraneSpec":
        return replace(self, opacity=opacity)


def opacity_from_lux(transmitted_lux: float, reference_lux: float = NO_MEMBRANE_LUX) -> float:
    return 1.0 - transmitted_lux / reference_lux


# Simulator constants, tuned so the tactile and vision sweeps show the same
# ordering between finishes as the measured sensor.
_FINISH_PARAMS = {
    "transparent": dict(specular_exponent=0.5, speckle_density=0.0),
    "semi_reflective": dict(specular_exponent=8.0, speckle_density=0.08),
    "semi_matte": dict(specular_exponent=0.5, speckle_density=0.01),
    "opaque_reflective": dict(specular_exponent=8.0, speckle_density=0.0),
    "opaque_matte": dict(specular_exponent=0.5, speckle_density=0.0),
}


def preset(finish: str, **overrides) -> MembraneSpec:
    """Membrane whose opacity reproduces the lux measurement for ``finish``."""
    if finish not in FINISHES:
        raise ValueError(f"unknown finish {finish!r}")
    params = dict(_FINISH_PARAMS[finish])
    params["opacity"] = opacity_from_lux(MEASURED_LUX[finish])
    params.update(overrides)
    return MembraneSpec(finish=finish, **params)


def measure_opacity(membrane: Optional[MembraneSpec], source_lux: float):
    """Simulate the lux-meter measurement behind ``membrane``.

    Returns ``(transmitted_lux, opacity_pct)``; ``opacity_pct`` is ``None``
    when no membrane is mounted (the reading is the reference itself).
    """
    if source_lux <= 0:
        raise ValueError("source_lux must be positive")
    reference = float(source_lux)
    if membrane is None:
        return reference, None
    transmitted = source_lux * (1.0 - membrane.opacity)
    return transmitted, (1.0 - transmitted / reference) * 100.0
