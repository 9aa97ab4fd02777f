"""Pinhole camera with Brown-Conrady distortion, and the two-camera rig."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from ..imaging_io import read_json, write_json


@dataclass
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point lies outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def dist(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])

    @property
    def size(self):
        return (self.width, self.height)

    @property
    def distorted(self) -> bool:
        return bool(np.any(self.dist != 0))

    def distort_normalized(self, xn, yn):
        r2 = xn * xn + yn * yn
        radial = 1 + self.k1 * r2 + self.k2 * r2 ** 2 + self.k3 * r2 ** 3
        xd = xn * radial + 2 * self.p1 * xn * yn + self.p2 * (r2 + 2 * xn * xn)
        yd = yn * radial + self.p1 * (r2 + 2 * yn * yn) + 2 * self.p2 * xn * yn
        return xd, yd

    def undistort_normalized(self, xd, yd, iterations=20):
        """Fixed-point inversion of the distortion model."""
        xn, yn = np.array(xd, dtype=np.float64), np.array(yd, dtype=np.float64)
        if not self.distorted:
            return xn, yn
        for _ in range(iterations):
            r2 = xn * xn + yn * yn
            radial = 1 + self.k1 * r2 + self.k2 * r2 ** 2 + self.k3 * r2 ** 3
            dx = 2 * self.p1 * xn * yn + self.p2 * (r2 + 2 * xn * xn)
            dy = self.p1 * (r2 + 2 * yn * yn) + 2 * self.p2 * xn * yn
            xn = (xd - dx) / radial
            yn = (yd - dy) / radial
        return xn, yn

    def project(self, points_cam) -> np.ndarray:
        """Camera-frame points (N, 3) to distorted pixel coordinates (N, 2)."""
        p = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
        if np.any(p[:, 2] <= 0):
            raise ValueError("point behind the camera")
        xd, yd = self.distort_normalized(p[:, 0] / p[:, 2], p[:, 1] / p[:, 2])
        return np.column_stack([self.fx * xd + self.cx, self.fy * yd + self.cy])

    def pixel_rays(self, u, v):
        """Undistorted normalized ray directions (x, y) for pixel coordinates."""
        xd = (np.asarray(u, dtype=np.float64) - self.cx) / self.fx
        yd = (np.asarray(v, dtype=np.float64) - self.cy) / self.fy
        return self.undistort_normalized(xd, yd)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("fx", "fy", "cx", "cy", "width", "height", "k1", "k2", "k3", "p1", "p2")}

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeCamera":
        return cls(**{k: d[k] for k in
                      ("fx", "fy", "cx", "cy", "width", "height", "k1", "k2", "k3", "p1", "p2")})


def ideal_camera(f=800.0, width=640, height=480) -> PinholeCamera:
    return PinholeCamera(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


@dataclass
class Rectification:
    R1: np.ndarray
    R2: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    Q: np.ndarray


@dataclass
class StereoRig:
    """Left/right cameras; a left-frame point X maps to ``R @ X + T`` in the right frame.

    Translations are in mm. For a right camera displaced ``B`` mm along +x,
    ``T = (-B, 0, 0)``.
    """

    left: PinholeCamera
    right: PinholeCamera
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    T: np.ndarray = field(default_factory=lambda: np.array([-14.0, 0.0, 0.0]))
    rms_error: Optional[float] = None
    _rect: Optional[Rectification] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if np.linalg.norm(self.R.T @ self.R - np.eye(3)) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.norm(self.T) <= 0:
            raise ValueError("zero baseline")
        if self.left.size != self.right.size:
            raise ValueError("left and right image sizes differ")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.T))

    @property
    def rectification(self) -> Rectification:
        if self._rect is None:
            from .rectify import stereo_rectify
            self._rect = stereo_rectify(self)
        return self._rect

    @property
    def Q(self) -> np.ndarray:
        return self.rectification.Q

    def to_dict(self) -> dict:
        rect = self.rectification
        return {
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
            "R": self.R.tolist(),
            "T": self.T.tolist(),
            "baseline_mm": self.baseline,
            "rms_reprojection_px": self.rms_error,
            "R1": rect.R1.tolist(), "R2": rect.R2.tolist(),
            "P1": rect.P1.tolist(), "P2": rect.P2.tolist(),
            "Q": rect.Q.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StereoRig":
        rig = cls(PinholeCamera.from_dict(d["left"]), PinholeCamera.from_dict(d["right"]),
                  np.array(d["R"]), np.array(d["T"]), d.get("rms_reprojection_px"))
        if "Q" in d:
            rig._rect = Rectification(*(np.array(d[k]) for k in ("R1", "R2", "P1", "P2", "Q")))
        return rig

    def save(self, path) -> None:
        write_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "StereoRig":
        return cls.from_dict(read_json(path))


def ideal_rig(f=800.0, baseline_mm=14.0, width=640, height=480) -> StereoRig:
    """Undistorted, row-aligned rig; the default for simulated sweeps."""
    cam = ideal_camera(f, width, height)
    return StereoRig(cam, PinholeCamera(**cam.to_dict()), np.eye(3),
                     np.array([-baseline_mm, 0.0, 0.0]))


def rotation_matrix(rvec) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(rvec, dtype=np.float64)).as_matrix()


def rotation_vector(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()
