"""End-to-end simulated experiments: flat-target stereo sweep and disk presses."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .evaluation import (DISTANCES_MM, EvalConfig, EvalResult, central_roi,
                         evaluate_sequence)
from .sim.membranes import FINISHES, SEE_THROUGH, MembraneSpec, preset
from .sim.stereo import DEFAULT_JITTER, plane_scene, render_stereo_pair
from .sim.tactile import (IndenterSpec, LightRig, ball_press_sequence, press,
                          random_disk_centers, reference_pair)
from .stereo.camera import StereoRig, ideal_rig
from .stereo.cloud import depth_from_cloud, remove_outliers, reproject
from .stereo.matching import MatcherSettings, block_match
from .stereo.rectify import rectify_pair
from .tactile.recon import TactileReconstructor, measure_disk_depth

log = logging.getLogger(__name__)


def stereo_depth(left, right, rig: StereoRig, settings: MatcherSettings = MatcherSettings(),
                 roi=None, k_neighbors: int = 20, std_ratio: float = 2.0,
                 rectified: bool = False):
    """Rectify, match, reproject and filter; returns ``(depth, cloud, disparity)``.

    Only pixels inside ``roi`` are reprojected when it is given.
    """
    if not rectified:
        left, right = rectify_pair(left, right, rig)
    disp = block_match(left, right, settings, None if roi is None else (roi[1], roi[3]))
    cloud, _ = reproject(disp, rig.Q, left, roi)
    if len(cloud) > k_neighbors:
        cloud = remove_outliers(cloud, k_neighbors, std_ratio)
    depth = depth_from_cloud(cloud, disp.disparity.values.shape)
    return depth, cloud, disp


@dataclass
class SweepConfig:
    membranes: Sequence[str] = SEE_THROUGH
    distances_mm: Sequence[float] = DISTANCES_MM
    n_frames: int = 10
    jitter: float = DEFAULT_JITTER
    seed: int = 0


def _cell_seed(seed, finish, distance):
    return [seed, FINISHES.index(finish), int(distance)]


def stereo_cell(membrane: MembraneSpec, distance_mm: float, n_frames: int, seed,
                rig: Optional[StereoRig] = None, jitter: float = DEFAULT_JITTER,
                settings: MatcherSettings = MatcherSettings()) -> EvalResult:
    """Render ``n_frames`` of a flat target at one distance and evaluate them."""
    rig = rig or ideal_rig()
    rng = np.random.default_rng(seed)
    scene = plane_scene(distance_mm)
    shape = (rig.left.height, rig.left.width)
    roi = central_roi(shape)
    frames = []
    for _ in range(n_frames):
        left, right = render_stereo_pair(scene, membrane, rig, rng, jitter)
        depth, _, _ = stereo_depth(left, right, rig, settings, roi=roi)
        frames.append(depth)
    P1 = rig.rectification.P1
    cfg = EvalConfig(distance_mm, roi, n_frames, membrane.finish, P1[0, 0], P1[0, 2], P1[1, 2])
    return evaluate_sequence(frames, cfg)


def stereo_sweep(cfg: SweepConfig = SweepConfig(), rig: Optional[StereoRig] = None) -> list:
    """Membrane x distance grid of flat-target evaluations."""
    results = []
    for m in cfg.membranes:
        spec = preset(m) if isinstance(m, str) else m
        for d in cfg.distances_mm:
            r = stereo_cell(spec, d, cfg.n_frames, _cell_seed(cfg.seed, spec.finish, d), rig, cfg.jitter)
            log.info("%s @ %g mm: rmse %.3f%% temporal %s", spec.finish, d, r.rmse_pct_mean,
                     r.temporal_noise_pct)
            results.append(r)
    return results


@dataclass
class DiskTrialConfig:
    n_trials: int = 30
    diameter_mm: float = 13.0
    depth_mm: float = 1.0
    n_calibration: int = 30
    ball_radius_mm: float = 4.0
    seed: int = 0


def calibrate_membrane(membrane: MembraneSpec, n_presses: int = 30, ball_radius_mm: float = 4.0,
                       seed: int = 0, rig: Optional[LightRig] = None, **params):
    """Simulated ball calibration of one membrane; returns a fitted reconstructor."""
    rng = np.random.default_rng([seed, 1])
    ref = reference_pair(membrane, rig, rng=rng)
    presses = ball_press_sequence(membrane, ball_radius_mm, n_presses, int(rng.integers(2 ** 31)), rig=rig)
    return TactileReconstructor(random_state=seed, **params).fit(presses, ref)


def disk_trials(membrane: MembraneSpec, cfg: DiskTrialConfig = DiskTrialConfig(),
                reconstructor: Optional[TactileReconstructor] = None):
    """Press the disk ``n_trials`` times at random spots; returns measured plateau depths."""
    rec = reconstructor or calibrate_membrane(membrane, cfg.n_calibration, cfg.ball_radius_mm, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    centers = random_disk_centers(cfg.n_trials, cfg.diameter_mm, int(rng.integers(2 ** 31)))
    out = []
    for c in centers:
        pair, _ = press(IndenterSpec.disk(cfg.diameter_mm, cfg.depth_mm, c), membrane, rng=rng)
        out.append(measure_disk_depth(rec.reconstruct(pair), c, cfg.diameter_mm))
    return out
