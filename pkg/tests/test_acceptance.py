"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from oracles import compact_bump, forward_gradients, poisson_dense
from stereotac.cli import main
from stereotac.evaluation import DISTANCES_MM, EvalConfig, central_roi, spatial_rmse_pct, z_accuracy
from stereotac.experiments import (DiskTrialConfig, SweepConfig, calibrate_membrane, disk_trials,
                                   stereo_depth, stereo_sweep)
from stereotac.imaging_io import FloatMap, ImageRGB8
from stereotac.sim.membranes import FINISHES, preset
from stereotac.sim.stereo import default_texture, plane_scene, render_stereo_pair, synthetic_board_views
from stereotac.sim.tactile import (ExternalScene, LightRig, ReflectiveObject, ball_press_sequence,
                                   flat_surface, reference_pair, render_tactile_pair)
from stereotac.stereo.calibration import calibrate_stereo
from stereotac.stereo.camera import PinholeCamera, StereoRig, ideal_rig, rotation_matrix
from stereotac.stereo.cloud import reproject
from stereotac.stereo.matching import block_match
from stereotac.tactile.poisson import fast_poisson
from stereotac.tactile.recon import ball_angle, gen_ball_labels

pytestmark = pytest.mark.acceptance


def test_poisson_matches_dense_direct_solve(verdict):
    rng = np.random.default_rng(2024)
    worst, t0 = 0.0, time.perf_counter()
    for _ in range(20):
        m, n = rng.integers(16, 65, size=2)
        gx, gy = forward_gradients(compact_bump(int(m), int(n), rng))
        fast = fast_poisson(gx, gy)
        ref = poisson_dense(gx, gy)
        worst = max(worst, np.linalg.norm(fast - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    verdict(1, worst < 1e-6 and elapsed < 5.0,
            f"max relative error {worst:.2e} (< 1e-6), {elapsed:.2f} s incl. dense oracle (< 5 s)")


def test_ball_labels_follow_arcsine(verdict):
    membrane = preset("transparent")
    (bp,) = ball_press_sequence(membrane, 4.0, 1, rng_seed=11)
    labels = gen_ball_labels(bp.pair, bp.center, bp.radius_px, reference=reference_pair(membrane, rng=1))
    w, h = 640, 480
    px = np.rint(labels.features[:, 2] * (w - 1))
    py = np.rint(labels.features[:, 3] * (h - 1))
    rng = np.random.default_rng(5)
    pick = rng.integers(0, len(labels), 10_000)
    cx, cy = bp.center
    direct = np.array([[math.asin((px[i] - cx) / bp.radius_px), math.asin((py[i] - cy) / bp.radius_px)]
                       for i in pick])
    err_labels = np.max(np.abs(labels.labels[pick] - direct))
    # antisymmetry over 1e4 random offsets inside the ball
    off = rng.uniform(-bp.radius_px, bp.radius_px, 10_000)
    anti = np.max(np.abs(ball_angle(-off, bp.radius_px) + ball_angle(off, bp.radius_px)))
    direct_off = np.max(np.abs(ball_angle(off, bp.radius_px)
                               - np.array([math.asin(o / bp.radius_px) for o in off])))
    worst = max(err_labels, direct_off)
    verdict(2, worst < 1e-12 and anti == 0.0,
            f"max |label - asin| {worst:.1e} rad (< 1e-12) over 1e4 pixels; antisymmetry residual {anti:.1e}")


def test_disk_depth_table(verdict):
    cfg = DiskTrialConfig()
    stats, t_sr = {}, None
    for finish in FINISHES:
        t0 = time.perf_counter()
        v = np.asarray(disk_trials(preset(finish), cfg))
        if finish == "semi_reflective":
            t_sr = time.perf_counter() - t0
        stats[finish] = (v.mean(), v.std(ddof=1))
    mean_sr = stats["semi_reflective"][0]
    stds = {f: s for f, (_, s) in stats.items()}
    reflective = max(stds["semi_reflective"], stds["opaque_reflective"])
    others = min(s for f, s in stds.items() if "reflective" not in f)
    ok = abs(mean_sr - 1.0) <= 0.2 and reflective < others and t_sr < 120
    table = ", ".join(f"{f} {m:.3f}:{s:.3f}" for f, (m, s) in stats.items())
    verdict(3, ok, f"semi_reflective mean {mean_sr:.3f} mm (1.0 +- 0.2), reflective std max {reflective:.3f} "
                   f"< other std min {others:.3f}; {t_sr:.0f} s per membrane (< 120 s) [{table}]")


def test_z_accuracy_constant_offset(verdict):
    worst = 0.0
    for gt in (100.0, 200.0, 300.0):
        for e in (-0.05, 0.0, 0.01, 0.09):
            depth = FloatMap(np.full((48, 64), gt * (1 + e)), "mm")
            worst = max(worst, abs(z_accuracy(depth, EvalConfig(gt)) - 100 * e))
    verdict(4, worst < 0.01, f"max |z_accuracy - 100e| {worst:.2e} % (< 0.01)")


def test_stereo_sweep_orderings(verdict):
    t0 = time.perf_counter()
    results = stereo_sweep(SweepConfig(n_frames=10))
    elapsed = time.perf_counter() - t0
    cell = {(r.membrane, r.distance_mm): r for r in results}
    bad = []
    for d in DISTANCES_MM:
        t, sm, sr = (cell[(m, d)] for m in ("transparent", "semi_matte", "semi_reflective"))
        if not (t.rmse_pct_mean <= sm.rmse_pct_mean < sr.rmse_pct_mean):
            bad.append(f"rmse@{d}")
        if not (sr.temporal_noise_pct > max(t.temporal_noise_pct, sm.temporal_noise_pct)):
            bad.append(f"temporal@{d}")
    # zero injected noise: one clean render per distance
    rig = ideal_rig()
    roi = central_roi((480, 640))
    clean = []
    for d in DISTANCES_MM:
        left, right = render_stereo_pair(plane_scene(d), preset("transparent"), rig)
        depth, _, _ = stereo_depth(left, right, rig, roi=roi)
        clean.append(spatial_rmse_pct(depth, EvalConfig(float(d), roi)))
    ok = not bad and max(clean) < 0.5 and elapsed < 300
    verdict(5, ok, f"orderings hold at {len(DISTANCES_MM) - len({b.split('@')[1] for b in bad})}/5 distances "
                   f"{bad or ''}; clean transparent RMSE max {max(clean):.3f}% (< 0.5); "
                   f"sweep {elapsed:.0f} s (< 300)")


def test_triangulation_and_calibration(verdict):
    rig = ideal_rig()
    cloud, _ = reproject(FloatMap(np.full((4, 4), 56.0), "disparity-px"), rig.Q)
    z_err = np.max(np.abs(cloud.points[:, 2] - 800 * 14 / 56.0))
    true = StereoRig(PinholeCamera(805, 800, 321, 238, 640, 480, k1=-0.05),
                     PinholeCamera(798, 796, 317, 243, 640, 480, k1=-0.04),
                     rotation_matrix([0.01, -0.015, 0.004]), [-14.0, 0.05, -0.1])
    L, R = synthetic_board_views(true, 20, 7, noise_px=0.2)
    est = calibrate_stereo(L, R)
    rel = abs(est.baseline - true.baseline) / true.baseline
    verdict(6, z_err == 0.0 and rel < 0.01,
            f"d=56 -> Z error {z_err:.1e} mm (exact); calibrated baseline {est.baseline:.4f} vs "
            f"{true.baseline:.4f} mm, {100 * rel:.3f}% (< 1%)")


def test_block_matching_pure_shift(verdict):
    tex = default_texture(seed=9).pixels
    left = ImageRGB8(tex[:480, 0:640].copy())
    right = ImageRGB8(tex[:480, 8:648].copy())
    d = block_match(left, right).disparity
    v = d.values[d.valid]
    frac = float(np.mean(np.abs(v - 8.0) <= 0.25))
    verdict(7, frac >= 0.95 and v.size > 0,
            f"{100 * frac:.1f}% of {v.size} valid pixels within 8.0 +- 0.25 px (>= 95%)")


def test_reflective_object_artifact(verdict):
    rec = calibrate_membrane(preset("transparent"))
    scene = ExternalScene(reflective_object=ReflectiveObject(1.0))
    peaks = []
    for opacity in (0.0515, 0.2210, 0.2446):
        pair = render_tactile_pair(flat_surface(), LightRig(), preset("transparent", opacity=opacity),
                                   scene, np.random.default_rng(0))
        peaks.append(float(rec.reconstruct(pair).values.max()))
    ok = peaks[0] > 0 and peaks[0] > peaks[1] > peaks[2]
    verdict(8, ok, "spurious peak " + " > ".join(f"{p:.3f} mm" for p in peaks)
            + " at opacity 5.15/22.10/24.46%")


def _artifacts(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_determinism(tmp_path, verdict):
    def run_all(root):
        def run(*a):
            assert main([str(x) for x in ("--seed", 42, "--out", *a)]) == 0
        run(root / "sim_t", "simulate", "--mode", "tactile", "--indenter", "sphere4", "--depth", 1.0)
        run(root / "sim_s", "simulate", "--mode", "stereo", "--membrane", "semi_reflective")
        run(root / "sim_c", "simulate", "--mode", "calibration", "--presses", 3)
        run(root / "sim_b", "simulate", "--mode", "board", "--views", 12)
        run(root / "cal", "calibrate-tactile", "--presses-dir", root / "sim_c", "--epochs", 50)
        run(root / "rec", "reconstruct", "--model", root / "cal" / "model.json",
            "--dx", root / "sim_t" / "frame_dx.ppm", "--dy", root / "sim_t" / "frame_dy.ppm", "--ply")
        run(root / "st", "stereo", "--rig", root / "sim_s" / "rig.json",
            "--left", root / "sim_s" / "left.ppm", "--right", root / "sim_s" / "right.ppm")
        run(root / "stc", "stereo", "--calibrate", root / "sim_b" / "corners.json")
        run(root / "ev", "evaluate", "--kind", "sweep", "--distances", 150, "--frames", 2)
        run(root / "evt", "evaluate", "--kind", "tactile", "--membranes", "semi_matte", "--trials", 2)
        run(root / "evf", "evaluate", "--kind", "frames", "--gt", 150,
            "--depth", root / "st" / "depth.pfm", root / "st" / "depth.pfm")
        return _artifacts(root)

    a = run_all(tmp_path / "a")
    b = run_all(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differing
    verdict(9, ok, f"{len(a)} artifacts from 11 subcommand runs byte-identical across two runs"
            + (f"; differing: {differing}" if differing else ""))
