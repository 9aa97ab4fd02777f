"""Command-line front-end: ``stereotac <subcommand> [options]``.

Global options (``--config``, ``--seed``, ``--out``) come before the
subcommand. A JSON config file may set any option of the chosen subcommand
(keys use underscores); flags given on the command line win. The
``STEREOTAC_LOG`` environment variable sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (DISTANCES_MM, EvalConfig, assemble_report, central_roi,
                         disk_report, evaluate_sequence)
from .experiments import (DiskTrialConfig, SweepConfig, calibrate_membrane, disk_trials,
                          stereo_depth, stereo_sweep)
from .imaging_io import (FormatError, ImageRGB8, ReportTable, read_floatmap, read_image,
                         read_json, write_floatmap, write_image, write_json,
                         write_pointcloud, write_report)
from .sim.membranes import FINISHES, SEE_THROUGH, MembraneSpec, preset
from .sim.stereo import plane_scene, render_stereo_pair, synthetic_board_views, true_disparity
from .sim.tactile import (PX_PER_MM, ExternalScene, IndenterSpec, ReflectiveObject,
                          ball_press_sequence, deform_membrane, flat_surface, reference_pair,
                          render_tactile_pair)
from .stereo.calibration import BoardSpec, calibrate_stereo
from .stereo.camera import StereoRig, ideal_rig
from .stereo.cloud import reproject
from .stereo.matching import MatcherSettings
from .tactile.recon import (TactileReconstructor, TactileFramePair, measure_disk_depth,
                            read_calibration_csv, write_calibration_csv)

log = logging.getLogger("stereotac")

GLOBAL_KEYS = ("seed", "out")
# fewer presses than this and the held-out error says little about new contacts
OVERFIT_MIN_PRESSES = 5
OVERFIT_MIN_SAMPLES = 1000
ARTIFACT_THRESHOLD_MM = 0.01


class CliError(Exception):
    pass


# -- argument helpers -------------------------------------------------------

def parse_membrane(text) -> MembraneSpec:
    """A finish name or a path to a membrane JSON spec."""
    if isinstance(text, MembraneSpec):
        return text
    if text in FINISHES:
        return preset(text)
    path = Path(text)
    if not path.exists():
        raise CliError(f"unknown membrane {text!r}: not a finish ({', '.join(FINISHES)}) or a file")
    try:
        return MembraneSpec.from_dict(read_json(path))
    except (TypeError, KeyError) as e:
        raise CliError(f"invalid membrane spec {path}: {e}") from e


_INDENTER_RE = re.compile(r"^(disk|sphere)(\d+(?:\.\d+)?)$")


def parse_indenter(text, depth: float, center=None):
    """``diskD`` (diameter mm), ``sphereR`` (radius mm), ``none`` or a JSON spec path."""
    if text == "none":
        return None
    m = _INDENTER_RE.match(text)
    if m:
        size = float(m.group(2))
        if m.group(1) == "disk":
            return IndenterSpec.disk(size, depth, center)
        return IndenterSpec.sphere(size, depth, center)
    path = Path(text)
    if not path.exists():
        raise CliError(f"unknown indenter {text!r}")
    d = read_json(path)
    d.setdefault("penetration", depth)
    if center is not None:
        d["center"] = center
    try:
        return IndenterSpec.from_dict(d)
    except TypeError as e:
        raise CliError(f"invalid indenter spec {path}: {e}") from e


def _need_file(path, what):
    if path is None:
        raise CliError(f"missing {what}")
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(args, **extra):
    d = {"seed": args.seed, "subcommand": args.command, "version": __version__}
    d.update(extra)
    return d


def _pair_from(dx, dy) -> TactileFramePair:
    return TactileFramePair(read_image(_need_file(dx, "dx frame")),
                            read_image(_need_file(dy, "dy frame")))


# -- simulate ---------------------------------------------------------------

def _sim_tactile(args, out):
    membrane = parse_membrane(args.membrane)
    rng = np.random.default_rng(args.seed)
    center = tuple(args.center) if args.center else None
    indenter = parse_indenter(args.indenter, args.depth, center)
    scene = None
    if args.reflective_object is not None:
        obj = ReflectiveObject(args.reflective_object, args.reflectivity)
        scene = ExternalScene(reflective_object=obj)
    surface = flat_surface() if indenter is None else deform_membrane(indenter, membrane)
    pair = render_tactile_pair(surface, _light_rig(), membrane, scene, rng)
    write_image(pair.frame_dx, out / "frame_dx.ppm")
    write_image(pair.frame_dy, out / "frame_dy.ppm")
    write_floatmap(surface, out / "truth_surface.pfm")
    write_json(_meta(args, mode="tactile", membrane=membrane.to_dict(),
                     indenter=None if indenter is None else indenter.to_dict(),
                     reflective_object=None if scene is None else {
                         "standoff_mm": args.reflective_object, "reflectivity": args.reflectivity},
                     max_depth_mm=float(np.max(surface.values)) if surface.valid.any() else 0.0,
                     surface="truth_surface.pfm"), out / "truth.json")
    print(f"wrote tactile frame pair to {out}")


def _light_rig():
    from .sim.tactile import LightRig
    return LightRig()


def _sim_stereo(args, out):
    membrane = parse_membrane(args.membrane)
    rig = StereoRig.load(args.rig) if args.rig else ideal_rig()
    left, right = render_stereo_pair(plane_scene(args.distance), membrane, rig,
                                     np.random.default_rng(args.seed))
    write_image(left, out / "left.ppm")
    write_image(right, out / "right.ppm")
    if not args.rig:
        rig.save(out / "rig.json")
    write_json(_meta(args, mode="stereo", membrane=membrane.to_dict(), distance_mm=args.distance,
                     true_disparity_px=true_disparity(rig, args.distance)), out / "truth.json")
    print(f"wrote stereo pair to {out}")


def _sim_calibration(args, out):
    membrane = parse_membrane(args.membrane)
    rng = np.random.default_rng([args.seed, 1])
    ref = reference_pair(membrane, rng=rng)
    presses = ball_press_sequence(membrane, args.ball_radius, args.presses,
                                  int(rng.integers(2 ** 31)))
    write_image(ref.frame_dx, out / "reference_dx.ppm")
    write_image(ref.frame_dy, out / "reference_dy.ppm")
    records = []
    for i, p in enumerate(presses):
        names = (f"press_{i:03d}_dx.ppm", f"press_{i:03d}_dy.ppm")
        write_image(p.pair.frame_dx, out / names[0])
        write_image(p.pair.frame_dy, out / names[1])
        records.append({"dx": names[0], "dy": names[1], "center": [float(c) for c in p.center],
                        "radius_px": p.radius_px, "label_radius_px": p.label_radius_px})
    write_json(_meta(args, mode="calibration", membrane=membrane.to_dict(),
                     ball_radius_mm=args.ball_radius, reference=["reference_dx.ppm", "reference_dy.ppm"],
                     presses=records), out / "presses.json")
    print(f"wrote {len(presses)} calibration presses to {out}")


def _sim_board(args, out):
    rig = StereoRig.load(args.rig) if args.rig else ideal_rig()
    board = BoardSpec()
    L, R = synthetic_board_views(rig, args.views, args.seed, args.noise_px, board)
    write_json(_meta(args, mode="board", board={"cols": board.cols, "rows": board.rows,
                                                "pitch_mm": board.pitch_mm},
                     image_size=list(rig.left.size), noise_px=args.noise_px,
                     left=L.tolist(), right=R.tolist(), true_baseline_mm=rig.baseline),
               out / "corners.json")
    print(f"wrote {args.views} board views to {out / 'corners.json'}")


def cmd_simulate(args):
    out = _outdir(args)
    {"tactile": _sim_tactile, "stereo": _sim_stereo, "calibration": _sim_calibration,
     "board": _sim_board}[args.mode](args, out)


# -- calibrate-tactile ------------------------------------------------------

class _Press:
    def __init__(self, pair, center, radius_px, label_radius_px):
        self.pair, self.center = pair, tuple(center)
        self.radius_px, self.label_radius_px = radius_px, label_radius_px


def _load_presses(directory: Path):
    doc = read_json(_need_file(directory / "presses.json", "press index"))
    ref = _pair_from(directory / doc["reference"][0], directory / doc["reference"][1])
    presses = [_Press(_pair_from(directory / r["dx"], directory / r["dy"]), r["center"],
                      r["radius_px"], r.get("label_radius_px")) for r in doc["presses"]]
    return presses, ref


def cmd_calibrate_tactile(args):
    out = _outdir(args)
    params = dict(n_epochs=args.epochs, random_state=args.seed)
    rec = TactileReconstructor(**params)
    if args.csv:
        samples = read_calibration_csv(_need_file(args.csv, "calibration CSV"))
        if len(samples) == 0:
            raise CliError("empty dataset: the CSV holds no samples")
        n_presses = None
        rec.fit_samples(samples)
    else:
        if args.presses_dir:
            presses, ref = _load_presses(Path(args.presses_dir))
        else:
            membrane = parse_membrane(args.membrane)
            rng = np.random.default_rng([args.seed, 1])
            ref = reference_pair(membrane, rng=rng)
            presses = ball_press_sequence(membrane, args.ball_radius, args.presses,
                                          int(rng.integers(2 ** 31)))
        if not presses:
            raise CliError("empty dataset: no presses")
        n_presses = len(presses)
        samples = rec.labels_from_presses(presses, ref)
        write_calibration_csv(samples, out / "samples.csv")
        rec.fit_samples(samples, ref)
    rec.save(out / "model.json")
    err = rec.model_.validation_rmse_
    summary = _meta(args, n_presses=n_presses, n_samples=len(samples),
                    held_out_rmse_rad=None if np.isnan(err) else err, overfit_warning=False)
    if np.isnan(err):
        print("held-out RMSE: n/a (too few samples to hold any out)")
    else:
        print(f"held-out RMSE: {err:.4f} rad over {len(samples)} samples")
    if (n_presses is not None and n_presses < OVERFIT_MIN_PRESSES) or len(samples) < OVERFIT_MIN_SAMPLES:
        summary["overfit_warning"] = True
        msg = (f"warning: calibration set is small ({n_presses if n_presses is not None else '?'} presses, "
               f"{len(samples)} samples; at least {OVERFIT_MIN_PRESSES} presses and "
               f"{OVERFIT_MIN_SAMPLES} samples recommended); the model is likely to overfit")
        print(msg, file=sys.stderr)
    write_json(summary, out / "calibration.json")
    print(f"wrote model to {out / 'model.json'}")


# -- reconstruct ------------------------------------------------------------

def cmd_reconstruct(args):
    out = _outdir(args)
    rec = TactileReconstructor.load(_need_file(args.model, "model file"))
    pair = _pair_from(args.dx, args.dy)
    depth = rec.reconstruct(pair)
    write_floatmap(depth, out / "depth.pfm")
    z = depth.values
    peak = float(z.max())
    summary = _meta(args, peak_depth_mm=peak, plateau_depth_mm=None, no_contact=False,
                    artifact=False)
    if args.ply and peak > 0:
        ys, xs = np.nonzero(z > 0)
        from .imaging_io import PointCloud3D
        pts = np.column_stack([xs / rec.px_per_mm, ys / rec.px_per_mm, -z[ys, xs]])
        write_pointcloud(PointCloud3D(pts, None, np.column_stack([xs, ys])), out / "depth.ply")
    if peak <= 0:
        summary["no_contact"] = True
        print("no contact: depth map is all zero")
    else:
        print(f"peak depth: {peak:.4f} mm")
    if args.disk_center is not None:
        plateau = measure_disk_depth(depth, tuple(args.disk_center), args.disk_diameter)
        summary["plateau_depth_mm"] = plateau
        print(f"plateau depth: {plateau:.4f} mm")
    if args.no_contact_prior and peak > args.artifact_threshold:
        summary["artifact"] = True
        print(f"artifact: spurious imprint of {peak:.4f} mm although no contact was expected",
              file=sys.stderr)
    write_json(summary, out / "reconstruct.json")


# -- stereo -----------------------------------------------------------------

def cmd_stereo(args):
    out = _outdir(args)
    if args.calibrate:
        doc = read_json(_need_file(args.calibrate, "corner file"))
        b = doc.get("board", {})
        board = BoardSpec(b.get("cols", 8), b.get("rows", 6), b.get("pitch_mm", 17.0))
        rig = calibrate_stereo(doc["left"], doc["right"], board, tuple(doc.get("image_size", (640, 480))))
        rig.save(out / "rig.json")
        print(f"calibrated rig: baseline {rig.baseline:.4f} mm, RMS reprojection {rig.rms_error:.4f} px")
        return
    if args.ideal_rig:
        rig = ideal_rig()
    else:
        rig = StereoRig.load(_need_file(args.rig, "rig file (use --rig or --ideal-rig)"))
    left = read_image(_need_file(args.left, "left image"))
    right = read_image(_need_file(args.right, "right image"))
    settings = MatcherSettings(window=args.window, min_disparity=args.min_disparity,
                               max_disparity=args.max_disparity)
    roi = None if args.full_frame else central_roi((left.pixels.shape[0], left.pixels.shape[1]))
    depth, cloud, disp = stereo_depth(left, right, rig, settings, roi=roi, rectified=args.rectified)
    write_floatmap(disp.disparity, out / "disparity.pfm")
    write_floatmap(depth, out / "depth.pfm")
    valid = disp.disparity.valid
    d = disp.disparity.values[valid]
    summary = _meta(args, valid_pixels=int(valid.sum()), n_points=len(cloud),
                    median_disparity_px=float(np.median(d)) if d.size else None,
                    median_z_mm=None)
    if len(cloud):
        write_pointcloud(cloud, out / "cloud.ply")
        mz = float(np.median(cloud.points[:, 2]))
        summary["median_z_mm"] = mz
        print(f"median Z: {mz:.3f} mm over {len(cloud)} points")
    else:
        print("no valid points")
    if d.size:
        print(f"median disparity: {np.median(d):.3f} px")
    write_json(summary, out / "stereo.json")


# -- evaluate ---------------------------------------------------------------

def _write_table(table: ReportTable, path: Path, fmt: str):
    write_report(table, path.with_suffix("." + fmt), fmt)


def _eval_sweep(args, out):
    cfg = SweepConfig(tuple(args.membranes or SEE_THROUGH), tuple(args.distances or DISTANCES_MM),
                      args.frames, seed=args.seed)
    results = stereo_sweep(cfg)
    names = [preset(m).finish if isinstance(m, str) else m.finish for m in cfg.membranes]
    for metric, stem in (("rmse", "table_rmse"), ("temporal", "table_temporal"),
                         ("z_accuracy", "table_z_accuracy")):
        _write_table(assemble_report(results, metric, names, cfg.distances_mm), out / stem, args.format)
    write_json(_meta(args, kind="sweep", results=[r.to_dict() for r in results]),
               out / "sweep_results.json")
    for r in results:
        print(f"{r.membrane:>16s} {r.distance_mm:5g} mm  rmse {r.rmse_pct_mean:.3f}%  "
              f"temporal {r.temporal_noise_pct:.3f}%")


def _eval_tactile(args, out):
    cfg = DiskTrialConfig(n_trials=args.trials, seed=args.seed)
    depths = {}
    for m in args.membranes or FINISHES:
        spec = parse_membrane(m)
        depths[spec.finish] = disk_trials(spec, cfg)
        v = np.asarray(depths[spec.finish])
        print(f"{spec.finish:>18s}  mean {v.mean():.3f} mm  std {v.std(ddof=1) if len(v) > 1 else 0.0:.3f} mm")
    _write_table(disk_report(depths), out / "table_disk", args.format)
    write_json(_meta(args, kind="tactile", depths_mm=depths), out / "disk_results.json")


def _eval_frames(args, out):
    if args.gt is None:
        raise CliError("--gt is required for --kind frames")
    frames = [read_floatmap(_need_file(p, "depth frame")) for p in args.depth]
    if not frames:
        raise CliError("no depth frames given")
    cfg = EvalConfig(args.gt, None, len(frames), args.membrane_name, absolute=args.absolute)
    note = None
    results = []
    try:
        results = [evaluate_sequence(frames, cfg)]
    except ValueError as e:
        note = str(e)
        log.warning("cell left empty: %s", e)
        print(f"gap: {e}", file=sys.stderr)
    for metric, stem in (("rmse", "table_rmse"), ("temporal", "table_temporal"),
                         ("z_accuracy", "table_z_accuracy")):
        _write_table(assemble_report(results, metric, [args.membrane_name], [args.gt]),
                     out / stem, args.format)
    write_json(_meta(args, kind="frames", note=note,
                     results=[r.to_dict() for r in results]), out / "frames_results.json")


def cmd_evaluate(args):
    out = _outdir(args)
    {"sweep": _eval_sweep, "tactile": _eval_tactile, "frames": _eval_frames}[args.kind](args, out)


# -- parser -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="stereotac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    sub = p.add_subparsers(dest="command", required=True)
    subs = {}

    s = sub.add_parser("simulate", help="render tactile or stereo frames with ground truth")
    s.add_argument("--mode", choices=("tactile", "stereo", "calibration", "board"), default="tactile")
    s.add_argument("--membrane", default="transparent", help="finish name or membrane JSON")
    s.add_argument("--indenter", default="disk13",
                   help="diskD (diameter mm), sphereR (radius mm), none, or indenter JSON")
    s.add_argument("--depth", type=float, default=1.0, help="indentation depth in mm")
    s.add_argument("--center", type=float, nargs=2, metavar=("X", "Y"), help="contact centre in px")
    s.add_argument("--reflective-object", type=float, metavar="STANDOFF_MM",
                   help="add a shiny object hovering this far above the membrane")
    s.add_argument("--reflectivity", type=float, default=0.3)
    s.add_argument("--distance", type=float, default=200.0, help="target plane distance (stereo)")
    s.add_argument("--rig", help="rig JSON for stereo/board modes (default: ideal rig)")
    s.add_argument("--presses", type=int, default=30, help="number of calibration presses")
    s.add_argument("--ball-radius", type=float, default=4.0, help="calibration ball radius in mm")
    s.add_argument("--views", type=int, default=15, help="checkerboard views (board mode)")
    s.add_argument("--noise-px", type=float, default=0.2, help="corner noise (board mode)")
    s.set_defaults(func=cmd_simulate)
    subs["simulate"] = s

    s = sub.add_parser("calibrate-tactile", help="train the colour-to-gradient model")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--presses-dir", help="directory written by 'simulate --mode calibration'")
    src.add_argument("--csv", help="calibration samples CSV (R,B,x,y,dx,dy)")
    s.add_argument("--membrane", default="transparent", help="membrane for simulated presses")
    s.add_argument("--presses", type=int, default=30)
    s.add_argument("--ball-radius", type=float, default=4.0)
    s.add_argument("--epochs", type=int, default=1500)
    s.set_defaults(func=cmd_calibrate_tactile)
    subs["calibrate-tactile"] = s

    s = sub.add_parser("reconstruct", help="depth map from a tactile frame pair")
    s.add_argument("--model", required=False, help="model JSON from calibrate-tactile")
    s.add_argument("--dx", help="dx-step frame (PPM)")
    s.add_argument("--dy", help="dy-step frame (PPM)")
    s.add_argument("--ply", action="store_true", help="also write the imprint as a PLY cloud")
    s.add_argument("--disk-center", type=float, nargs=2, metavar=("X", "Y"),
                   help="report the plateau depth of a disk imprint centred here")
    s.add_argument("--disk-diameter", type=float, default=13.0)
    s.add_argument("--no-contact-prior", action="store_true",
                   help="flag any imprint as an artifact (nothing is known to touch the sensor)")
    s.add_argument("--artifact-threshold", type=float, default=ARTIFACT_THRESHOLD_MM)
    s.set_defaults(func=cmd_reconstruct)
    subs["reconstruct"] = s

    s = sub.add_parser("stereo", help="disparity, depth and point cloud from a stereo pair")
    s.add_argument("--rig", help="rig JSON")
    s.add_argument("--ideal-rig", action="store_true", help="use the nominal 14 mm rig")
    s.add_argument("--calibrate", metavar="CORNERS_JSON", help="calibrate a rig and write rig.json")
    s.add_argument("--left")
    s.add_argument("--right")
    s.add_argument("--rectified", action="store_true", help="inputs are already rectified")
    s.add_argument("--full-frame", action="store_true", help="match the whole frame, not the central ROI")
    s.add_argument("--window", type=int, default=11)
    s.add_argument("--min-disparity", type=int, default=0)
    s.add_argument("--max-disparity", type=int, default=128)
    s.set_defaults(func=cmd_stereo)
    subs["stereo"] = s

    s = sub.add_parser("evaluate", help="accuracy tables")
    s.add_argument("--kind", choices=("sweep", "tactile", "frames"), default="sweep")
    s.add_argument("--membranes", nargs="+", help="finishes or membrane JSON files")
    s.add_argument("--distances", type=float, nargs="+", help="plane distances in mm (sweep)")
    s.add_argument("--frames", type=int, default=10, help="frames per cell (sweep)")
    s.add_argument("--trials", type=int, default=30, help="disk presses per membrane (tactile)")
    s.add_argument("--depth", nargs="+", default=[], help="depth PFM frames (frames kind)")
    s.add_argument("--gt", type=float, help="ground-truth distance in mm (frames kind)")
    s.add_argument("--membrane-name", default="membrane", help="column label (frames kind)")
    s.add_argument("--absolute", action="store_true", help="absolute z-accuracy")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_evaluate)
    subs["evaluate"] = s
    return p, subs


def _apply_config(parser, subs, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = read_json(_need_file(known.config, "config file"))
    if not isinstance(cfg, dict):
        raise CliError("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    cmd = next((a for a in argv if a in subs), None)
    sub = subs.get(cmd)
    sub_keys = {a.dest for a in sub._actions} if sub else set()
    unknown = set(cfg) - set(GLOBAL_KEYS) - sub_keys - {"command"}
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    parser.set_defaults(**{k: v for k, v in cfg.items() if k in GLOBAL_KEYS})
    if sub:
        sub.set_defaults(**{k: v for k, v in cfg.items() if k in sub_keys})


def _setup_logging():
    level = os.environ.get("STEREOTAC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    parser, subs = build_parser()
    try:
        _apply_config(parser, subs, argv)
        args = parser.parse_args(argv)
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise CliError("--seed must be an unsigned 64-bit integer")
        if args.command == "reconstruct" and not args.model:
            raise CliError("missing model file (--model)")
        args.func(args)
    except (CliError, FormatError, ValueError, OSError, KeyError) as e:
        print(f"stereotac: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
