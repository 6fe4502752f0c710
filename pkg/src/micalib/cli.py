"""``micalib`` command line: synth, calibrate, evaluate, sweep."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import DEFAULT_BOUND, calibrate
from .data.io import (
    DatasetManifest,
    FormatError,
    FrameEntry,
    ManifestError,
    format_manifest,
    load_manifest,
    sample_frames,
    save_depth_map,
    save_pointcloud_bin,
)
from .data.synthetic import DEFAULT_CAMERA, DEFAULT_GT, PRESETS, render_sequence
from .experiments import (
    AXIS_ALIASES,
    PerturbationMode,
    batch_statistics,
    emit_bullseye,
    generate_perturbations,
    histogram_svg,
    hit_metric,
    joint_histogram,
    mi_surface_sweep,
    residual_errors,
    resolve_axis,
    run_batch,
    statistics_row,
    write_records_csv,
    write_statistics_csv,
)
from .features import ImageKind, Mode
from .geometry import PARAM_NAMES, ExtrinsicParams
from .mi import DEFAULT_BINS, DEFAULT_MIN_MATCHES, BinningConfig, MIObjectiveContext
from .optimizer import OptimizerConfig, write_trace_csv

log = logging.getLogger("micalib")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DEGENERATE = 2

OUTPUT_ENV = "MICALIB_OUTPUT_DIR"


class UsageError(Exception):
    """Bad flag value or unusable input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _add_data_args(p):
    p.add_argument("--manifest", required=True, help="dataset manifest file")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="d2d")
    p.add_argument("--frames", type=_positive_int, default=None,
                   help="use N frames sampled uniformly from the manifest (default: all)")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS, help="histogram bins per axis")
    p.add_argument("--range-lidar", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--range-camera", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--min-matches", type=int, default=DEFAULT_MIN_MATCHES)


def _add_opt_args(p):
    p.add_argument("--dof", type=int, choices=(3, 6), default=6)
    p.add_argument("--rho-begin", type=float, default=1.0)
    p.add_argument("--rho-end", type=float, default=1e-3)
    p.add_argument("--max-evals", type=_positive_int, default=2000)
    p.add_argument("--npt", type=int, default=None, help="interpolation points (default 2n+1)")
    p.add_argument("--bound", type=float, default=DEFAULT_BOUND,
                   help="search half-width in scaled units (1 = 1 deg = 5 cm)")


def _add_out_args(p):
    p.add_argument("--out", default=None,
                   help=f"output directory (default: ${OUTPUT_ENV} or ./micalib_out)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="micalib", description="Camera-LiDAR extrinsic calibration by mutual information.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic dataset and manifest")
    p.add_argument("--preset", default="boxes", help=f"scene preset: {', '.join(sorted(PRESETS))}")
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--noise-free", action="store_true", help="skip LiDAR noise and dropout")
    _add_out_args(p)

    p = sub.add_parser("calibrate", help="estimate the extrinsics from an initial guess")
    _add_data_args(p)
    _add_opt_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--init", type=float, nargs=6, metavar=PARAM_NAMES,
                   help="initial guess (degrees, meters)")
    g.add_argument("--delta", type=float, nargs=6, metavar=PARAM_NAMES,
                   help="initial guess as an offset from the manifest ground truth")
    g.add_argument("--error-deg", type=float, default=None,
                   help="perturb the manifest ground truth by this rotation error")
    p.add_argument("--error-cm", type=float, default=0.0,
                   help="translation error used with --error-deg")
    p.add_argument("--direction", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                   help="perturbation direction for --error-deg (normalized)")
    p.add_argument("--trace", action="store_true", help="also write the evaluation trace CSV")
    _add_out_args(p)

    p = sub.add_parser("evaluate", help="perturbation/recovery batches against ground truth")
    _add_data_args(p)
    _add_opt_args(p)
    p.add_argument("--error-deg", type=float, nargs="+", required=True)
    p.add_argument("--error-cm", type=float, nargs="+", default=[0.0],
                   help="one value, or one per --error-deg level")
    p.add_argument("--runs", type=int, default=200, help="perturbations per error level")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--bullseye-axes", nargs=2, default=("theta_x", "theta_y"))
    _add_out_args(p)

    p = sub.add_parser("sweep", help="MI surface over two parameters around a center")
    _add_data_args(p)
    p.add_argument("--axes", nargs=2, default=("theta_x", "theta_y"),
                   help=f"parameter names ({', '.join(PARAM_NAMES)}) or {', '.join(AXIS_ALIASES)}")
    p.add_argument("--range-deg", type=float, default=10.0)
    p.add_argument("--range-m", type=float, default=None)
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--center", type=float, nargs=6, metavar=PARAM_NAMES, default=None,
                   help="grid center (default: manifest ground truth)")
    _add_out_args(p)
    return parser


# ---------------------------------------------------------------- helpers

def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "micalib_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    manifest = load_manifest(args.manifest)
    mode = Mode(args.mode)
    if mode is Mode.I2I and manifest.kind is not ImageKind.INTENSITY:
        raise UsageError(f"--mode i2i needs a manifest with 'kind intensity', got {manifest.kind.value}")
    if mode is Mode.D2D and manifest.kind is ImageKind.INTENSITY:
        raise UsageError("--mode d2d needs a depth manifest, got 'kind intensity'")
    n = args.frames or len(manifest)
    if n > len(manifest):
        raise UsageError(f"--frames {n} exceeds the {len(manifest)} frames in the manifest")
    frames = sample_frames(manifest, n)
    try:
        default = BinningConfig.default_for(mode, manifest.kind, args.bins)
        binning = BinningConfig(args.bins,
                                tuple(args.range_lidar) if args.range_lidar else default.range_lidar,
                                tuple(args.range_camera) if args.range_camera else default.range_camera)
        ctx = MIObjectiveContext(frames, manifest.camera, mode, binning, args.min_matches)
    except ValueError as exc:
        raise UsageError(f"binning: {exc}") from None
    return manifest, ctx


def _opt_config(args) -> OptimizerConfig:
    try:
        cfg = OptimizerConfig(args.rho_begin, args.rho_end, args.max_evals, args.npt)
        cfg.npt(args.dof)
    except ValueError as exc:
        raise UsageError(f"optimizer: {exc}") from None
    if not args.bound > 0:
        raise UsageError("--bound must be positive")
    return cfg


def _require_gt(manifest: DatasetManifest, flag: str) -> ExtrinsicParams:
    if manifest.ground_truth is None:
        raise UsageError(f"{flag} needs a 'gt' line in the manifest")
    return manifest.ground_truth


def _fmt_params(p: ExtrinsicParams) -> str:
    a, t = p.angles, p.translation
    return (f"theta = ({a[0]:.4f}, {a[1]:.4f}, {a[2]:.4f}) deg, "
            f"t = ({t[0]:.4f}, {t[1]:.4f}, {t[2]:.4f}) m")


def _level_tag(deg: float, cm: float) -> str:
    tag = f"rot{deg:g}deg"
    if cm:
        tag += f"_trans{cm:g}cm"
    return tag


# --------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; available presets: {', '.join(sorted(PRESETS))}")
    if args.frames < 1:
        raise UsageError(f"--frames must be >= 1, got {args.frames}")
    out = _out_dir(args)
    frames = render_sequence(args.preset, args.frames, seed=args.seed, noisy=not args.noise_free)
    for sub in ("clouds", "depth", "intensity"):
        (out / sub).mkdir(exist_ok=True)
    depth_entries, int_entries = [], []
    for f in frames:
        cloud_p = out / "clouds" / f"{f.frame_id}.bin"
        depth_p = out / "depth" / f"{f.frame_id}.dmap"
        int_p = out / "intensity" / f"{f.frame_id}.dmap"
        save_pointcloud_bin(cloud_p, f.cloud)
        save_depth_map(depth_p, f.feature_image)
        save_depth_map(int_p, f.meta["intensity"])
        depth_entries.append(FrameEntry(f.frame_id, cloud_p, depth_p))
        int_entries.append(FrameEntry(f.frame_id, cloud_p, int_p))
    for name, entries, kind in (("manifest.txt", depth_entries, ImageKind.METRIC),
                                ("manifest_intensity.txt", int_entries, ImageKind.INTENSITY)):
        m = DatasetManifest(entries, DEFAULT_CAMERA, kind, DEFAULT_GT)
        (out / name).write_text(format_manifest(m, relative_to=out))
    print(f"wrote {len(frames)} frames of preset {args.preset!r} to {out}")
    print(f"  manifest: {out / 'manifest.txt'} (depth), {out / 'manifest_intensity.txt'} (intensity)")
    return EXIT_OK


def _initial_guess(args, manifest) -> ExtrinsicParams:
    if args.init is not None:
        return ExtrinsicParams(*args.init)
    if args.delta is not None:
        return _require_gt(manifest, "--delta") + ExtrinsicParams(*args.delta)
    if args.error_deg is not None:
        gt = _require_gt(manifest, "--error-deg")
        d = np.asarray(args.direction, dtype=np.float64)
        norm = np.linalg.norm(d)
        if not norm > 0:
            raise UsageError("--direction must be a non-zero vector")
        d = d / norm
        return gt + ExtrinsicParams(*(args.error_deg * d), *(args.error_cm / 100.0 * d))
    raise UsageError("calibrate needs an initial guess: --init, --delta or --error-deg")


def cmd_calibrate(args) -> int:
    manifest, ctx = _load(args)
    cfg = _opt_config(args)
    init = _initial_guess(args, manifest)
    if args.dof == 3 and args.error_deg is not None and args.error_cm:
        raise UsageError("--dof 3 keeps the translation fixed; --error-cm must be 0")
    out = _out_dir(args)
    res = calibrate(ctx, init, dof=args.dof, config=cfg, bound=args.bound)

    rows = [["parameter", "initial", "optimized"]]
    for name, a, b in zip(PARAM_NAMES, init.as_array(), res.params.as_array()):
        rows.append([name, repr(float(a)), repr(float(b))])
    rows += [["mi", "", repr(float(res.mi))], ["evaluations", "", str(res.evaluations)],
             ["termination", "", res.termination.value]]
    (out / "calibration.csv").write_text("".join(",".join(r) + "\n" for r in rows))
    if args.trace:
        write_trace_csv(out / "trace.csv", res.optimization.history, PARAM_NAMES[:3 if args.dof == 3 else 6])

    if res.degenerate:
        print("objective is degenerate: no frame has enough matched points "
              f"(min_matches={ctx.min_matches}) anywhere in the search box", file=sys.stderr)
        return EXIT_DEGENERATE
    for label, p in (("initial", init), ("final", res.params)):
        hist = joint_histogram(ctx, p)
        hist.to_csv(out / f"histogram_{label}.csv")
        (out / f"histogram_{label}.svg").write_text(histogram_svg(hist, f"{label} joint histogram"))
    print(f"initial:   {_fmt_params(init)}")
    print(f"optimized: {_fmt_params(res.params)}")
    print(f"MI = {res.mi:.6f} nats after {res.evaluations} evaluations ({res.termination.value})")
    if manifest.ground_truth is not None:
        ang, dist = residual_errors(res.params, manifest.ground_truth)
        print(f"vs ground truth: rotation {ang:.4f} deg, translation {dist * 100:.2f} cm, "
              f"{'hit' if hit_metric(res.params, manifest.ground_truth) else 'miss'}")
    print(f"results in {out / 'calibration.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.runs < 1:
        raise UsageError(f"--runs must be >= 1, got {args.runs}")
    cms = list(args.error_cm)
    if len(cms) == 1:
        cms = cms * len(args.error_deg)
    if len(cms) != len(args.error_deg):
        raise UsageError("--error-cm needs one value or one per --error-deg level")
    if any(v < 0 for v in args.error_deg + cms):
        raise UsageError("error levels must be non-negative")
    if args.dof == 3 and any(cms):
        raise UsageError("--dof 3 keeps the translation fixed; --error-cm must be 0")
    try:
        axes = [resolve_axis(a) for a in args.bullseye_axes]
    except ValueError as exc:
        raise UsageError(f"--bullseye-axes: {exc}") from None
    manifest, ctx = _load(args)
    gt = _require_gt(manifest, "evaluate")
    cfg = _opt_config(args)
    out = _out_dir(args)
    mode = PerturbationMode.ROTATION if args.dof == 3 else PerturbationMode.ROTATION_TRANSLATION
    stats_rows = []
    print(f"{'level':>22} {'runs':>5} {'hits':>5} {'rate':>7}")
    for deg, cm in zip(args.error_deg, cms):
        batch = generate_perturbations(mode, deg, cm / 100.0, args.runs)
        records = run_batch(ctx, gt, batch, cfg, dof=args.dof, threads=args.threads, bound=args.bound)
        tag = _level_tag(deg, cm)
        write_records_csv(out / f"records_{tag}.csv", records)
        emit_bullseye(records, axes, out / f"bullseye_{tag}.csv", out / f"bullseye_{tag}.svg")
        stats = batch_statistics(records)
        stats_rows.append(statistics_row(stats, ctx.mode, args.dof, deg, cm / 100.0))
        print(f"{tag:>22} {stats.runs:>5} {stats.hits:>5} {stats.hit_rate:>7.1%}")
    write_statistics_csv(out / "statistics.csv", stats_rows)
    print(f"results in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.steps < 2:
        raise UsageError(f"--steps must be >= 2, got {args.steps}")
    try:
        axes = [resolve_axis(a) for a in args.axes]
    except ValueError as exc:
        raise UsageError(f"--axes: {exc}") from None
    if axes[0] == axes[1]:
        raise UsageError("--axes needs two distinct parameters")
    manifest, ctx = _load(args)
    center = ExtrinsicParams(*args.center) if args.center else _require_gt(manifest, "sweep without --center")
    out = _out_dir(args)
    grid = mi_surface_sweep(ctx, center, axes, args.range_deg, args.steps, args.range_m)
    a, b = (PARAM_NAMES[k] for k in axes)
    grid.to_csv(out / f"sweep_{a}_{b}.csv")
    (out / f"sweep_{a}_{b}.svg").write_text(grid.to_svg())
    i, j = grid.argmax()
    print(f"max MI {grid.values[i, j]:.6f} at d_{a} = {grid.offsets_a[j]:+.4f}, "
          f"d_{b} = {grid.offsets_b[i]:+.4f}")
    print(f"results in {out / f'sweep_{a}_{b}.csv'}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "calibrate": cmd_calibrate, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ManifestError, FormatError, OSError) as exc:
        print(f"micalib {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
