"""Perturbation/recovery experiments, hit statistics and plot data."""
from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .calibration import DEFAULT_BOUND, DEFAULT_SCALING, calibrate
from .features import Frame, Mode, lidar_features
from .geometry import (
    PARAM_NAMES,
    CameraModel,
    ExtrinsicParams,
    fibonacci_sphere,
    params_to_transform,
    project_points,
    rotation_error_angle,
)
from .mi import JointHistogram, MIObjectiveContext, frame_joint_counts, objective
from .optimizer import OptimizerConfig

log = logging.getLogger(__name__)

HIT_ROTATION_DEG = 0.5
HIT_TRANSLATION_M = 0.20
# residuals are compared after rounding so float noise cannot decide the strict boundary
_HIT_DECIMALS = 9

AXIS_ALIASES = {"rx": "theta_x", "ry": "theta_y", "rz": "theta_z",
                "tx": "t_x", "ty": "t_y", "tz": "t_z"}


class PerturbationMode(str, enum.Enum):
    ROTATION = "rotation"
    ROTATION_TRANSLATION = "rotation+translation"


@dataclass(frozen=True, eq=False)
class PerturbationBatch:
    mode: PerturbationMode
    rotation_magnitude: float
    translation_magnitude: float
    directions: np.ndarray
    perturbations: tuple

    def __len__(self) -> int:
        return len(self.perturbations)


def generate_perturbations(mode, rot_deg: float, trans_m: float = 0.0, n: int = 200) -> PerturbationBatch:
    """Scale ``n`` Fibonacci directions by the error magnitudes.

    The direction scales the Euler components directly; in 6-DoF mode the
    same direction also scales the translation.
    """
    mode = PerturbationMode(mode)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if rot_deg < 0 or trans_m < 0:
        raise ValueError("error magnitudes must be non-negative")
    if mode is PerturbationMode.ROTATION:
        trans_m = 0.0
    dirs = fibonacci_sphere(n)
    dirs.setflags(write=False)
    deltas = tuple(
        ExtrinsicParams(*(rot_deg * d), *(trans_m * d)) for d in dirs
    )
    return PerturbationBatch(mode, float(rot_deg), float(trans_m), dirs, deltas)


def apply_perturbation(gt: ExtrinsicParams, delta: ExtrinsicParams) -> ExtrinsicParams:
    return gt + delta


def residual_errors(optimized: ExtrinsicParams, gt: ExtrinsicParams):
    """``(rotation angle in degrees, translation distance in meters)``."""
    angle = rotation_error_angle(params_to_transform(optimized).rotation,
                                 params_to_transform(gt).rotation)
    dist = float(np.linalg.norm(optimized.translation - gt.translation))
    return angle, dist


def hit_metric(optimized: ExtrinsicParams, gt: ExtrinsicParams) -> bool:
    angle, dist = residual_errors(optimized, gt)
    return (round(angle, _HIT_DECIMALS) < HIT_ROTATION_DEG
            and round(dist, _HIT_DECIMALS) < HIT_TRANSLATION_M)


@dataclass(frozen=True)
class RunRecord:
    initial: ExtrinsicParams
    optimized: ExtrinsicParams
    ground_truth: ExtrinsicParams
    best_mi: float
    evaluations: int
    hit: bool
    termination: str = ""

    @property
    def residual(self) -> np.ndarray:
        return self.optimized.as_array() - self.ground_truth.as_array()

    @property
    def initial_residual(self) -> np.ndarray:
        return self.initial.as_array() - self.ground_truth.as_array()


def _one_run(ctx, gt, delta, opt, dof, scaling, bound) -> RunRecord:
    init = apply_perturbation(gt, delta)
    try:
        res = calibrate(ctx, init, dof=dof, config=opt, bound=bound, scaling=scaling)
    except Exception as exc:  # a broken run is a miss, not a broken batch
        log.warning("run from %s failed: %s", init, exc)
        return RunRecord(init, init, gt, float("nan"), 0, False, "failed")
    return RunRecord(init, res.params, gt, res.mi, res.evaluations,
                     hit_metric(res.params, gt), res.termination.value)


def run_batch(ctx: MIObjectiveContext, gt: ExtrinsicParams, batch: PerturbationBatch,
              opt: Optional[OptimizerConfig] = None, dof: int = 3, threads: int = 1,
              scaling=DEFAULT_SCALING, bound: float = DEFAULT_BOUND) -> list:
    """One calibration per perturbation, returned in batch order."""
    if dof not in (3, 6):
        raise ValueError(f"dof must be 3 or 6, got {dof}")
    if dof == 3 and batch.translation_magnitude != 0:
        raise ValueError("3-DoF runs hold translation at ground truth; batch perturbs it")
    opt = opt or OptimizerConfig()
    ctx.prepared  # build the shared cache before workers start
    args = [(ctx, gt, d, opt, dof, scaling, bound) for d in batch.perturbations]
    if threads <= 1:
        return [_one_run(*a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda a: _one_run(*a), args))


@dataclass(frozen=True)
class BatchStatistics:
    """Per-parameter residual moments over hits; ``None`` marks an absent value."""

    runs: int
    hits: int
    mean: tuple
    std: tuple

    @property
    def hit_rate(self) -> float:
        return self.hits / self.runs if self.runs else 0.0


def batch_statistics(records: Sequence[RunRecord]) -> BatchStatistics:
    hits = [r for r in records if r.hit]
    if not hits:
        return BatchStatistics(len(records), 0, (None,) * 6, (None,) * 6)
    res = np.array([r.residual for r in hits])
    mean = tuple(float(v) for v in res.mean(axis=0))
    if len(hits) < 2:
        std = (None,) * 6
    else:
        std = tuple(float(v) for v in res.std(axis=0, ddof=1))
    return BatchStatistics(len(records), len(hits), mean, std)


# ------------------------------------------------------------------ CSV

def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


RECORD_HEADER = ([f"init_{p}" for p in PARAM_NAMES] + [f"opt_{p}" for p in PARAM_NAMES]
                 + [f"gt_{p}" for p in PARAM_NAMES] + ["best_mi", "evaluations", "termination", "hit"])


def write_records_csv(path, records: Sequence[RunRecord]) -> None:
    rows = []
    for r in records:
        rows.append([*r.initial.as_array(), *r.optimized.as_array(), *r.ground_truth.as_array(),
                     r.best_mi, r.evaluations, r.termination, r.hit])
    _write_rows(path, ["run"] + RECORD_HEADER, [[i] + row for i, row in enumerate(rows)])


STATISTICS_HEADER = (["mode", "dof", "error_deg", "error_m", "runs", "hits", "hit_rate"]
                     + [f"mean_{p}" for p in PARAM_NAMES] + [f"std_{p}" for p in PARAM_NAMES])


def statistics_row(stats: BatchStatistics, mode, dof: int, error_deg: float, error_m: float) -> list:
    return [Mode(mode).value, dof, float(error_deg), float(error_m), stats.runs, stats.hits,
            stats.hit_rate, *stats.mean, *stats.std]


def write_statistics_csv(path, rows) -> None:
    _write_rows(path, STATISTICS_HEADER, rows)


# ------------------------------------------------------------ SVG helpers

_VIRIDIS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=np.float64)


def _color(t: float) -> str:
    if not math.isfinite(t):
        return "#000000"
    t = min(max(t, 0.0), 1.0) * (len(_VIRIDIS) - 1)
    i = min(int(t), len(_VIRIDIS) - 2)
    c = _VIRIDIS[i] + (t - i) * (_VIRIDIS[i + 1] - _VIRIDIS[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def _num(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def heatmap_svg(values: np.ndarray, x_label: str, y_label: str, x_range, y_range,
                title: str = "", cell: int = 16) -> str:
    """Self-contained SVG heat map; row 0 of ``values`` is drawn at the bottom."""
    values = np.asarray(values, dtype=np.float64)
    ny, nx = values.shape
    finite = values[np.isfinite(values)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    m = 60
    w, h = nx * cell, ny * cell
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2 * m}" height="{h + 2 * m}" '
           f'viewBox="0 0 {w + 2 * m} {h + 2 * m}">',
           f'<rect x="0" y="0" width="{w + 2 * m}" height="{h + 2 * m}" fill="white"/>']
    if title:
        out.append(f'<text x="{m}" y="{m / 2:.0f}" font-size="14">{escape(title)}</text>')
    for r in range(ny):
        for c in range(nx):
            out.append(f'<rect x="{m + c * cell}" y="{m + (ny - 1 - r) * cell}" width="{cell}" '
                       f'height="{cell}" fill="{_color((values[r, c] - lo) / span)}"/>')
    out.append(f'<text x="{m + w / 2:.0f}" y="{m + h + 40}" font-size="12" text-anchor="middle">'
               f'{escape(x_label)} [{_num(x_range[0])}, {_num(x_range[1])}]</text>')
    out.append(f'<text x="20" y="{m + h / 2:.0f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 20 {m + h / 2:.0f})">'
               f'{escape(y_label)} [{_num(y_range[0])}, {_num(y_range[1])}]</text>')
    out.append(f'<text x="{m + w}" y="{m + h + 40}" font-size="10" text-anchor="end">'
               f'min {lo:.4g} max {hi:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------- MI surface

def resolve_axis(name: str) -> int:
    key = AXIS_ALIASES.get(name, name)
    if key not in PARAM_NAMES:
        raise ValueError(f"unknown axis {name!r}; choose from {', '.join(PARAM_NAMES)} "
                         f"or {', '.join(AXIS_ALIASES)}")
    return PARAM_NAMES.index(key)


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    """``values[i, j]`` is the objective at offsets ``(offsets_a[j], offsets_b[i])``."""

    axes: tuple
    offsets_a: np.ndarray
    offsets_b: np.ndarray
    values: np.ndarray
    center: ExtrinsicParams

    def argmax(self):
        i, j = np.unravel_index(int(np.nanargmax(self.values)), self.values.shape)
        return int(i), int(j)

    def to_csv(self, path) -> None:
        a, b = (PARAM_NAMES[k] for k in self.axes)
        rows = []
        for i, ob in enumerate(self.offsets_b):
            for j, oa in enumerate(self.offsets_a):
                rows.append([oa, ob, self.values[i, j]])
        _write_rows(path, [f"d_{a}", f"d_{b}", "mi"], rows)

    def to_svg(self) -> str:
        a, b = (PARAM_NAMES[k] for k in self.axes)
        return heatmap_svg(self.values, f"d_{a}", f"d_{b}",
                           (self.offsets_a[0], self.offsets_a[-1]),
                           (self.offsets_b[0], self.offsets_b[-1]), title="MI surface")


def mi_surface_sweep(ctx: MIObjectiveContext, gt: ExtrinsicParams, axis_pair, range_deg: float,
                     steps: int, range_m: Optional[float] = None) -> SurfaceGrid:
    """Objective on a ``steps`` x ``steps`` grid around ``gt`` over two parameters.

    Angle axes span ``±range_deg``; translation axes span ``±range_m``
    (defaulting to ``range_deg`` / 20, so one degree pairs with 5 cm).
    """
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    axes = tuple(resolve_axis(a) if isinstance(a, str) else int(a) for a in axis_pair)
    if len(axes) != 2 or axes[0] == axes[1]:
        raise ValueError("axis_pair needs two distinct axes")
    if range_m is None:
        range_m = range_deg / 20.0
    spans = [range_deg if k < 3 else range_m for k in axes]
    off_a = np.linspace(-spans[0], spans[0], steps)
    off_b = np.linspace(-spans[1], spans[1], steps)
    base = gt.as_array()
    vals = np.empty((steps, steps))
    for i, ob in enumerate(off_b):
        for j, oa in enumerate(off_a):
            p = base.copy()
            p[axes[0]] += oa
            p[axes[1]] += ob
            vals[i, j] = objective(ExtrinsicParams.from_array(p), ctx)
    return SurfaceGrid(axes, off_a, off_b, vals, gt)


# --------------------------------------------------------------- bull's eye

@dataclass(frozen=True, eq=False)
class BullseyeData:
    axes: tuple
    initial: np.ndarray     # (n, 2) residuals
    optimized: np.ndarray   # (n, 2)
    hits: np.ndarray

    def rows(self):
        for k in range(len(self.hits)):
            yield [k, "initial", *self.initial[k], self.hits[k]]
            yield [k, "optimized", *self.optimized[k], self.hits[k]]


def emit_bullseye(records: Sequence[RunRecord], dof_axes=("theta_x", "theta_y"),
                  csv_path=None, svg_path=None) -> BullseyeData:
    """Initial and optimized residuals projected onto two parameters.

    Ground truth sits at the origin; each run becomes one segment from an
    ``x`` marker (start) to a dot (result).
    """
    axes = tuple(resolve_axis(a) if isinstance(a, str) else int(a) for a in dof_axes)
    init = np.array([r.initial_residual[list(axes)] for r in records]).reshape(-1, 2)
    opt = np.array([r.residual[list(axes)] for r in records]).reshape(-1, 2)
    data = BullseyeData(axes, init, opt, np.array([r.hit for r in records], dtype=bool))
    if csv_path is not None:
        a, b = (PARAM_NAMES[k] for k in axes)
        _write_rows(csv_path, ["run", "endpoint", f"d_{a}", f"d_{b}", "hit"], data.rows())
    if svg_path is not None:
        Path(svg_path).write_text(bullseye_svg(data))
    return data


def bullseye_svg(data: BullseyeData, size: int = 480) -> str:
    a, b = (PARAM_NAMES[k] for k in data.axes)
    pts = np.concatenate([data.initial, data.optimized]) if len(data.hits) else np.zeros((1, 2))
    reach = float(np.max(np.abs(pts))) if pts.size else 0.0
    reach = max(reach, HIT_ROTATION_DEG) * 1.1
    half = size / 2
    s = half / reach

    def xy(p):
        return half + p[0] * s, half - p[1] * s

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
           f'<path d="M0 {half} H{size} M{half} 0 V{size}" stroke="#bbbbbb" fill="none"/>']
    # rings at the hit threshold and at whole multiples of it
    ring = HIT_ROTATION_DEG
    while ring <= reach:
        out.append(f'<circle cx="{half}" cy="{half}" r="{ring * s:.2f}" fill="none" '
                   f'stroke="#dddddd"/>')
        ring += HIT_ROTATION_DEG * 2
    for k in range(len(data.hits)):
        x0, y0 = xy(data.initial[k])
        x1, y1 = xy(data.optimized[k])
        color = "#1f77b4" if data.hits[k] else "#d62728"
        out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                   f'stroke="{color}" stroke-width="0.8"/>')
        out.append(f'<path d="M{x0 - 3:.2f} {y0 - 3:.2f} L{x0 + 3:.2f} {y0 + 3:.2f} '
                   f'M{x0 - 3:.2f} {y0 + 3:.2f} L{x0 + 3:.2f} {y0 - 3:.2f}" stroke="{color}"/>')
        out.append(f'<circle cx="{x1:.2f}" cy="{y1:.2f}" r="2" fill="{color}"/>')
    out.append(f'<text x="{size - 6}" y="{half - 6}" font-size="11" text-anchor="end">'
               f'd_{escape(a)}</text>')
    out.append(f'<text x="{half + 6}" y="14" font-size="11">d_{escape(b)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------ histograms and overlays

def joint_histogram(ctx: MIObjectiveContext, params: ExtrinsicParams) -> JointHistogram:
    """Joint counts summed over all frames of the context."""
    T = params_to_transform(params)
    n = ctx.binning.bin_count
    total = np.zeros((n, n), dtype=np.float64)
    for pf in ctx.prepared:
        counts, _ = frame_joint_counts(T, pf, ctx)
        total += counts
    return JointHistogram(total, ctx.binning)


def histogram_svg(hist: JointHistogram, title: str = "joint histogram") -> str:
    cfg = hist.config
    # log scale so sparse off-diagonal mass stays visible
    return heatmap_svg(np.log1p(hist.counts).T, "lidar feature", "camera feature",
                       cfg.range_lidar, cfg.range_camera, title=title, cell=6)


def projection_overlay_svg(frame: Frame, params: ExtrinsicParams, cam: CameraModel,
                           mode: Mode = Mode.D2D, max_points: int = 20000) -> str:
    """Projected LiDAR points over the feature image footprint, colored by feature."""
    T = params_to_transform(params)
    pts = T.apply(frame.cloud.points)
    u, v, ok = project_points(cam, pts)
    valid = frame.feature_image.valid
    W, H = int(cam.width), int(cam.height)
    feat = lidar_features(frame.cloud, mode)
    idx = np.flatnonzero(ok)
    if idx.size > max_points:
        idx = idx[np.linspace(0, idx.size - 1, max_points).astype(np.int64)]
    f = feat[idx]
    lo, hi = (float(f.min()), float(f.max())) if f.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="#202020"/>']
    # the valid-pixel mask as row runs keeps the file small
    for r in range(H):
        row = valid[r]
        c = 0
        while c < W:
            if row[c]:
                s = c
                while c < W and row[c]:
                    c += 1
                out.append(f'<rect x="{s}" y="{r}" width="{c - s}" height="1" fill="#505050"/>')
            else:
                c += 1
    for k, val in zip(idx, f):
        out.append(f'<circle cx="{u[k]:.1f}" cy="{v[k]:.1f}" r="0.8" '
                   f'fill="{_color((val - lo) / span)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

