"""Histogram mutual information and the multi-frame calibration objective."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .features import (
    FeaturePairs,
    Frame,
    ImageKind,
    Mode,
    check_image_matches_camera,
    get_matches,
    lidar_features,
)
from .geometry import CameraModel, ExtrinsicParams, RigidTransform, params_to_transform

# objective value when no frame has enough matches
DEGENERATE_SENTINEL = -1e6

DEFAULT_BINS = 64
DEFAULT_MIN_MATCHES = 100
DEPTH_RANGE = (0.5, 80.0)
UNIT_RANGE = (0.0, 1.0)


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class BinningConfig:
    bin_count: int = DEFAULT_BINS
    range_lidar: tuple = DEPTH_RANGE
    range_camera: tuple = DEPTH_RANGE

    def __post_init__(self):
        if int(self.bin_count) != self.bin_count or self.bin_count < 2:
            raise ValueError(f"bin_count must be an integer >= 2, got {self.bin_count}")
        for name in ("range_lidar", "range_camera"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"{name} must satisfy lo < hi, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        object.__setattr__(self, "bin_count", int(self.bin_count))

    @classmethod
    def default_for(cls, mode: Mode, kind: ImageKind = ImageKind.METRIC,
                    bin_count: int = DEFAULT_BINS) -> "BinningConfig":
        if Mode(mode) is Mode.I2I:
            return cls(bin_count, UNIT_RANGE, UNIT_RANGE)
        if ImageKind(kind) is ImageKind.METRIC:
            return cls(bin_count, DEPTH_RANGE, DEPTH_RANGE)
        return cls(bin_count, DEPTH_RANGE, UNIT_RANGE)

    def edges(self):
        return (np.linspace(*self.range_lidar, self.bin_count + 1),
                np.linspace(*self.range_camera, self.bin_count + 1))


@dataclass(frozen=True, eq=False)
class JointHistogram:
    """Counts indexed ``[lidar_bin, camera_bin]``."""

    counts: np.ndarray
    config: BinningConfig

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def to_csv(self, path) -> None:
        """One row per bin: lidar edges, camera edges, count."""
        e_l, e_c = self.config.edges()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lidar_lo", "lidar_hi", "camera_lo", "camera_hi", "count"])
            for i in range(self.config.bin_count):
                for j in range(self.config.bin_count):
                    w.writerow([repr(float(e_l[i])), repr(float(e_l[i + 1])),
                                repr(float(e_c[j])), repr(float(e_c[j + 1])),
                                repr(float(self.counts[i, j]))])


def bin_indices(values, lo: float, hi: float, nbins: int) -> np.ndarray:
    """Clamp-to-range binning; the upper edge falls in the last bin."""
    return kernels._bin_index_np(np.asarray(values, dtype=np.float64), lo, hi, nbins)


def build_joint_histogram(pairs: FeaturePairs, config: BinningConfig) -> JointHistogram:
    if len(pairs) == 0:
        raise EmptyInputError("cannot build a histogram from zero feature pairs")
    n = config.bin_count
    i = bin_indices(pairs.lidar, *config.range_lidar, n)
    j = bin_indices(pairs.camera, *config.range_camera, n)
    counts = np.bincount(i * n + j, minlength=n * n).reshape(n, n).astype(np.float64)
    return JointHistogram(counts, config)


def entropy(p, atol: float = 1e-9) -> float:
    """Shannon entropy in nats of a normalized histogram of any shape."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("entropy needs finite non-negative probabilities")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"histogram is not normalized (sum = {p.sum()!r})")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def _entropy_from_counts(c: np.ndarray, total: float) -> float:
    nz = c[c > 0]
    # H = log N - (1/N) sum c log c, avoids a division per bin
    return math.log(total) - float(np.sum(nz * np.log(nz))) / total


def mi_from_counts(counts) -> float:
    """I(X;Y) = H(X) + H(Y) - H(X,Y) from a 2-D count table (rows are X)."""
    c = np.asarray(counts, dtype=np.float64)
    total = float(c.sum())
    if not total > 0:
        raise EmptyInputError("joint histogram is empty")
    hx = _entropy_from_counts(c.sum(axis=1), total)
    hy = _entropy_from_counts(c.sum(axis=0), total)
    hxy = _entropy_from_counts(c, total)
    return hx + hy - hxy


def mutual_information(joint: JointHistogram) -> float:
    return mi_from_counts(joint.counts)


@dataclass(eq=False)
class PreparedFrame:
    """Frame data laid out for the counting kernel."""

    points: np.ndarray
    lidar_feat: np.ndarray
    image: np.ndarray
    lidar_bin: np.ndarray
    cam_bin: np.ndarray
    frame_id: str = ""


def prepare_frame(frame: Frame, cam: CameraModel, mode: Mode,
                  binning: BinningConfig) -> PreparedFrame:
    """Bin the fixed LiDAR features and every valid pixel once, up front."""
    check_image_matches_camera(frame.feature_image, cam)
    img = frame.feature_image
    image = np.array(img.values, dtype=np.float64)
    if Mode(mode) is Mode.D2D and img.kind is ImageKind.RELATIVE:
        image = normalize_relative_depth(image)
    feat = np.ascontiguousarray(lidar_features(frame.cloud, mode))
    n = binning.bin_count
    valid = np.isfinite(image)
    cam_bin = np.full(image.shape, -1, dtype=np.int32)
    cam_bin[valid] = bin_indices(image[valid], *binning.range_camera, n)
    return PreparedFrame(
        points=np.ascontiguousarray(frame.cloud.points, dtype=np.float64),
        lidar_feat=feat,
        image=np.ascontiguousarray(image),
        lidar_bin=bin_indices(feat, *binning.range_lidar, n).astype(np.int32),
        cam_bin=cam_bin,
        frame_id=frame.frame_id,
    )


def normalize_relative_depth(image: np.ndarray) -> np.ndarray:
    """Per-frame min-max scaling of valid pixels to [0, 1]."""
    out = np.array(image, dtype=np.float64)
    valid = np.isfinite(out)
    if valid.any():
        lo = out[valid].min()
        hi = out[valid].max()
        out[valid] = (out[valid] - lo) / (hi - lo) if hi > lo else 0.0
    return out


@dataclass(eq=False)
class MIObjectiveContext:
    frames: Sequence[Frame]
    cam: CameraModel
    mode: Mode = Mode.D2D
    binning: Optional[BinningConfig] = None
    min_matches: int = DEFAULT_MIN_MATCHES
    use_numba: Optional[bool] = None

    def __post_init__(self):
        self.frames = list(self.frames)
        if not self.frames:
            raise ValueError("objective context needs at least one frame")
        self.mode = Mode(self.mode)
        if self.min_matches < 1:
            raise ValueError("min_matches must be positive")
        if self.binning is None:
            kind = self.frames[0].feature_image.kind
            self.binning = BinningConfig.default_for(self.mode, kind)

    @cached_property
    def prepared(self) -> list:
        return [prepare_frame(f, self.cam, self.mode, self.binning) for f in self.frames]

    @cached_property
    def cam_params(self) -> np.ndarray:
        return self.cam.kernel_params()


def frame_joint_counts(T: RigidTransform, pf: PreparedFrame, ctx: MIObjectiveContext):
    return kernels.binned_counts(
        pf.points, pf.lidar_bin, pf.cam_bin, T.rotation, T.translation, ctx.cam_params,
        ctx.binning.bin_count, use_numba=ctx.use_numba,
    )


def frame_histogram(T: RigidTransform, frame_index: int, ctx: MIObjectiveContext) -> JointHistogram:
    counts, _ = frame_joint_counts(T, ctx.prepared[frame_index], ctx)
    return JointHistogram(counts.astype(np.float64), ctx.binning)


def calc_frame_mi(T: RigidTransform, frame, ctx: MIObjectiveContext) -> Optional[float]:
    """MI of one frame, or ``None`` when fewer than ``min_matches`` points match.

    ``frame`` is a :class:`Frame` or an index into ``ctx.frames``.
    """
    if isinstance(frame, (int, np.integer)):
        pf = ctx.prepared[int(frame)]
    else:
        pf = prepare_frame(frame, ctx.cam, ctx.mode, ctx.binning)
    counts, m = frame_joint_counts(T, pf, ctx)
    if m < ctx.min_matches:
        return None
    return kernels.counts_mi(counts, use_numba=ctx.use_numba)


def calc_frame_mi_reference(T: RigidTransform, frame: Frame, ctx: MIObjectiveContext) -> Optional[float]:
    """Same value as :func:`calc_frame_mi` via explicit pairs (slow path)."""
    pairs = get_matches(T, ctx.cam, frame, ctx.mode)
    if len(pairs) < ctx.min_matches:
        return None
    if ctx.mode is Mode.D2D and frame.feature_image.kind is ImageKind.RELATIVE:
        norm = normalize_relative_depth(frame.feature_image.values)
        idx = kernels.match_pixels(frame.cloud.points, T.rotation, T.translation,
                                   ctx.cam_params, frame.feature_image.valid)
        pairs = FeaturePairs(pairs.lidar, norm[idx[1], idx[2]])
    return mutual_information(build_joint_histogram(pairs, ctx.binning))


def objective_transform(T: RigidTransform, ctx: MIObjectiveContext) -> float:
    total = 0.0
    used = 0
    for pf in ctx.prepared:
        counts, m = frame_joint_counts(T, pf, ctx)
        if m < ctx.min_matches:
            continue
        total += kernels.counts_mi(counts, use_numba=ctx.use_numba)
        used += 1
    if used == 0:
        return DEGENERATE_SENTINEL
    return total / used


def objective(params: ExtrinsicParams, ctx: MIObjectiveContext) -> float:
    """Mean per-frame MI over the non-degenerate frames."""
    return objective_transform(params_to_transform(params), ctx)


def per_frame_mi(params: ExtrinsicParams, ctx: MIObjectiveContext) -> list:
    T = params_to_transform(params)
    return [calc_frame_mi(T, i, ctx) for i in range(len(ctx.frames))]
