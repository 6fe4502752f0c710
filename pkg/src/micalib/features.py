"""LiDAR/camera feature correspondences."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .geometry import CameraModel, RigidTransform


class Mode(str, enum.Enum):
    D2D = "d2d"
    I2I = "i2i"


class ImageKind(str, enum.Enum):
    METRIC = "metric"
    RELATIVE = "relative"
    INTENSITY = "intensity"


KIND_CODES = {ImageKind.METRIC: 0, ImageKind.RELATIVE: 1, ImageKind.INTENSITY: 2}


@dataclass(frozen=True, eq=False)
class PointCloud:
    """(K, 3) points in the LiDAR frame, optional per-point intensity in [0, 1]."""

    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = np.array(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"intensity length {inten.shape[0]} != point count {pts.shape[0]}"
                )
            inten.setflags(write=False)
            object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class FeatureImage:
    """Dense per-pixel feature grid; NaN marks invalid pixels."""

    values: np.ndarray
    kind: ImageKind = ImageKind.METRIC

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float32)
        if vals.ndim != 2:
            raise ValueError(f"feature image must be 2-D, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", ImageKind(self.kind))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass(frozen=True)
class FeaturePairs:
    lidar: np.ndarray
    camera: np.ndarray

    def __len__(self) -> int:
        return len(self.lidar)


@dataclass(frozen=True, eq=False)
class Frame:
    cloud: PointCloud
    feature_image: FeatureImage
    frame_id: str = ""
    meta: dict = field(default_factory=dict)


def point_depth(p) -> float:
    """Range of a LiDAR point from the sensor origin."""
    return float(np.linalg.norm(np.asarray(p, dtype=np.float64)))


def lidar_features(cloud: PointCloud, mode: Mode) -> np.ndarray:
    mode = Mode(mode)
    if mode is Mode.D2D:
        return np.sqrt(np.einsum("ij,ij->i", cloud.points, cloud.points))
    if cloud.intensity is None:
        raise ValueError("I2I mode needs per-point LiDAR intensity, cloud has none")
    return np.asarray(cloud.intensity, dtype=np.float64)


def check_image_matches_camera(image: FeatureImage, cam: CameraModel) -> None:
    if (image.width, image.height) != (int(cam.width), int(cam.height)):
        raise ValueError(
            f"feature image is {image.width}x{image.height} but camera expects "
            f"{int(cam.width)}x{int(cam.height)}"
        )


def get_matches(T: RigidTransform, cam: CameraModel, frame: Frame, mode: Mode) -> FeaturePairs:
    """Pair every projected point's LiDAR feature with the image value under it.

    Depth features are ranges in the LiDAR frame, so they do not depend on
    ``T``; only which points survive projection does.
    """
    check_image_matches_camera(frame.feature_image, cam)
    f_lidar = lidar_features(frame.cloud, mode)
    valid = frame.feature_image.valid
    idx, rows, cols = kernels.match_pixels(
        frame.cloud.points, T.rotation, T.translation, cam.kernel_params(), valid
    )
    f_cam = frame.feature_image.values[rows, cols].astype(np.float64)
    return FeaturePairs(lidar=f_lidar[idx], camera=f_cam)
