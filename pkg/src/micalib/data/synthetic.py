"""Ray-cast synthetic scenes: a LiDAR scan and a camera depth/intensity pair
rendered from the same box-and-plane geometry with known extrinsics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import kernels
from ..features import FeatureImage, Frame, ImageKind, PointCloud
from ..geometry import (
    CameraModel,
    DoubleSphereCamera,
    ExtrinsicParams,
    PinholeCamera,
    params_to_transform,
)

# KITTI-like mounting: camera looks along LiDAR +x, 27 cm ahead and 8 cm below
DEFAULT_GT = ExtrinsicParams(90.4, -0.6, 89.7, 0.06, -0.08, -0.27)
DEFAULT_CAMERA = PinholeCamera(fx=360.0, fy=360.0, cx=310.0, cy=94.0, width=620, height=188)
LIDAR_HEIGHT = 1.73


@dataclass(frozen=True, eq=False)
class LidarPattern:
    azimuth_count: int = 900
    elevations_deg: tuple = tuple(np.linspace(-24.0, 2.0, 64))
    max_range: float = 80.0

    def directions(self) -> np.ndarray:
        """Unit ray directions, ring-major, azimuth 0 along +x."""
        el = np.radians(np.asarray(self.elevations_deg, dtype=np.float64))
        az = 2.0 * math.pi * np.arange(self.azimuth_count) / self.azimuth_count
        ce, se = np.cos(el)[:, None], np.sin(el)[:, None]
        d = np.stack(
            np.broadcast_arrays(ce * np.cos(az)[None, :], ce * np.sin(az)[None, :], se), axis=-1
        )
        return d.reshape(-1, 3)


@dataclass(frozen=True)
class NoiseConfig:
    depth_sigma: float = 0.02
    dropout: float = 0.01
    intensity_sigma: float = 0.03


@dataclass(eq=False)
class SyntheticScene:
    """Axis-aligned boxes and infinite planes in the LiDAR frame.

    Boxes are rows ``[xmin, ymin, zmin, xmax, ymax, zmax]``; planes are rows
    ``[nx, ny, nz, d]`` with unit normal, meaning ``n . x = d``. Every surface
    carries a camera albedo and an independent LiDAR reflectivity in [0, 1].
    """

    boxes: np.ndarray
    box_albedo: np.ndarray
    box_reflectivity: np.ndarray
    planes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    plane_albedo: np.ndarray = field(default_factory=lambda: np.zeros(0))
    plane_reflectivity: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lidar: LidarPattern = field(default_factory=LidarPattern)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    texture_cell: float = 0.4

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 6)
        self.planes = np.asarray(self.planes, dtype=np.float64).reshape(-1, 4)
        if np.any(self.boxes[:, :3] >= self.boxes[:, 3:]):
            raise ValueError("box rows need min < max on every axis")
        norms = np.linalg.norm(self.planes[:, :3], axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("plane normals must be unit length")
        self.box_albedo = np.asarray(self.box_albedo, dtype=np.float64).reshape(-1)
        self.box_reflectivity = np.asarray(self.box_reflectivity, dtype=np.float64).reshape(-1)
        self.plane_albedo = np.asarray(self.plane_albedo, dtype=np.float64).reshape(-1)
        self.plane_reflectivity = np.asarray(self.plane_reflectivity, dtype=np.float64).reshape(-1)
        if len(self.box_albedo) != len(self.boxes) or len(self.box_reflectivity) != len(self.boxes):
            raise ValueError("one albedo and one reflectivity per box")
        if len(self.plane_albedo) != len(self.planes) or len(self.plane_reflectivity) != len(self.planes):
            raise ValueError("one albedo and one reflectivity per plane")
        if len(self.boxes) + len(self.planes) == 0:
            raise ValueError("scene has no surfaces")

    @property
    def albedo(self) -> np.ndarray:
        return np.concatenate([self.box_albedo, self.plane_albedo])

    @property
    def reflectivity(self) -> np.ndarray:
        return np.concatenate([self.box_reflectivity, self.plane_reflectivity])

    def cast(self, origin, dirs):
        return kernels.cast_rays(origin, dirs, self.boxes, self.planes, self.lidar.max_range)

    def normals(self, surface, axis, dirs) -> np.ndarray:
        """Unit normals at hits, oriented against the ray."""
        nb = len(self.boxes)
        n = np.zeros((len(surface), 3))
        is_box = (surface >= 0) & (surface < nb)
        rows = np.flatnonzero(is_box)
        n[rows, axis[rows]] = -np.sign(dirs[rows, axis[rows]])
        is_plane = surface >= nb
        n[is_plane] = self.planes[surface[is_plane] - nb, :3]
        flip = np.einsum("ij,ij->i", n, dirs) > 0
        n[flip] *= -1.0
        return n


def camera_rays(cam: CameraModel):
    """Unit camera-frame rays through every pixel center (pixel (c, r) is at u=c, v=r).

    Returns ``(dirs (H*W, 3), valid (H*W,))``.
    """
    u, v = np.meshgrid(np.arange(cam.width, dtype=np.float64),
                       np.arange(cam.height, dtype=np.float64))
    mx = ((u - cam.cx) / cam.fx).ravel()
    my = ((v - cam.cy) / cam.fy).ravel()
    if isinstance(cam, PinholeCamera):
        d = np.stack([mx, my, np.ones_like(mx)], axis=1)
        valid = np.ones(len(mx), dtype=bool)
    else:
        d, valid = _double_sphere_rays(cam, mx, my)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d, valid


def _double_sphere_rays(cam: DoubleSphereCamera, mx, my):
    # closed-form inverse of the double-sphere projection, used only to render
    xi, alpha = cam.xi, cam.alpha
    r2 = mx * mx + my * my
    valid = np.ones(len(mx), dtype=bool)
    if alpha > 0.5:
        valid &= r2 <= 1.0 / (2.0 * alpha - 1.0)
    r2v = np.where(valid, r2, 0.0)
    mz = (1.0 - alpha * alpha * r2v) / (alpha * np.sqrt(1.0 - (2.0 * alpha - 1.0) * r2v) + 1.0 - alpha)
    disc = mz * mz + (1.0 - xi * xi) * r2v
    valid &= disc >= 0.0
    k = (mz * xi + np.sqrt(np.maximum(disc, 0.0))) / (mz * mz + r2v)
    d = np.stack([k * mx, k * my, k * mz - xi], axis=1)
    d[~valid] = (0.0, 0.0, 1.0)
    return d, valid


def _texture(points, surface, cell) -> np.ndarray:
    """Deterministic per-cell pattern in [0, 1) keyed on surface id and position."""
    idx = np.floor(points / cell).astype(np.int64)
    h = (idx[:, 0] * 73856093) ^ (idx[:, 1] * 19349663) ^ (idx[:, 2] * 83492791) ^ (surface * 2654435761)
    h = (h ^ (h >> 13)) * 1274126177
    h = h ^ (h >> 16)
    return (h & 0xFFFF).astype(np.float64) / 65536.0


def render_lidar(scene: SyntheticScene, rng: Optional[np.random.Generator]) -> PointCloud:
    dirs = scene.lidar.directions()
    t_hit, surface, axis = scene.cast(np.zeros(3), dirs)
    hit = surface >= 0
    dirs, t_hit, surface, axis = dirs[hit], t_hit[hit], surface[hit], axis[hit]
    cos_inc = np.abs(np.einsum("ij,ij->i", scene.normals(surface, axis, dirs), dirs))
    inten = scene.reflectivity[surface] * cos_inc
    noise = scene.noise
    if rng is not None:
        if noise.depth_sigma > 0:
            t_hit = t_hit + rng.normal(0.0, noise.depth_sigma, size=t_hit.shape)
        if noise.intensity_sigma > 0:
            inten = inten + rng.normal(0.0, noise.intensity_sigma, size=inten.shape)
        if noise.dropout > 0:
            keep = rng.random(t_hit.shape) >= noise.dropout
            dirs, t_hit, inten = dirs[keep], t_hit[keep], inten[keep]
    keep = t_hit > 0
    pts = dirs[keep] * t_hit[keep, None]
    return PointCloud(pts, np.clip(inten[keep], 0.0, 1.0))


def render_camera(scene: SyntheticScene, extrinsics: ExtrinsicParams, cam: CameraModel):
    """Range image (distance from the camera center along each pixel ray) and
    intensity image; pixels that see nothing are NaN."""
    T = params_to_transform(extrinsics)
    rays_c, valid = camera_rays(cam)
    origin = -T.rotation.T @ T.translation
    dirs = rays_c @ T.rotation  # rows are R^T d
    t_hit, surface, axis = scene.cast(origin, dirs)
    hit = valid & (surface >= 0)
    depth = np.full(len(dirs), np.nan)
    depth[hit] = t_hit[hit]
    inten = np.full(len(dirs), np.nan)
    rows = np.flatnonzero(hit)
    pts = origin + dirs[rows] * t_hit[rows, None]
    tex = _texture(pts, surface[rows], scene.texture_cell)
    inten[rows] = np.clip(scene.albedo[surface[rows]] * (0.55 + 0.45 * tex), 0.0, 1.0)
    shape = (cam.height, cam.width)
    return (FeatureImage(depth.reshape(shape), ImageKind.METRIC),
            FeatureImage(inten.reshape(shape), ImageKind.INTENSITY))


def render_synthetic(scene: SyntheticScene, extrinsics: ExtrinsicParams, cam: CameraModel,
                     seed=None, frame_id: str = "") -> Frame:
    """Render one frame. ``seed=None`` disables all noise.

    The returned frame carries the metric range image; the intensity image is
    in ``frame.meta["intensity"]``.
    """
    rng = None if seed is None else np.random.default_rng(seed)
    cloud = render_lidar(scene, rng)
    depth, intensity = render_camera(scene, extrinsics, cam)
    return Frame(cloud, depth, frame_id, meta={"intensity": intensity})


def intensity_frame(frame: Frame) -> Frame:
    return Frame(frame.cloud, frame.meta["intensity"], frame.frame_id)


# ------------------------------------------------------------------ presets

def _ground(rng):
    planes = np.array([[0.0, 0.0, 1.0, -LIDAR_HEIGHT]])
    return planes, rng.uniform(0.05, 0.95, 1), rng.uniform(0.05, 0.95, 1)


def _box(x0, x1, y0, y1, h):
    return [x0, y0, -LIDAR_HEIGHT, x1, y1, -LIDAR_HEIGHT + h]


def boxes_scene(rng: np.random.Generator, count: Optional[int] = None, **kw) -> SyntheticScene:
    """Random boxes standing on the ground in front of the sensors, plus a far wall."""
    count = int(rng.integers(14, 22)) if count is None else count
    boxes = []
    for _ in range(count):
        cx = rng.uniform(4.0, 30.0)
        cy = rng.uniform(-0.9, 0.9) * cx
        sx, sy = rng.uniform(0.4, 3.0, 2)
        h = rng.uniform(0.5, 4.5)
        boxes.append(_box(cx - sx / 2, cx + sx / 2, cy - sy / 2, cy + sy / 2, h))
    wall_x = rng.uniform(38.0, 50.0)
    boxes.append([wall_x, -60.0, -LIDAR_HEIGHT, wall_x + 1.0, 60.0, rng.uniform(4.0, 12.0)])
    planes, pa, pr = _ground(rng)
    n = len(boxes)
    return SyntheticScene(np.array(boxes), rng.uniform(0.05, 0.95, n), rng.uniform(0.05, 0.95, n),
                          planes, pa, pr, **kw)


def street_canyon_scene(rng: np.random.Generator, **kw) -> SyntheticScene:
    """Facades on both sides of a street, parked cars and poles."""
    boxes = []
    for side in (-1.0, 1.0):
        x = -10.0
        while x < 70.0:
            length = rng.uniform(5.0, 16.0)
            setback = rng.uniform(6.0, 10.0)
            depth = rng.uniform(6.0, 12.0)
            h = rng.uniform(4.0, 16.0)
            y_in = side * setback
            y_out = side * (setback + depth)
            boxes.append(_box(x, x + length, min(y_in, y_out), max(y_in, y_out), h))
            x += length + rng.uniform(0.0, 3.0)
        x = rng.uniform(2.0, 6.0)
        while x < 45.0:
            if rng.random() < 0.7:
                y = side * rng.uniform(3.0, 4.0)
                boxes.append(_box(x, x + rng.uniform(3.8, 4.8), y - 0.9, y + 0.9,
                                  rng.uniform(1.3, 1.8)))
            x += rng.uniform(5.0, 9.0)
        for px in rng.uniform(3.0, 40.0, int(rng.integers(2, 6))):
            y = side * rng.uniform(4.8, 5.6)
            boxes.append(_box(px, px + 0.25, y - 0.125, y + 0.125, rng.uniform(3.0, 6.0)))
    planes, pa, pr = _ground(rng)
    n = len(boxes)
    return SyntheticScene(np.array(boxes), rng.uniform(0.05, 0.95, n), rng.uniform(0.05, 0.95, n),
                          planes, pa, pr, **kw)


PRESETS = {"boxes": boxes_scene, "street-canyon": street_canyon_scene}


def make_scene(preset: str, seed, **kw) -> SyntheticScene:
    if preset not in PRESETS:
        raise KeyError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
    return PRESETS[preset](np.random.default_rng(seed), **kw)


def render_sequence(preset: str, n_frames: int, seed: int = 0,
                    extrinsics: ExtrinsicParams = DEFAULT_GT, cam: CameraModel = DEFAULT_CAMERA,
                    noise: Optional[NoiseConfig] = None, lidar: Optional[LidarPattern] = None,
                    noisy: bool = True) -> list:
    """``n_frames`` frames, each an independent scene layout drawn from ``seed``."""
    seq = np.random.SeedSequence(seed)
    frames = []
    for i, child in enumerate(seq.spawn(n_frames)):
        layout_seed, noise_seed = child.generate_state(2)
        kw = {}
        if noise is not None:
            kw["noise"] = noise
        if lidar is not None:
            kw["lidar"] = lidar
        scene = make_scene(preset, int(layout_seed), **kw)
        frames.append(render_synthetic(scene, extrinsics, cam,
                                       seed=int(noise_seed) if noisy else None,
                                       frame_id=f"{i:06d}"))
    return frames
