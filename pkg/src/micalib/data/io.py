"""Point-cloud ``.bin``, DMAP feature images and the dataset manifest."""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..features import KIND_CODES, FeatureImage, Frame, ImageKind, PointCloud
from ..geometry import CameraModel, DoubleSphereCamera, ExtrinsicParams, PinholeCamera

log = logging.getLogger(__name__)

DMAP_MAGIC = b"DMAP"
_DMAP_HEADER = struct.Struct("<4sIIB")
_CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


class FormatError(ValueError):
    """Malformed binary input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: Optional[int] = None, path=None):
        where = f"{path}: " if path else ""
        at = f" (byte offset {offset})" if offset is not None else ""
        super().__init__(f"{where}{message}{at}")
        self.offset = offset
        self.path = path


class ManifestError(ValueError):
    """Invalid manifest line or missing referenced file."""


# ------------------------------------------------------------- point clouds

def parse_pointcloud_bytes(data: bytes, path=None):
    """Decode KITTI Velodyne records; returns ``(cloud, skipped)``.

    Records with a non-finite coordinate or intensity are skipped.
    """
    if len(data) % 16:
        raise FormatError(
            f"point cloud length {len(data)} is not a multiple of 16 bytes; truncated record",
            offset=len(data) - len(data) % 16, path=path,
        )
    raw = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    finite = np.all(np.isfinite(raw), axis=1)
    skipped = int((~finite).sum())
    raw = raw[finite]
    cloud = PointCloud(raw[:, :3].astype(np.float64),
                       np.clip(raw[:, 3].astype(np.float64), 0.0, 1.0))
    return cloud, skipped


def load_pointcloud_bin(path) -> PointCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    cloud, skipped = parse_pointcloud_bytes(data, path=path)
    if skipped:
        log.warning("%s: skipped %d records with non-finite values", path, skipped)
    return cloud


def pointcloud_to_bytes(cloud: PointCloud) -> bytes:
    n = len(cloud)
    out = np.empty((n, 4), dtype="<f4")
    out[:, :3] = cloud.points
    out[:, 3] = cloud.intensity if cloud.intensity is not None else 0.0
    return out.tobytes()


def save_pointcloud_bin(path, cloud: PointCloud) -> None:
    with open(path, "wb") as fh:
        fh.write(pointcloud_to_bytes(cloud))


# ------------------------------------------------------------------ DMAP

def dmap_to_bytes(image: FeatureImage) -> bytes:
    header = _DMAP_HEADER.pack(DMAP_MAGIC, image.width, image.height, KIND_CODES[image.kind])
    return header + np.ascontiguousarray(image.values, dtype="<f4").tobytes()


def parse_dmap_bytes(data: bytes, path=None) -> FeatureImage:
    if len(data) < _DMAP_HEADER.size:
        raise FormatError(f"DMAP header needs {_DMAP_HEADER.size} bytes, file has {len(data)}",
                          offset=len(data), path=path)
    magic, width, height, code = _DMAP_HEADER.unpack_from(data)
    if magic != DMAP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DMAP_MAGIC!r}", offset=0, path=path)
    if code not in _CODE_KINDS:
        raise FormatError(f"unknown feature kind {code}", offset=12, path=path)
    expected = _DMAP_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise FormatError(
            f"DMAP {width}x{height} needs {expected} bytes, file has {len(data)}",
            offset=min(len(data), expected), path=path,
        )
    if width == 0 or height == 0:
        raise FormatError(f"DMAP has empty size {width}x{height}", offset=4, path=path)
    values = np.frombuffer(data, dtype="<f4", offset=_DMAP_HEADER.size).reshape(height, width)
    return FeatureImage(values.astype(np.float32), _CODE_KINDS[code])


def load_depth_map(path) -> FeatureImage:
    with open(path, "rb") as fh:
        return parse_dmap_bytes(fh.read(), path=path)


def save_depth_map(path, image: FeatureImage) -> None:
    with open(path, "wb") as fh:
        fh.write(dmap_to_bytes(image))


# -------------------------------------------------------------- manifest

@dataclass(frozen=True)
class FrameEntry:
    frame_id: str
    cloud_path: Path
    image_path: Path


@dataclass(eq=False)
class DatasetManifest:
    frames: list
    camera: CameraModel
    kind: ImageKind = ImageKind.METRIC
    ground_truth: Optional[ExtrinsicParams] = None
    path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.frames)

    def load_frame(self, entry: FrameEntry) -> Frame:
        cloud = load_pointcloud_bin(entry.cloud_path)
        image = load_depth_map(entry.image_path)
        if (image.width, image.height) != (int(self.camera.width), int(self.camera.height)):
            raise ManifestError(
                f"{entry.image_path}: image is {image.width}x{image.height}, camera is "
                f"{int(self.camera.width)}x{int(self.camera.height)}"
            )
        if image.kind is not self.kind:
            raise ManifestError(
                f"{entry.image_path}: image kind {image.kind.value} != manifest kind {self.kind.value}"
            )
        return Frame(cloud, image, entry.frame_id)

    def load_frames(self, entries=None) -> list:
        return [self.load_frame(e) for e in (self.frames if entries is None else entries)]


def _floats(tokens, n, lineno, what):
    if len(tokens) != n:
        raise ManifestError(f"line {lineno}: '{what}' expects {n} values, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: bad number in '{what}': {exc}") from None


def parse_manifest(text: str, base_dir=".", check_paths: bool = True) -> DatasetManifest:
    """Parse the line-oriented manifest grammar.

    ::

        frame <id> <cloud_path> <image_path>
        camera pinhole <fx> <fy> <cx> <cy> <w> <h>
        camera double_sphere <fx> <fy> <cx> <cy> <xi> <alpha> <w> <h>
        gt <theta_x> <theta_y> <theta_z> <t_x> <t_y> <t_z>
        kind metric|relative|intensity

    Relative paths resolve against ``base_dir``; ``#`` starts a comment.
    """
    base = Path(base_dir)
    frames, camera, gt, kind = [], None, None, ImageKind.METRIC
    seen_ids = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        if key == "frame":
            if len(tok) != 4:
                raise ManifestError(f"line {lineno}: 'frame' expects <id> <cloud> <image>")
            fid = tok[1]
            if fid in seen_ids:
                raise ManifestError(f"line {lineno}: duplicate frame id {fid!r}")
            seen_ids.add(fid)
            cloud_p, image_p = (Path(p) if Path(p).is_absolute() else base / p for p in tok[2:])
            if check_paths:
                for p in (cloud_p, image_p):
                    if not p.is_file():
                        raise ManifestError(f"line {lineno}: file not found: {p}")
            frames.append(FrameEntry(fid, cloud_p, image_p))
        elif key == "camera":
            if len(tok) < 2:
                raise ManifestError(f"line {lineno}: 'camera' needs a model name")
            model = tok[1]
            try:
                if model == "pinhole":
                    fx, fy, cx, cy, w, h = _floats(tok[2:], 6, lineno, "camera pinhole")
                    camera = PinholeCamera(fx, fy, cx, cy, _int(w, lineno), _int(h, lineno))
                elif model == "double_sphere":
                    fx, fy, cx, cy, xi, al, w, h = _floats(tok[2:], 8, lineno, "camera double_sphere")
                    camera = DoubleSphereCamera(fx, fy, cx, cy, xi, al, _int(w, lineno),
                                                _int(h, lineno))
                else:
                    raise ManifestError(f"line {lineno}: unknown camera model {model!r}")
            except ManifestError:
                raise
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: camera: {exc}") from None
        elif key == "gt":
            gt = ExtrinsicParams(*_floats(tok[1:], 6, lineno, "gt"))
        elif key == "kind":
            if len(tok) != 2 or tok[1] not in {k.value for k in ImageKind}:
                raise ManifestError(f"line {lineno}: 'kind' must be metric, relative or intensity")
            kind = ImageKind(tok[1])
        else:
            raise ManifestError(f"line {lineno}: unknown key {key!r}")
    if camera is None:
        raise ManifestError("manifest has no 'camera' line")
    if not frames:
        raise ManifestError("manifest lists no frames")
    return DatasetManifest(frames, camera, kind, gt)


def _int(value: float, lineno: int) -> int:
    if value != int(value):
        raise ManifestError(f"line {lineno}: image size must be an integer, got {value}")
    return int(value)


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    manifest = parse_manifest(path.read_text(), base_dir=path.parent, check_paths=check_paths)
    manifest.path = path
    return manifest


def format_manifest(manifest: DatasetManifest, relative_to=None) -> str:
    cam = manifest.camera
    lines = []
    if isinstance(cam, PinholeCamera):
        lines.append(f"camera pinhole {cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r} "
                     f"{cam.width} {cam.height}")
    else:
        lines.append(f"camera double_sphere {cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r} "
                     f"{cam.xi!r} {cam.alpha!r} {cam.width} {cam.height}")
    lines.append(f"kind {manifest.kind.value}")
    if manifest.ground_truth is not None:
        lines.append("gt " + " ".join(repr(float(v)) for v in manifest.ground_truth.as_array()))
    for e in manifest.frames:
        paths = []
        for p in (e.cloud_path, e.image_path):
            p = Path(p)
            if relative_to is not None:
                p = Path(os.path.relpath(p, relative_to))
            paths.append(p.as_posix())
        lines.append(f"frame {e.frame_id} {paths[0]} {paths[1]}")
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- sampling

def sample_indices(total: int, n: int) -> list:
    """``n`` indices spread uniformly over ``total`` frames, ends included."""
    if n < 1:
        raise ValueError(f"need at least one frame, got n={n}")
    if n > total:
        raise ValueError(f"cannot sample {n} frames from {total}")
    if n == 1:
        return [0]
    # round half up keeps the mapping platform independent
    return [int(np.floor(i * (total - 1) / (n - 1) + 0.5)) for i in range(n)]


def sample_frames(manifest: DatasetManifest, n: int) -> list:
    entries = [manifest.frames[i] for i in sample_indices(len(manifest.frames), n)]
    return manifest.load_frames(entries)
