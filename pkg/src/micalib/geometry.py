"""Rigid transforms, the Euler extrinsic parametrization and camera models."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

# Points closer than this to the camera plane (or the double-sphere
# denominator) are rejected instead of divided by.
NEAR_EPS = 1e-6

PINHOLE_ID = 0
DOUBLE_SPHERE_ID = 1

PARAM_NAMES = ("theta_x", "theta_y", "theta_z", "t_x", "t_y", "t_z")


@dataclass(frozen=True)
class ExtrinsicParams:
    """Euler angles in degrees, translation in meters.

    Angles are stored as given (no wrapping); ``R = Rx(theta_x) Ry(theta_y) Rz(theta_z)``.
    """

    theta_x: float = 0.0
    theta_y: float = 0.0
    theta_z: float = 0.0
    t_x: float = 0.0
    t_y: float = 0.0
    t_z: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"extrinsic parameters must be finite, got {self.as_array()}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.theta_x, self.theta_y, self.theta_z, self.t_x, self.t_y, self.t_z],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, values) -> "ExtrinsicParams":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != 6:
            raise ValueError(f"expected 6 extrinsic parameters, got {values.size}")
        return cls(*(float(v) for v in values))

    @property
    def angles(self) -> np.ndarray:
        return self.as_array()[:3]

    @property
    def translation(self) -> np.ndarray:
        return self.as_array()[3:]

    def __add__(self, other: "ExtrinsicParams") -> "ExtrinsicParams":
        return ExtrinsicParams.from_array(self.as_array() + other.as_array())

    def __sub__(self, other: "ExtrinsicParams") -> "ExtrinsicParams":
        return ExtrinsicParams.from_array(self.as_array() - other.as_array())


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self * other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector)."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(theta_x: float, theta_y: float, theta_z: float) -> np.ndarray:
    return rot_x(theta_x) @ rot_y(theta_y) @ rot_z(theta_z)


def params_to_transform(params: ExtrinsicParams) -> RigidTransform:
    R = euler_to_rotation(params.theta_x, params.theta_y, params.theta_z)
    return RigidTransform(R, params.translation)


def rotation_to_euler(R) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation` (degrees), taking theta_y in [-90, 90]."""
    R = np.asarray(R, dtype=np.float64)
    # Rx Ry Rz: R[0,2] = sin(ty), R[0,0] = cy cz, R[0,1] = -cy sz,
    # R[1,2] = -sx cy, R[2,2] = cx cy
    ty = math.asin(max(-1.0, min(1.0, R[0, 2])))
    tx = math.atan2(-R[1, 2], R[2, 2])
    tz = math.atan2(-R[0, 1], R[0, 0])
    return np.degrees([tx, ty, tz])


def transform_point(T: RigidTransform, p) -> np.ndarray:
    return T.rotation @ np.asarray(p, dtype=np.float64) + T.translation


def rotation_error_angle(R_a, R_b) -> float:
    """Geodesic angle between two rotations, in degrees, in [0, 180]."""
    M = np.asarray(R_a, dtype=np.float64).T @ np.asarray(R_b, dtype=np.float64)
    # atan2 form stays accurate for small angles where arccos does not
    sin_part = 0.5 * math.sqrt(
        (M[2, 1] - M[1, 2]) ** 2 + (M[0, 2] - M[2, 0]) ** 2 + (M[1, 0] - M[0, 1]) ** 2
    )
    cos_part = 0.5 * (M[0, 0] + M[1, 1] + M[2, 2] - 1.0)
    return math.degrees(math.atan2(sin_part, cos_part))


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on the Fibonacci lattice, shape (n, 3)."""
    if int(n) != n or n < 1:
        raise ValueError(f"fibonacci_sphere needs n >= 1, got {n}")
    n = int(n)
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden_angle = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden_angle * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


class PixelCoord(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        _check_intrinsics(self)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def kernel_params(self) -> np.ndarray:
        return np.array(
            [PINHOLE_ID, self.fx, self.fy, self.cx, self.cy, 0.0, 0.0, self.width, self.height],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class DoubleSphereCamera:
    """Double-sphere fisheye model (offset ``xi`` between spheres, blend ``alpha``)."""

    fx: float
    fy: float
    cx: float
    cy: float
    xi: float
    alpha: float
    width: int
    height: int

    def __post_init__(self):
        _check_intrinsics(self)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"double-sphere alpha must lie in [0, 1], got {self.alpha}")

    def kernel_params(self) -> np.ndarray:
        return np.array(
            [DOUBLE_SPHERE_ID, self.fx, self.fy, self.cx, self.cy, self.xi, self.alpha,
             self.width, self.height],
            dtype=np.float64,
        )


CameraModel = Union[PinholeCamera, DoubleSphereCamera]


def _check_intrinsics(cam) -> None:
    if not (cam.fx > 0 and cam.fy > 0):
        raise ValueError(f"focal lengths must be positive, got fx={cam.fx}, fy={cam.fy}")
    if not (cam.width > 0 and cam.height > 0):
        raise ValueError(f"image size must be positive, got {cam.width}x{cam.height}")


def project_points(cam: CameraModel, points, check_bounds: bool = True):
    """Vectorized projection of camera-frame points.

    Returns ``(u, v, ok)``; ``u``/``v`` are only meaningful where ``ok``.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        if isinstance(cam, PinholeCamera):
            denom = z
            ok = z > NEAR_EPS
        else:
            xi, alpha = cam.xi, cam.alpha
            d1 = np.sqrt(x * x + y * y + z * z)
            zs = xi * d1 + z
            d2 = np.sqrt(x * x + y * y + zs * zs)
            denom = alpha * d2 + (1.0 - alpha) * zs
            w2 = _double_sphere_w2(xi, alpha)
            ok = (denom > NEAR_EPS) & (z > -w2 * d1)
        safe = np.where(ok, denom, 1.0)
        u = cam.fx * x / safe + cam.cx
        v = cam.fy * y / safe + cam.cy
    ok &= np.isfinite(u) & np.isfinite(v)
    if check_bounds:
        ok &= (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    return u, v, ok


def _double_sphere_w2(xi: float, alpha: float) -> float:
    w1 = alpha / (1.0 - alpha) if alpha <= 0.5 else (1.0 - alpha) / alpha
    return (w1 + xi) / math.sqrt(2.0 * w1 * xi + xi * xi + 1.0)


def project(cam: CameraModel, p_cam, check_bounds: bool = True) -> Optional[PixelCoord]:
    """Project one camera-frame point; ``None`` when it falls outside the field of view."""
    u, v, ok = project_points(cam, p_cam, check_bounds=check_bounds)
    if not ok[0]:
        return None
    return PixelCoord(float(u[0]), float(v[0]))
