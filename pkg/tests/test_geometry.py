import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from micalib.geometry import (
    DoubleSphereCamera,
    ExtrinsicParams,
    PinholeCamera,
    RigidTransform,
    euler_to_rotation,
    fibonacci_sphere,
    params_to_transform,
    project,
    project_points,
    rot_x,
    rotation_error_angle,
    rotation_to_euler,
    transform_point,
)

angle = st.floats(-720.0, 720.0, allow_nan=False)
coord = st.floats(-50.0, 50.0, allow_nan=False)
params_st = st.builds(ExtrinsicParams, angle, angle, angle, coord, coord, coord)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


class TestParamsToTransform:
    def test_zero_is_identity(self):
        T = params_to_transform(ExtrinsicParams())
        assert np.array_equal(T.rotation, np.eye(3))
        assert np.array_equal(T.translation, np.zeros(3))

    def test_rx90_maps_y_to_z(self):
        T = params_to_transform(ExtrinsicParams(90, 0, 0, 0, 0, 0))
        np.testing.assert_allclose(transform_point(T, [0, 1, 0]), [0, 0, 1], atol=1e-15)

    def test_rx90_ry90_matches_explicit_product(self):
        # canonical matrices written out by hand, multiplied entrywise
        Rx = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
        Ry = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], dtype=float)
        expected = np.array([[sum(Rx[i, k] * Ry[k, j] for k in range(3)) for j in range(3)]
                             for i in range(3)])
        R = params_to_transform(ExtrinsicParams(90, 90, 0, 0, 0, 0)).rotation
        np.testing.assert_allclose(R, expected, atol=1e-15)
        np.testing.assert_allclose(R, [[0, 0, 1], [1, 0, 0], [0, 1, 0]], atol=1e-15)

    def test_order_is_x_then_y_then_z(self):
        R = euler_to_rotation(20.0, -35.0, 50.0)
        a = np.radians([20.0, -35.0, 50.0])
        cx, sx, cy, sy, cz, sz = (math.cos(a[0]), math.sin(a[0]), math.cos(a[1]),
                                  math.sin(a[1]), math.cos(a[2]), math.sin(a[2]))
        Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        np.testing.assert_allclose(R, Rx @ Ry @ Rz, atol=1e-15)

    def test_translation_only_has_exact_identity_rotation(self):
        T = params_to_transform(ExtrinsicParams(0, 0, 0, 1.5, -2.0, 0.25))
        assert np.array_equal(T.rotation, np.eye(3))
        np.testing.assert_array_equal(T.translation, [1.5, -2.0, 0.25])

    def test_orthonormal_for_many_random_params(self, rng):
        for p in rng.uniform(-360, 360, size=(10_000, 3)):
            R = euler_to_rotation(*p)
            assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-9
            assert abs(np.linalg.det(R) - 1.0) < 1e-9

    @given(params_st)
    def test_orthonormal_property(self, p):
        R = params_to_transform(p).rotation
        assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9

    def test_euler_round_trip(self, rng):
        for _ in range(200):
            ang = rng.uniform([-180, -89, -180], [180, 89, 180])
            np.testing.assert_allclose(rotation_to_euler(euler_to_rotation(*ang)), ang, atol=1e-9)


class TestExtrinsicParams:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ExtrinsicParams(float("nan"), 0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            ExtrinsicParams(0, 0, 0, 0, float("inf"), 0)

    def test_array_round_trip_and_arithmetic(self):
        p = ExtrinsicParams(1, 2, 3, 0.1, 0.2, 0.3)
        assert ExtrinsicParams.from_array(p.as_array()) == p
        q = p + ExtrinsicParams(1, 0, 0, 0, 0, 0.5)
        np.testing.assert_allclose((q - p).as_array(), [1, 0, 0, 0, 0, 0.5], atol=1e-15)

    def test_angles_stored_unwrapped(self):
        p = ExtrinsicParams(370.0, 0, 0, 0, 0, 0)
        assert p.theta_x == 370.0
        np.testing.assert_allclose(params_to_transform(p).rotation, rot_x(10.0), atol=1e-12)

    def test_from_array_checks_length(self):
        with pytest.raises(ValueError):
            ExtrinsicParams.from_array([1, 2, 3])


class TestTransformPoint:
    def test_identity(self):
        assert np.array_equal(transform_point(RigidTransform.identity(), [1, 2, 3]), [1, 2, 3])

    def test_pure_translation(self):
        T = RigidTransform(np.eye(3), [0, 0, 5])
        np.testing.assert_array_equal(transform_point(T, [1, 1, 1]), [1, 1, 6])

    def test_inverse_round_trip(self, rng):
        for _ in range(100):
            T = RigidTransform(random_rotation(rng), rng.normal(size=3) * 10)
            p = rng.normal(size=3) * 20
            np.testing.assert_allclose(transform_point(T.inverse(), transform_point(T, p)), p, atol=1e-9)

    def test_compose_matches_matrix_product(self, rng):
        A = RigidTransform(random_rotation(rng), rng.normal(size=3))
        B = RigidTransform(random_rotation(rng), rng.normal(size=3))
        np.testing.assert_allclose(A.compose(B).matrix(), A.matrix() @ B.matrix(), atol=1e-12)

    def test_apply_batch_matches_single(self, rng):
        T = RigidTransform(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(20, 3))
        np.testing.assert_allclose(T.apply(pts), [transform_point(T, p) for p in pts], atol=1e-12)

    def test_transform_arrays_are_read_only(self):
        T = RigidTransform.identity()
        with pytest.raises(ValueError):
            T.rotation[0, 0] = 2.0


class TestProjection:
    def test_unit_pinhole_origin(self):
        cam = PinholeCamera(1.0, 1.0, 0.0, 0.0, 10, 10)
        assert project(cam, [0, 0, 1], check_bounds=False) == (0.0, 0.0)

    def test_pinhole_arithmetic(self, tiny_pinhole):
        px = project(tiny_pinhole, [1, 2, 2], check_bounds=False)
        assert px.u == pytest.approx(100.0, abs=1e-12)
        assert px.v == pytest.approx(150.0, abs=1e-12)

    def test_out_of_bounds_is_rejected(self, tiny_pinhole):
        assert project(tiny_pinhole, [1, 2, 2]) is None
        assert project(tiny_pinhole, [0, 0, 1]) == (50.0, 50.0)

    def test_behind_and_near_plane_rejected(self, tiny_pinhole):
        assert project(tiny_pinhole, [0, 0, -5]) is None
        assert project(tiny_pinhole, [0, 0, 1e-6]) is None
        assert project(tiny_pinhole, [0, 0, 2e-6]) is not None

    def test_image_bounds_are_half_open(self, tiny_pinhole):
        # u = 100 exactly is outside [0, 100)
        assert project(tiny_pinhole, [0.5, 0, 1]) is None
        assert project(tiny_pinhole, [-0.5, 0, 1]) == (0.0, 50.0)

    def test_double_sphere_reduces_to_pinhole(self, rng):
        pin = PinholeCamera(420.0, 410.0, 300.0, 200.0, 640, 480)
        ds = DoubleSphereCamera(420.0, 410.0, 300.0, 200.0, 0.0, 0.0, 640, 480)
        pts = np.column_stack([rng.uniform(-5, 5, 1000), rng.uniform(-5, 5, 1000),
                               rng.uniform(0.1, 20, 1000)])
        u1, v1, ok1 = project_points(pin, pts, check_bounds=False)
        u2, v2, ok2 = project_points(ds, pts, check_bounds=False)
        assert ok1.all() and ok2.all()
        np.testing.assert_allclose(u2, u1, rtol=0, atol=1e-9)
        np.testing.assert_allclose(v2, v1, rtol=0, atol=1e-9)

    def test_double_sphere_formula(self):
        cam = DoubleSphereCamera(300.0, 300.0, 320.0, 240.0, -0.2, 0.6, 640, 480)
        p = np.array([1.0, -0.5, 2.0])
        d1 = np.linalg.norm(p)
        zs = -0.2 * d1 + p[2]
        d2 = math.sqrt(p[0] ** 2 + p[1] ** 2 + zs ** 2)
        den = 0.6 * d2 + 0.4 * zs
        px = project(cam, p)
        assert px.u == pytest.approx(300.0 * p[0] / den + 320.0, abs=1e-9)
        assert px.v == pytest.approx(300.0 * p[1] / den + 240.0, abs=1e-9)

    def test_double_sphere_sees_beyond_90_degrees(self):
        cam = DoubleSphereCamera(200.0, 200.0, 500.0, 500.0, 0.6, 0.6, 1000, 1000)
        # 100 degrees off axis: invalid for a pinhole, valid for this fisheye
        a = math.radians(100.0)
        p = [math.sin(a), 0.0, math.cos(a)]
        assert project(cam, p) is not None
        assert project(PinholeCamera(200.0, 200.0, 500.0, 500.0, 1000, 1000), p) is None

    def test_double_sphere_rejects_straight_back(self):
        cam = DoubleSphereCamera(200.0, 200.0, 500.0, 500.0, 0.6, 0.6, 1000, 1000)
        assert project(cam, [0.0, 0.0, -1.0]) is None

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            PinholeCamera(0.0, 1.0, 0, 0, 10, 10)
        with pytest.raises(ValueError):
            PinholeCamera(1.0, 1.0, 0, 0, 0, 10)
        with pytest.raises(ValueError):
            DoubleSphereCamera(1.0, 1.0, 0, 0, 0.1, 1.5, 10, 10)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 30), st.floats(0.01, 100))
    def test_pinhole_scale_invariance(self, x, y, z, lam):
        cam = PinholeCamera(500.0, 480.0, 320.0, 240.0, 640, 480)
        u1, v1, _ = project_points(cam, [x, y, z], check_bounds=False)
        u2, v2, _ = project_points(cam, [lam * x, lam * y, lam * z], check_bounds=False)
        assert abs(u1[0] - u2[0]) < 1e-9 and abs(v1[0] - v2[0]) < 1e-9

    @settings(max_examples=50)
    @given(params_st, st.lists(st.floats(-20, 20), min_size=3, max_size=3))
    def test_chained_projection_equals_pretransformed(self, p, pt):
        cam = PinholeCamera(500.0, 480.0, 320.0, 240.0, 640, 480)
        T = params_to_transform(p)
        a = project(cam, transform_point(T, pt))
        b = project(cam, T.apply(np.array([pt]))[0])
        assert a == b


class TestRotationError:
    def test_equal_rotations(self, rng):
        R = random_rotation(rng)
        assert rotation_error_angle(R, R) == pytest.approx(0.0, abs=1e-9)

    def test_known_offset(self, rng):
        R = random_rotation(rng)
        assert rotation_error_angle(R, R @ rot_x(10.0)) == pytest.approx(10.0, abs=1e-6)

    def test_small_angle_precision(self):
        assert rotation_error_angle(np.eye(3), rot_x(1e-6)) == pytest.approx(1e-6, rel=1e-6)

    def test_symmetric(self, rng):
        for _ in range(100):
            A, B = random_rotation(rng), random_rotation(rng)
            assert abs(rotation_error_angle(A, B) - rotation_error_angle(B, A)) < 1e-9

    def test_range(self, rng):
        for _ in range(100):
            a = rotation_error_angle(random_rotation(rng), random_rotation(rng))
            assert 0.0 <= a <= 180.0
        assert rotation_error_angle(np.eye(3), rot_x(180.0)) == pytest.approx(180.0, abs=1e-9)


class TestFibonacciSphere:
    def test_unit_norm_200(self):
        v = fibonacci_sphere(200)
        assert v.shape == (200, 3)
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)

    def test_single_point(self):
        v = fibonacci_sphere(1)
        assert v.shape == (1, 3)
        assert np.linalg.norm(v[0]) == pytest.approx(1.0, abs=1e-12)

    def test_balanced(self):
        assert np.all(np.abs(fibonacci_sphere(200).mean(axis=0)) < 0.05)

    def test_lattice_definition(self):
        v = fibonacci_sphere(7)
        i = np.arange(7)
        np.testing.assert_allclose(v[:, 2], 1 - (2 * i + 1) / 7, atol=1e-15)
        phi = np.arctan2(v[:, 1], v[:, 0])
        golden = math.pi * (3 - math.sqrt(5))
        np.testing.assert_allclose(np.cos(phi - golden * i), 1.0, atol=1e-12)

    def test_deterministic(self):
        assert np.array_equal(fibonacci_sphere(50), fibonacci_sphere(50))

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            fibonacci_sphere(0)

    def test_no_duplicates_up_to_10000(self):
        v = fibonacci_sphere(10_000)
        for start in range(0, len(v), 1000):
            d = v[start:start + 1000] @ v.T
            d[np.arange(d.shape[0]), start + np.arange(d.shape[0])] = -1.0
            assert d.max() < 1.0 - 1e-12
