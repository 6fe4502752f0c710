import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from micalib.data.synthetic import DEFAULT_GT, LidarPattern, SyntheticScene, render_synthetic
from micalib.experiments import (
    BatchStatistics,
    PerturbationMode,
    RunRecord,
    apply_perturbation,
    batch_statistics,
    bullseye_svg,
    emit_bullseye,
    generate_perturbations,
    heatmap_svg,
    histogram_svg,
    hit_metric,
    joint_histogram,
    mi_surface_sweep,
    projection_overlay_svg,
    residual_errors,
    resolve_axis,
    run_batch,
    statistics_row,
    write_records_csv,
    write_statistics_csv,
)
from micalib.geometry import ExtrinsicParams, PinholeCamera
from micalib.mi import MIObjectiveContext, objective
from micalib.optimizer import OptimizerConfig

SVG = "{http://www.w3.org/2000/svg}"
ZERO = ExtrinsicParams(0, 0, 0, 0, 0, 0)


def record(residual, hit=True, gt=DEFAULT_GT, start=None):
    opt = ExtrinsicParams(*(gt.as_array() + np.asarray(residual, dtype=float)))
    init = opt if start is None else ExtrinsicParams(*(gt.as_array() + np.asarray(start, dtype=float)))
    return RunRecord(init, opt, gt, 1.0, 10, hit, "radius")


@pytest.fixture(scope="module")
def ctx(small_frames, camera):
    return MIObjectiveContext(small_frames, camera)


class TestPerturbations:
    def test_rotation_only_norms(self):
        b = generate_perturbations("rotation", 1.0)
        assert len(b) == 200
        for d in b.perturbations:
            assert np.linalg.norm(d.angles) == pytest.approx(1.0, abs=1e-9)
            assert np.all(d.translation == 0)

    def test_rotation_mode_ignores_translation(self):
        b = generate_perturbations(PerturbationMode.ROTATION, 2.0, 0.3, n=10)
        assert b.translation_magnitude == 0.0
        assert all(np.all(d.translation == 0) for d in b.perturbations)

    def test_six_dof_shares_directions(self):
        b = generate_perturbations("rotation+translation", 0.5, 0.25, n=50)
        for d, u in zip(b.perturbations, b.directions):
            np.testing.assert_allclose(d.angles, 0.5 * u, atol=1e-15)
            np.testing.assert_allclose(d.translation, 0.25 * u, atol=1e-15)
            assert np.linalg.norm(d.translation) == pytest.approx(0.25, abs=1e-9)

    def test_zero_magnitude_is_identity(self):
        assert all(d == ZERO for d in generate_perturbations("rotation", 0.0).perturbations)

    def test_distinct_at_ten_degrees(self):
        v = np.array([d.as_array() for d in generate_perturbations("rotation", 10.0).perturbations])
        gaps = np.linalg.norm(v[:, None] - v[None], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        assert gaps.min() > 0

    def test_deterministic(self):
        a = generate_perturbations("rotation+translation", 2.0, 0.1, n=30)
        b = generate_perturbations("rotation+translation", 2.0, 0.1, n=30)
        assert a.perturbations == b.perturbations

    def test_invalid(self):
        with pytest.raises(ValueError):
            generate_perturbations("rotation", 1.0, n=0)
        with pytest.raises(ValueError):
            generate_perturbations("rotation", -1.0)
        with pytest.raises(ValueError):
            generate_perturbations("scale", 1.0)

    def test_apply(self):
        assert apply_perturbation(DEFAULT_GT, ZERO) == DEFAULT_GT
        assert apply_perturbation(ZERO, ExtrinsicParams(1, 0, 0, 0, 0, 0)) == ExtrinsicParams(1, 0, 0, 0, 0, 0)

    @given(st.lists(st.floats(-20, 20), min_size=6, max_size=6))
    def test_apply_then_subtract(self, delta):
        d = np.array(delta)
        back = apply_perturbation(DEFAULT_GT, ExtrinsicParams(*d)).as_array() - d
        np.testing.assert_allclose(back, DEFAULT_GT.as_array(), atol=1e-12)


class TestHitMetric:
    @pytest.mark.parametrize("residual, hit", [
        ((0.4, 0, 0, 0.10, 0, 0), True),
        ((0.6, 0, 0, 0, 0, 0), False),
        ((0.5, 0, 0, 0, 0, 0), False),
        ((0, 0, 0, 0.20, 0, 0), False),
        ((0, 0, 0, 0, 0.12, 0.16), False),  # |t| = 0.2 exactly
        ((0, 0.49, 0, 0, 0, 0.19), True),
    ])
    def test_cases_at_zero(self, residual, hit):
        assert hit_metric(ExtrinsicParams(*residual), ZERO) is hit

    @pytest.mark.parametrize("axis", range(3))
    def test_exact_half_degree_around_ground_truth(self, axis):
        d = np.zeros(6)
        d[axis] = 0.5
        opt = ExtrinsicParams(*(DEFAULT_GT.as_array() + d))
        angle, _ = residual_errors(opt, DEFAULT_GT)
        assert angle == pytest.approx(0.5, abs=1e-9)
        assert not hit_metric(opt, DEFAULT_GT)

    def test_geodesic_not_euler_norm(self):
        # at theta_y = 90 only theta_x + theta_z matters, so a 42 deg Euler offset is no rotation
        gt = ExtrinsicParams(0, 90, 0, 0, 0, 0)
        opt = ExtrinsicParams(30, 90, -30, 0, 0, 0)
        assert residual_errors(opt, gt)[0] < 1e-6
        assert hit_metric(opt, gt)


class TestBatches:
    def test_zero_batch_all_hits(self, ctx):
        recs = run_batch(ctx, DEFAULT_GT, generate_perturbations("rotation", 0.0, n=3),
                         OptimizerConfig(max_evaluations=60))
        assert all(r.hit for r in recs)
        assert batch_statistics(recs).hit_rate == 1.0

    def test_serial_equals_parallel_and_invariants(self, ctx):
        batch = generate_perturbations("rotation", 1.0, n=4)
        serial = run_batch(ctx, DEFAULT_GT, batch, threads=1)
        parallel = run_batch(ctx, DEFAULT_GT, batch, threads=4)
        assert serial == parallel
        for r, d in zip(serial, batch.perturbations):
            assert r.initial == apply_perturbation(DEFAULT_GT, d)
            assert r.hit == hit_metric(r.optimized, r.ground_truth)
            assert np.array_equal(r.optimized.translation, DEFAULT_GT.translation)
            assert r.best_mi >= objective(r.initial, ctx)
        assert sum(r.hit for r in serial) >= 3

    def test_three_dof_rejects_translation(self, ctx):
        with pytest.raises(ValueError):
            run_batch(ctx, DEFAULT_GT, generate_perturbations("rotation+translation", 1.0, 0.1, n=2))
        with pytest.raises(ValueError):
            run_batch(ctx, DEFAULT_GT, generate_perturbations("rotation", 1.0, n=2), dof=4)

    def test_six_dof_moves_translation(self, ctx):
        batch = generate_perturbations("rotation+translation", 0.5, 0.1, n=1)
        (r,) = run_batch(ctx, DEFAULT_GT, batch, OptimizerConfig(max_evaluations=80), dof=6)
        assert not np.array_equal(r.optimized.translation, r.initial.translation)
        assert r.evaluations <= 80


class TestStatistics:
    def test_no_hits(self):
        s = batch_statistics([record([1, 0, 0, 0, 0, 0], hit=False)] * 3)
        assert (s.runs, s.hits, s.hit_rate) == (3, 0, 0.0)
        assert s.mean == (None,) * 6 and s.std == (None,) * 6

    def test_one_hit(self):
        s = batch_statistics([record([0.1, -0.2, 0.0, 0.01, 0.0, -0.03]), record([5, 0, 0, 0, 0, 0], hit=False)])
        np.testing.assert_allclose(s.mean, [0.1, -0.2, 0.0, 0.01, 0.0, -0.03], atol=1e-12)
        assert s.std == (None,) * 6
        assert s.hit_rate == 0.5

    def test_hand_computed(self):
        rows = [[0.1, 0.0, 0.0, 0.0, 0.0, 0.0], [-0.1, 0.0, 0.0, 0.0, 0.0, 0.02],
                [0.2, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0, 0.02]]
        s = batch_statistics([record(r, gt=ZERO) for r in rows] + [record([9, 0, 0, 0, 0, 0], hit=False, gt=ZERO)])
        assert (s.runs, s.hits) == (5, 4)
        assert s.mean[0] == pytest.approx(0.05, abs=1e-15)
        assert s.std[0] == pytest.approx(math.sqrt(0.05 / 3), abs=1e-15)
        assert s.mean[5] == pytest.approx(0.01, abs=1e-15)
        assert s.std[5] == pytest.approx(math.sqrt(4e-4 / 3), abs=1e-15)
        assert s.std[1] == 0.0

    def test_identical_residuals_zero_std(self):
        s = batch_statistics([record([0.3, -0.1, 0.2, 0.05, 0.01, 0.0])] * 6)
        np.testing.assert_allclose(s.std, 0.0, atol=1e-15)

    def test_csv_outputs(self, tmp_path):
        recs = [record([0.1, 0, 0, 0, 0, 0]), record([3, 0, 0, 0, 0, 0], hit=False)]
        write_records_csv(tmp_path / "r.csv", recs)
        rows = list(csv.DictReader(open(tmp_path / "r.csv")))
        assert len(rows) == 2
        assert [r["hit"] for r in rows] == ["1", "0"]
        assert float(rows[0]["opt_theta_x"]) == DEFAULT_GT.theta_x + 0.1
        none = batch_statistics([recs[1]])
        write_statistics_csv(tmp_path / "s.csv", [statistics_row(none, "d2d", 3, 10.0, 0.0)])
        (row,) = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert row["hits"] == "0" and row["mean_theta_x"] == "-" and row["std_t_z"] == "-"


class TestSweep:
    def test_center_cell_is_objective_at_gt(self, ctx):
        g = mi_surface_sweep(ctx, DEFAULT_GT, ("theta_x", "theta_y"), 2.0, 3)
        assert g.values.shape == (3, 3)
        assert g.values[1, 1] == objective(DEFAULT_GT, ctx)
        assert g.argmax() == (1, 1)

    def test_translation_axis_span(self, ctx):
        g = mi_surface_sweep(ctx, DEFAULT_GT, ("rz", "tx"), 4.0, 3)
        np.testing.assert_allclose(g.offsets_a, [-4, 0, 4])
        np.testing.assert_allclose(g.offsets_b, [-0.2, 0, 0.2])
        g = mi_surface_sweep(ctx, DEFAULT_GT, ("tx", "ty"), 4.0, 2, range_m=0.5)
        np.testing.assert_allclose(g.offsets_a, [-0.5, 0.5])

    def test_invalid(self, ctx):
        with pytest.raises(ValueError):
            mi_surface_sweep(ctx, DEFAULT_GT, ("theta_x", "theta_y"), 2.0, 1)
        with pytest.raises(ValueError):
            mi_surface_sweep(ctx, DEFAULT_GT, ("theta_x", "theta_x"), 2.0, 3)
        with pytest.raises(ValueError, match="unknown axis"):
            resolve_axis("yaw")

    def test_csv_and_svg(self, ctx, tmp_path):
        g = mi_surface_sweep(ctx, DEFAULT_GT, ("theta_x", "theta_z"), 1.0, 4)
        g.to_csv(tmp_path / "s.csv")
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0] == ["d_theta_x", "d_theta_z", "mi"]
        assert len(rows) == 1 + 16
        root = ET.fromstring(g.to_svg())
        assert len(root.findall(f"{SVG}rect")) >= 16

    def test_mirror_symmetric_scene(self):
        # the scene is symmetric under y -> -y, the camera looks straight down +x
        scene = SyntheticScene(
            boxes=[[5, 1, -1.7, 7, 3, 1], [5, -3, -1.7, 7, -1, 1], [12, -1, -1.7, 13, 1, 2]],
            box_albedo=[0.5] * 3, box_reflectivity=[0.5] * 3,
            planes=[[0, 0, 1, -1.7], [-1, 0, 0, -30]], plane_albedo=[0.3, 0.6],
            plane_reflectivity=[0.3, 0.6],
            lidar=LidarPattern(azimuth_count=720, elevations_deg=tuple(np.linspace(-20, 10, 48))))
        cam = PinholeCamera(200.0, 200.0, 99.5, 59.5, 200, 120)
        gt = ExtrinsicParams(90.0, 0.0, 90.0, 0.0, 0.0, 0.0)
        frame = render_synthetic(scene, gt, cam, seed=None)
        sym_ctx = MIObjectiveContext([frame], cam)
        g = mi_surface_sweep(sym_ctx, gt, ("theta_z", "theta_x"), 4.0, 5)
        # yaw flips sign under the mirror, pitch about the optical x axis does not;
        # rounding differences only move a handful of pairs across bin edges
        spread = np.ptp(g.values)
        assert np.max(np.abs(g.values - g.values[:, ::-1])) <= 0.01 * spread
        assert g.argmax() == (2, 2)


class TestBullseye:
    def test_rows_and_svg(self, tmp_path):
        recs = [record([0.1, -0.2, 0, 0, 0, 0], start=[1, 1, 0, 0, 0, 0]),
                record([2, 1, 0, 0, 0, 0], hit=False, start=[-1, 0.5, 0, 0, 0, 0]),
                record([0, 0.3, 0, 0, 0, 0], start=[0, -1, 0, 0, 0, 0])]
        data = emit_bullseye(recs, csv_path=tmp_path / "b.csv", svg_path=tmp_path / "b.svg")
        rows = list(csv.reader(open(tmp_path / "b.csv")))
        assert rows[0] == ["run", "endpoint", "d_theta_x", "d_theta_y", "hit"]
        assert len(rows) - 1 == 2 * len(recs)
        np.testing.assert_allclose(data.initial[1], [-1, 0.5], atol=1e-12)
        np.testing.assert_allclose(data.optimized[0], [0.1, -0.2], atol=1e-12)
        root = ET.parse(tmp_path / "b.svg").getroot()
        assert len(root.findall(f"{SVG}line")) == len(recs)

    def test_zero_residual_markers_at_origin(self):
        data = emit_bullseye([record(np.zeros(6))], dof_axes=("rz", "tx"))
        assert data.axes == (2, 3)
        assert np.all(data.initial == 0) and np.all(data.optimized == 0)
        root = ET.fromstring(bullseye_svg(data, size=400))
        (line,) = root.findall(f"{SVG}line")
        assert [float(line.get(k)) for k in ("x1", "y1", "x2", "y2")] == [200.0] * 4

    def test_empty(self):
        root = ET.fromstring(bullseye_svg(emit_bullseye([])))
        assert root.findall(f"{SVG}line") == []


class TestDiagnostics:
    def test_joint_histogram_sums_frames(self, ctx):
        h = joint_histogram(ctx, DEFAULT_GT)
        assert h.counts.sum() == h.total > 0
        root = ET.fromstring(histogram_svg(h))
        assert root.tag == f"{SVG}svg"

    def test_overlay(self, small_frames, camera):
        root = ET.fromstring(projection_overlay_svg(small_frames[0], DEFAULT_GT, camera, max_points=500))
        assert 0 < len(root.findall(f".//{SVG}circle")) <= 500

    def test_heatmap_handles_nan(self):
        root = ET.fromstring(heatmap_svg(np.array([[1.0, np.nan], [0.0, 2.0]]), "a", "b", (0, 1), (0, 1), "t"))
        assert len(root.findall(f"{SVG}rect")) >= 4
