"""Benchmark harness: simulation, CV, model selection, and LOSO fusion."""

import numpy as np
import pytest

from fieldfuse.covariance import ProductSumKernel, make_anchors
from fieldfuse.sblue import ExceedanceSensorModel
from fieldfuse.simbench import (
    BenchRow,
    SimConfig,
    benchmark_anchor_layout,
    fit_kernel_engine,
    kernel_cov_builder,
    kfold_cv,
    kriging_predict,
    loso_cv,
    rmse,
    run_table5,
    sample_gp,
    scale_sites,
    select_basis_count,
)


class TestScaleSites:
    def test_unit_square_coverage(self):
        xy = scale_sites(50, 0)
        assert xy.min(axis=0) == pytest.approx([0.0, 0.0])
        assert xy.max(axis=0) == pytest.approx([1.0, 1.0])

    def test_two_points_are_corners(self):
        xy = scale_sites(2, 1)
        assert set(map(tuple, np.sort(xy, axis=0))) <= {(0.0, 0.0), (1.0, 1.0)}

    def test_determinism(self):
        assert np.array_equal(scale_sites(30, 7), scale_sites(30, 7))

    def test_minimum_count(self):
        with pytest.raises(ValueError):
            scale_sites(1, 0)


class TestSampleGP:
    KERNEL = ProductSumKernel(1.0, 0.0, 0.0, 0.2, 1.0)

    def test_moments(self):
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.random((100, 2)) * 10, np.zeros(100)])
        draws = np.array([sample_gp(pts, self.KERNEL, s) for s in range(100)])
        # distant points are near-independent: 10^4 effective samples
        assert abs(draws.mean()) < 3.0 / np.sqrt(draws.size)
        assert np.var(draws) == pytest.approx(1.0, rel=0.05)

    def test_coincident_sites_identical(self):
        pts = np.array([[0.3, 0.3, 0.0], [0.3, 0.3, 0.0], [0.8, 0.1, 0.0]])
        f = sample_gp(pts, self.KERNEL, 5)
        assert f[0] == pytest.approx(f[1], abs=1e-4)

    def test_seed_determinism(self):
        pts = np.column_stack([np.random.default_rng(1).random((20, 2)),
                               np.zeros(20)])
        assert np.array_equal(sample_gp(pts, self.KERNEL, 9),
                              sample_gp(pts, self.KERNEL, 9))


class TestKrigingPredict:
    def test_solvers_agree(self):
        rng = np.random.default_rng(2)
        kernel = ProductSumKernel(1.0, 0.0, 0.0, 0.15, 1.0)
        sites = np.column_stack([rng.random((40, 2)), np.zeros(40)])
        values = sample_gp(sites, kernel, 3)
        targets = np.column_stack([rng.random((15, 2)), np.zeros(15)])
        a = kriging_predict(kernel, 0.01, sites, values, targets,
                            solver="factored")
        b = kriging_predict(kernel, 0.01, sites, values, targets,
                            solver="per-site")
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_empty_targets(self):
        kernel = ProductSumKernel(1.0, 0.0, 0.0, 0.15, 1.0)
        out = kriging_predict(kernel, 0.01, np.zeros((2, 3)), [0.0, 1.0],
                              np.zeros((0, 3)))
        assert out.shape == (0,)

    def test_unknown_solver(self):
        kernel = ProductSumKernel(1.0, 0.0, 0.0, 0.15, 1.0)
        with pytest.raises(ValueError):
            kriging_predict(kernel, 0.01, np.zeros((2, 3)), [0.0, 1.0],
                            np.zeros((1, 3)), solver="magic")


class TestFitKernelEngine:
    def test_recovers_field_scale(self):
        truth = ProductSumKernel(1.0, 0.0, 0.0, 0.1, 1.0)
        sills = []
        for rep in range(5):
            sites = np.column_stack([scale_sites(300, rep), np.zeros(300)])
            y = sample_gp(sites, truth, 50 + rep)
            kernel, nugget = fit_kernel_engine(sites, y)
            sills.append(kernel.sill + nugget)
        assert np.mean(sills) == pytest.approx(1.0, rel=0.35)


class TestHelpers:
    def test_rmse_zero_for_truth(self):
        y = np.random.default_rng(4).random(20)
        assert rmse(y, y) == 0.0

    def test_bench_row_validation(self):
        with pytest.raises(ValueError):
            BenchRow("x", -0.1, 0.0, 0.0, 1)

    def test_benchmark_anchor_layout(self):
        layout = benchmark_anchor_layout(3)
        assert layout.n_anchors == 9
        assert layout.spatial_only
        assert layout.r_tilde_s == pytest.approx(1.5 * 0.4)

    def test_sim_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(n_sites=1)
        with pytest.raises(ValueError):
            SimConfig(replications=0)


class TestKfoldCV:
    def test_constant_model_rmse_is_std(self):
        rng = np.random.default_rng(5)
        pts = np.column_stack([rng.random((200, 2)), np.zeros(200)])
        y = rng.standard_normal(200)

        def builder(train_points, train_values):
            mean = float(np.mean(train_values))
            return lambda q: np.full(len(q), mean)

        score = kfold_cv(pts, y, builder)
        assert score == pytest.approx(np.std(y), rel=0.1)

    def test_seed_determinism(self):
        rng = np.random.default_rng(6)
        pts = np.column_stack([rng.random((50, 2)), np.zeros(50)])
        y = rng.standard_normal(50)

        def builder(train_points, train_values):
            return lambda q: np.zeros(len(q))

        assert kfold_cv(pts, y, builder, seed=3) == kfold_cv(
            pts, y, builder, seed=3)

    def test_too_few_observations(self):
        def builder(tp, tv):
            return lambda q: np.zeros(len(q))
        with pytest.raises(ValueError):
            kfold_cv(np.zeros((3, 3)), np.zeros(3), builder, k=5)


class TestSelectBasisCount:
    def test_single_candidate_returned(self):
        rng = np.random.default_rng(7)
        pts = np.column_stack([rng.random((80, 2)), np.zeros(80)])
        y = rng.standard_normal(80)
        grid = [(0.2, 0.2), (0.8, 0.2), (0.5, 0.8)]
        sel = select_basis_count(pts, y, [grid])
        assert sel.n_basis == 3
        assert len(sel.curve) == 1

    def test_curve_matches_kfold(self):
        rng = np.random.default_rng(8)
        pts = np.column_stack([rng.random((80, 2)), np.zeros(80)])
        y = rng.standard_normal(80)
        grid = [(0.2, 0.2), (0.8, 0.2), (0.5, 0.8)]
        sel = select_basis_count(pts, y, [grid], seed=2)
        from fieldfuse.simbench import _em_model_builder
        layout = make_anchors(grid, 1, (0.0, 0.0))
        direct = kfold_cv(pts, y, _em_model_builder(layout, seed=2), seed=2)
        assert sel.curve[0][1] == pytest.approx(direct)

    def test_no_candidates(self):
        with pytest.raises(ValueError):
            select_basis_count(np.zeros((10, 3)), np.zeros(10), [])


class TestLoso:
    SENSOR = ExceedanceSensorModel(T=0.3, p_given_exceed=0.7, p_given_not=0.1)

    def _stations(self, rng, n_stations=6, n_per=5):
        kernel = ProductSumKernel(0.0, 0.0, 1.0, 0.4, 0.5)
        # spread deterministic layout so every variogram bin stays populated
        xy = np.array([[0.1, 0.1], [0.9, 0.15], [0.5, 0.5], [0.15, 0.85],
                       [0.85, 0.9], [0.4, 0.05]])[:n_stations]
        stations = []
        all_pts, all_vals = [], []
        for s in range(n_stations):
            t = np.arange(n_per, dtype=float)
            pts = np.column_stack([np.full(n_per, xy[s, 0]),
                                   np.full(n_per, xy[s, 1]), t])
            all_pts.append(pts)
        field = sample_gp(np.vstack(all_pts), kernel, 11)
        for s in range(n_stations):
            vals = field[s * n_per:(s + 1) * n_per]
            stations.append((all_pts[s], vals))
        return stations

    def test_zero_reports_with_equals_without(self):
        rng = np.random.default_rng(9)
        stations = self._stations(rng)
        res = loso_cv(stations, [], self.SENSOR,
                      kernel_cov_builder(bin_count=3, max_lag=1.5))
        assert res.pooled_with == pytest.approx(res.pooled_without, abs=1e-12)
        assert res.gap == pytest.approx(0.0, abs=1e-12)

    def test_uninformative_sensor_changes_nothing(self):
        rng = np.random.default_rng(10)
        stations = self._stations(rng)
        flat = ExceedanceSensorModel(T=0.3, p_given_exceed=0.5,
                                     p_given_not=0.5)
        reports = [(np.array([0.5, 0.5, 2.0]), 1),
                   (np.array([0.2, 0.8, 1.0]), 0)]
        res = loso_cv(stations, reports, flat,
                      kernel_cov_builder(bin_count=3, max_lag=1.5))
        assert res.pooled_with == pytest.approx(res.pooled_without, abs=1e-8)

    def test_needs_two_stations(self):
        with pytest.raises(ValueError):
            loso_cv([(np.zeros((2, 3)), np.zeros(2))], [], self.SENSOR,
                    kernel_cov_builder())


@pytest.mark.slow
class TestTables:
    def test_table5_smoke(self):
        cfg = SimConfig(replications=2, grid_shape=(8, 8))
        report = run_table5(cfg)
        labels = [r.label for r in report.rows]
        assert any(l.startswith("kernel") for l in labels)
        assert any(l.startswith("basis") for l in labels)
        for r in report.rows:
            assert r.n_ok == 2 and r.mean_rmse > 0

    def test_report_determinism(self):
        cfg = SimConfig(replications=2, grid_shape=(6, 6))
        a = run_table5(cfg)
        b = run_table5(cfg)
        for ra, rb in zip(a.rows, b.rows):
            assert ra.mean_rmse == rb.mean_rmse
            assert ra.rmse_std == rb.rmse_std
        assert a.config_hash == b.config_hash

    def test_row_lookup(self):
        cfg = SimConfig(replications=1, grid_shape=(6, 6))
        report = run_table5(cfg)
        assert report.row(report.rows[0].label) is report.rows[0]
        with pytest.raises(KeyError):
            report.row("nonexistent")
