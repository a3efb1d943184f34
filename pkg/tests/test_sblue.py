"""Fusion estimator: closed-form moments, assembly, and solver properties."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from fieldfuse.covariance import ProductSumKernel
from fieldfuse.ingest import SpaceTimePoint
from fieldfuse.sblue import (
    ExceedanceSensorModel,
    FieldEstimate,
    FusionProblem,
    FusionSolver,
    ObservationSet,
    _bvn_cdf,
    cross_moment_binary_binary,
    cross_moment_obs_obs,
    cross_moment_process_obs,
    exceedance_prob,
    marginal_cross_moment_binary_binary,
    marginal_cross_moment_obs_obs,
    marginal_report_prob,
    mc_moment_oracle,
    sblue_estimate,
)
from fieldfuse.simbench import kriging_predict, sample_gp


KERNEL = ProductSumKernel(1.0, 0.0, 0.0, 0.3, 1.0)
SENSOR = ExceedanceSensorModel(T=0.0, p_given_exceed=0.9, p_given_not=0.1)


def pt(lon, lat, t=0.0):
    return SpaceTimePoint(lon, lat, t)


def _problem(rng, n=5, m=4, sigma2=0.25, mode="plug-in", sensor=SENSOR):
    cont = [(pt(*rng.random(2)), float(rng.standard_normal()))
            for _ in range(n)]
    binary = [(pt(*rng.random(2)), int(rng.integers(0, 2))) for _ in range(m)]
    plugin = 0.3 * rng.standard_normal(m) if mode == "plug-in" else np.zeros(m)
    return FusionProblem(ObservationSet(cont, binary), KERNEL, sigma2,
                         sensor, plugin, moment_mode=mode)


class TestExceedanceProb:
    def test_midpoint_at_threshold(self):
        s = ExceedanceSensorModel(0.7, 0.8, 0.2)
        assert exceedance_prob(0.7, 0.5, s) == pytest.approx(0.5)

    def test_limits(self):
        assert exceedance_prob(100.0, 0.1, SENSOR) == pytest.approx(0.9)
        assert exceedance_prob(-100.0, 0.1, SENSOR) == pytest.approx(0.1)

    def test_nonpositive_variance(self):
        with pytest.raises(ValueError):
            exceedance_prob(0.0, 0.0, SENSOR)


class TestBvnCdf:
    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            h, k = rng.uniform(-3, 3, 2)
            r = rng.uniform(-0.99, 0.99)
            ref = multivariate_normal(
                mean=[0, 0], cov=[[1, r], [r, 1]]).cdf([h, k])
            assert _bvn_cdf(h, k, r) == pytest.approx(ref, abs=1e-10)

    def test_independence_factorizes(self):
        assert _bvn_cdf(0.5, -0.3, 0.0) == pytest.approx(
            norm.cdf(0.5) * norm.cdf(-0.3), abs=1e-10)


class DictCov:
    """Covariance stub with prescribed pairwise values for lemma fixtures."""

    def __init__(self, table):
        self.table = table

    def matrix(self, pts_a, pts_b=None):
        pts_b = pts_a if pts_b is None else pts_b
        out = np.empty((len(pts_a), len(pts_b)))
        for i, a in enumerate(pts_a):
            for j, b in enumerate(pts_b):
                key = frozenset([(a.lon, a.lat, a.t), (b.lon, b.lat, b.t)])
                out[i, j] = self.table[key]
        return out


class TestClosedFormMoments:
    def _fixture(self):
        x_star, x_I = pt(0.0, 0.0), pt(1.0, 0.0)
        key_ss = frozenset([(0.0, 0.0, 0.0)])
        key_II = frozenset([(1.0, 0.0, 0.0)])
        key_sI = frozenset([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)])
        cov = DictCov({key_ss: 1.0, key_II: 1.0, key_sI: 0.8})
        return x_star, x_I, cov

    def test_process_obs_hand_value(self):
        # c*_I = 0.8, c_II = 1, sigma2 = 0.25, T = 0, sensor 0.9/0.1
        x_star, x_I, cov = self._fixture()
        got = cross_moment_process_obs(x_star, x_I, cov, 0.25, SENSOR)
        expect = 0.8 * 0.8 * norm.pdf(0.0, scale=np.sqrt(1.25))
        assert got == pytest.approx(expect, rel=1e-12)

    def test_uninformative_sensor_zeroes_cross_moment(self):
        x_star, x_I, cov = self._fixture()
        s = ExceedanceSensorModel(0.0, 0.5, 0.5)
        assert cross_moment_process_obs(x_star, x_I, cov, 0.25, s) == 0.0

    def test_plugin_obs_obs_factorizes(self):
        x_star, x_I, cov = self._fixture()
        f_I = 0.4
        q = exceedance_prob(f_I, 0.25, SENSOR)
        got = cross_moment_obs_obs(x_star, x_I, cov, 0.25, SENSOR, f_I)
        assert got == pytest.approx(0.8 / 1.0 * f_I * q, rel=1e-12)

    def test_plugin_binary_binary_diagonal(self):
        _, x_I, cov = self._fixture()
        q = exceedance_prob(0.4, 0.25, SENSOR)
        got = cross_moment_binary_binary(x_I, x_I, cov, 0.25, SENSOR, 0.4, 0.4)
        assert got == pytest.approx(q)

    def test_plugin_binary_binary_product(self):
        x_J, x_I, cov = self._fixture()
        q_I = exceedance_prob(0.4, 0.25, SENSOR)
        q_J = exceedance_prob(-0.2, 0.25, SENSOR)
        got = cross_moment_binary_binary(x_I, x_J, cov, 0.25, SENSOR, 0.4, -0.2)
        assert got == pytest.approx(q_I * q_J)


class TestMarginalMoments:
    def test_report_prob_closed_form(self):
        x_I = pt(0.2, 0.3)
        s2 = 0.25 + float(KERNEL.matrix([x_I])[0, 0])
        expect = 0.1 + 0.8 * (1.0 - norm.cdf(SENSOR.T / np.sqrt(s2)))
        assert marginal_report_prob(x_I, KERNEL, 0.25, SENSOR) == pytest.approx(expect)

    def test_obs_obs_equals_process_obs_form(self):
        x_i, x_I = pt(0.1, 0.1), pt(0.5, 0.4)
        assert marginal_cross_moment_obs_obs(
            x_i, x_I, KERNEL, 0.25, SENSOR) == pytest.approx(
            cross_moment_process_obs(x_i, x_I, KERNEL, 0.25, SENSOR))

    def test_binary_binary_independent_limit(self):
        # far-apart sites: joint moment factorizes into marginal probabilities
        x_I, x_J = pt(0.0, 0.0), pt(50.0, 0.0)
        got = marginal_cross_moment_binary_binary(x_I, x_J, KERNEL, 0.25, SENSOR)
        p = marginal_report_prob(x_I, KERNEL, 0.25, SENSOR)
        q = marginal_report_prob(x_J, KERNEL, 0.25, SENSOR)
        assert got == pytest.approx(p * q, rel=1e-6)

    @pytest.mark.slow
    def test_binary_binary_against_simulation(self):
        x_I, x_J = pt(0.0, 0.0), pt(0.2, 0.1)
        sigma2 = 0.25
        expect = marginal_cross_moment_binary_binary(x_I, x_J, KERNEL,
                                                     sigma2, SENSOR)
        rng = np.random.default_rng(1)
        n = 400_000
        C = KERNEL.matrix(np.array([[0.0, 0.0, 0.0], [0.2, 0.1, 0.0]]))
        f = rng.multivariate_normal(np.zeros(2), C, size=n)
        z = f + np.sqrt(sigma2) * rng.standard_normal((n, 2))
        p = np.where(z >= SENSOR.T, 0.9, 0.1)
        y = (rng.random((n, 2)) < p).astype(float)
        mc = np.mean(y[:, 0] * y[:, 1])
        se = np.std(y[:, 0] * y[:, 1]) / np.sqrt(n)
        assert abs(mc - expect) < 4 * se


class TestMcOracle:
    def test_se_shrinks_with_samples(self):
        x_star, x_I = pt(0.0, 0.0), pt(0.2, 0.0)
        geom = {"x_star": x_star, "x_I": x_I}
        _, se1 = mc_moment_oracle("process_obs", geom, KERNEL, 0.25, SENSOR,
                                  n_samples=20_000, seed=3)
        _, se2 = mc_moment_oracle("process_obs", geom, KERNEL, 0.25, SENSOR,
                                  n_samples=40_000, seed=3)
        assert 1.3 <= se1 / se2 <= 1.6

    def test_matches_closed_form(self):
        x_star, x_I = pt(0.0, 0.0), pt(0.15, 0.1)
        geom = {"x_star": x_star, "x_I": x_I}
        est, se = mc_moment_oracle("process_obs", geom, KERNEL, 0.25, SENSOR,
                                   n_samples=200_000, seed=4)
        expect = cross_moment_process_obs(x_star, x_I, KERNEL, 0.25, SENSOR)
        assert abs(est - expect) < 4 * se

    def test_minimum_samples(self):
        with pytest.raises(ValueError):
            mc_moment_oracle("f_star_sq", {"x_star": pt(0, 0)}, KERNEL, 0.25,
                             SENSOR, n_samples=100)


class TestSolver:
    def test_kriging_reduction_with_no_binary(self):
        rng = np.random.default_rng(5)
        sites = np.column_stack([rng.random((6, 2)), np.zeros(6)])
        values = sample_gp(sites, KERNEL, 6)
        cont = [(pt(*s), float(v)) for s, v in zip(sites, values)]
        problem = FusionProblem(ObservationSet(cont, []), KERNEL, 0.04,
                                SENSOR, np.zeros(0))
        solver = FusionSolver(problem)
        targets = np.column_stack([rng.random((4, 2)), np.zeros(4)])
        krig = kriging_predict(KERNEL, 0.04, sites, values, targets)
        for i, tgt in enumerate(targets):
            est = solver.estimate(pt(*tgt))
            assert abs(est.f_hat - krig[i]) <= 1e-10 * max(abs(krig[i]), 1.0)

    def test_single_uninformative_report(self):
        s = ExceedanceSensorModel(0.0, 0.5, 0.5)
        problem = FusionProblem(
            ObservationSet([], [(pt(0.5, 0.5), 1)]), KERNEL, 0.25, s,
            np.zeros(1), moment_mode="marginal")
        solver = FusionSolver(problem)
        rho = solver.rho(pt(0.2, 0.2))
        assert np.allclose(rho, 0.0)
        est = solver.estimate(pt(0.2, 0.2))
        assert est.f_hat == pytest.approx(0.0)
        assert est.mse == pytest.approx(KERNEL.sill)

    def test_estimate_is_linear_form_in_observations(self):
        rng = np.random.default_rng(6)
        p1 = _problem(rng, mode="marginal")
        x = pt(0.4, 0.6)
        f1 = FusionSolver(p1).point_estimate(x)
        # reconstruct rho' Sigma^-1 Y by explicit linear algebra
        from fieldfuse.sblue import assemble_fusion
        rho, Sigma = assemble_fusion(p1, x)
        direct = float(rho @ np.linalg.solve(
            Sigma, p1.observations.stacked_values()))
        assert f1 == pytest.approx(direct, abs=1e-10)

    def test_mse_bounded_by_prior_variance(self):
        rng = np.random.default_rng(7)
        problem = _problem(rng, mode="marginal")
        solver = FusionSolver(problem)
        for _ in range(10):
            est = solver.estimate(pt(*rng.random(2)))
            assert 0.0 <= est.mse <= KERNEL.sill + 1e-12

    def test_marginal_sigma_positive_semidefinite(self):
        from fieldfuse.sblue import fusion_moment_matrix
        rng = np.random.default_rng(8)
        problem = _problem(rng, n=4, m=12, mode="marginal")
        S = fusion_moment_matrix(problem)
        assert np.allclose(S, S.T)
        assert np.linalg.eigvalsh(S).min() > -1e-10

    def test_no_observations_rejected(self):
        problem = FusionProblem(ObservationSet([], []), KERNEL, 0.25, SENSOR,
                                np.zeros(0))
        with pytest.raises(ValueError):
            FusionSolver(problem)

    def test_plugin_length_validated(self):
        with pytest.raises(ValueError):
            FusionProblem(ObservationSet([], [(pt(0, 0), 1)]), KERNEL, 0.25,
                          SENSOR, np.zeros(3))

    def test_unknown_moment_mode(self):
        with pytest.raises(ValueError):
            FusionProblem(ObservationSet([], [(pt(0, 0), 1)]), KERNEL, 0.25,
                          SENSOR, np.zeros(1), moment_mode="exact")

    def test_negative_mse_rejected_in_estimate_type(self):
        with pytest.raises(ValueError):
            FieldEstimate(at=pt(0, 0), f_hat=0.0, mse=-0.1)

    def test_one_shot_helper_matches_solver(self):
        rng = np.random.default_rng(9)
        problem = _problem(rng, mode="marginal")
        x = pt(0.3, 0.8)
        a = sblue_estimate(problem, x)
        b = FusionSolver(problem).estimate(x)
        assert a.f_hat == pytest.approx(b.f_hat) and a.mse == pytest.approx(b.mse)
