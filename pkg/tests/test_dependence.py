"""Rank transforms, tail dependence, and spline copula density."""

import numpy as np
import pytest
from scipy import stats

from fieldfuse.dependence import (
    CopulaDensityEstimate,
    PseudoSample,
    copula_density_eval,
    empirical_copula,
    fit_spline_copula,
    pearson_correlation,
    pseudo_observations,
    tail_dependence,
)


def _clayton_sample(theta, n, rng):
    """Conditional-distribution sampler for the bivariate Clayton copula."""
    u = rng.random(n)
    v = rng.random(n)
    w = (u ** (-theta) * (v ** (-theta / (1.0 + theta)) - 1.0) + 1.0) ** (-1.0 / theta)
    return np.column_stack([u, w])


class TestPseudoObservations:
    def test_small_fixture(self):
        samples = np.array([[3.0, 1.0], [1.0, 3.0], [2.0, 2.0]])
        ps = pseudo_observations(samples)
        assert np.allclose(ps.u[:, 0], np.array([3, 1, 2]) / 3)
        assert np.allclose(ps.u[:, 1], np.array([1, 3, 2]) / 3)
        assert ps.n == 3

    def test_ties_average_ranks(self):
        samples = np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        ps = pseudo_observations(samples)
        # the two tied values share the average rank 1.5
        assert np.allclose(np.sort(ps.u[:, 0])[:2], 1.5 / 4)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(0)
        ps = pseudo_observations(rng.standard_normal((200, 2)))
        assert np.all(ps.u > 0.0) and np.all(ps.u <= 1.0)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            pseudo_observations(np.zeros((5, 3)))

    def test_reflected_flips_both_margins(self):
        rng = np.random.default_rng(1)
        ps = pseudo_observations(rng.standard_normal((50, 2)))
        r = ps.reflected()
        assert np.allclose(np.sort(r.u[:, 0]), np.sort(1.0 - ps.u[:, 0] + 1.0 / ps.n))


class TestEmpiricalCopula:
    def test_frechet_bounds_within_discretization(self):
        rng = np.random.default_rng(2)
        ps = pseudo_observations(rng.standard_normal((500, 2)))
        n = ps.n
        for u1, u2 in [(0.2, 0.7), (0.5, 0.5), (0.9, 0.3)]:
            c = empirical_copula(ps, u1, u2)
            assert c >= max(u1 + u2 - 1.0, 0.0) - 1.0 / n
            assert c <= min(u1, u2) + 1.0 / n

    def test_anticomonotone_center(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        ps = pseudo_observations(np.column_stack([x, -x]))
        assert empirical_copula(ps, 0.5, 0.5) == 0.0

    def test_full_mass_at_corner(self):
        rng = np.random.default_rng(3)
        ps = pseudo_observations(rng.standard_normal((100, 2)))
        assert empirical_copula(ps, 1.0, 1.0) == 1.0


class TestPearson:
    def test_small_fixture(self):
        x = [1.0, 2.0, 3.0]
        y = [2.0, 1.0, 3.0]
        assert pearson_correlation(x, y) == pytest.approx(0.5)

    def test_perfect_linear(self):
        x = np.arange(10.0)
        assert pearson_correlation(x, 3.0 * x + 1.0) == pytest.approx(1.0)
        assert pearson_correlation(x, -x) == pytest.approx(-1.0)


class TestTailDependence:
    def test_minimum_sample_size(self):
        rng = np.random.default_rng(4)
        ps = pseudo_observations(rng.standard_normal((99, 2)))
        with pytest.raises(ValueError):
            tail_dependence(ps, "upper")

    def test_comonotone_upper(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(2000)
        ps = pseudo_observations(np.column_stack([x, np.exp(x)]))
        est = tail_dependence(ps, "upper")
        assert est.mean_lambda >= 0.95

    def test_independent_both_sides_small(self):
        rng = np.random.default_rng(6)
        ps = pseudo_observations(rng.standard_normal((5000, 2)))
        assert tail_dependence(ps, "upper").mean_lambda <= 0.1
        assert tail_dependence(ps, "lower").mean_lambda <= 0.1

    def test_clayton_lower_tail(self):
        # theta = 2: lambda_L = 2^(-1/theta) = 0.7071
        rng = np.random.default_rng(7)
        ps = pseudo_observations(_clayton_sample(2.0, 50000, rng))
        est = tail_dependence(ps, "lower")
        assert est.mean_lambda == pytest.approx(2.0 ** -0.5, abs=0.05)

    def test_clayton_upper_tail_near_zero(self):
        rng = np.random.default_rng(8)
        ps = pseudo_observations(_clayton_sample(2.0, 50000, rng))
        assert tail_dependence(ps, "upper").mean_lambda < 0.35

    def test_invalid_side(self):
        rng = np.random.default_rng(9)
        ps = pseudo_observations(rng.standard_normal((200, 2)))
        with pytest.raises(ValueError):
            tail_dependence(ps, "sideways")


@pytest.mark.slow
class TestSplineCopula:
    def test_minimum_sample_size(self):
        rng = np.random.default_rng(10)
        ps = pseudo_observations(rng.standard_normal((500, 2)))
        with pytest.raises(ValueError):
            fit_spline_copula(ps)

    def test_independent_density_near_one(self):
        rng = np.random.default_rng(11)
        ps = pseudo_observations(rng.standard_normal((12000, 2)))
        est = fit_spline_copula(ps, penalty=100.0)
        grid = np.linspace(0.05, 0.95, 10)
        pts = np.array([(a, b) for a in grid for b in grid])
        dens = copula_density_eval(est, pts)
        assert np.max(np.abs(dens - 1.0)) <= 0.1

    def test_comonotone_diagonal_concentration(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(12000)
        ps = pseudo_observations(np.column_stack([x, x + 1.0]))
        est = fit_spline_copula(ps)
        grid = np.linspace(0.1, 0.9, 9)
        on_diag = copula_density_eval(est, np.column_stack([grid, grid]))
        off = np.array([(a, b) for a in grid for b in grid
                        if abs(a - b) > 0.3])
        off_diag = copula_density_eval(est, off)
        assert np.mean(on_diag) >= 5.0 * np.mean(off_diag)

    def test_gaussian_copula_orientation(self):
        rng = np.random.default_rng(13)
        cov = np.array([[1.0, 0.8], [0.8, 1.0]])
        z = rng.multivariate_normal(np.zeros(2), cov, size=15000)
        ps = pseudo_observations(stats.norm.cdf(z))
        est = fit_spline_copula(ps)
        near = copula_density_eval(est, [0.1, 0.1])
        far = copula_density_eval(est, [0.1, 0.9])
        assert near > far

    def test_density_nonnegative_and_integrates_to_one(self):
        rng = np.random.default_rng(14)
        ps = pseudo_observations(rng.standard_normal((11000, 2)))
        est = fit_spline_copula(ps)
        assert np.all(est.coefficients >= 0.0)
        g = np.linspace(0.0, 1.0, 101)
        pts = np.array([(a, b) for a in g for b in g])
        dens = copula_density_eval(est, pts).reshape(101, 101)
        integral = np.trapezoid(np.trapezoid(dens, g, axis=1), g)
        assert integral == pytest.approx(1.0, abs=0.02)
