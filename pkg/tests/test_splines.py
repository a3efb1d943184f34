"""B-spline bases and difference penalties."""

import numpy as np
import pytest

from fieldfuse import splines


class TestBasisMatrix:
    def test_partition_of_unity(self):
        x = np.linspace(0.0, 1.0, 201)
        B = splines.basis_matrix(x, 0.0, 1.0, 7)
        assert np.allclose(B.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_and_nonnegative(self):
        B = splines.basis_matrix(np.linspace(-2, 3, 50), -2.0, 3.0, 9)
        assert B.shape == (50, 9)
        assert np.all(B >= -1e-15)

    def test_endpoint_interpolation(self):
        B = splines.basis_matrix(np.array([0.0, 1.0]), 0.0, 1.0, 6)
        assert B[0, 0] == pytest.approx(1.0)
        assert B[1, -1] == pytest.approx(1.0)

    def test_minimum_basis_count(self):
        with pytest.raises(ValueError):
            splines.clamped_knots(0.0, 1.0, 3, degree=3)

    def test_integrals_sum_to_length(self):
        ints = splines.basis_integrals(0.0, 2.5, 8)
        assert ints.sum() == pytest.approx(2.5, rel=1e-10)
        # quadrature check of one column
        x = np.linspace(0.0, 2.5, 20001)
        B = splines.basis_matrix(x, 0.0, 2.5, 8)
        assert np.trapezoid(B[:, 3], x) == pytest.approx(ints[3], abs=1e-6)


class TestCyclicBasis:
    def test_periodicity(self):
        # values just inside both ends of the period agree in the limit
        left = splines.cyclic_basis_matrix(np.array([1e-9]), 1440.0, 8)
        right = splines.cyclic_basis_matrix(np.array([1440.0 - 1e-9]), 1440.0, 8)
        assert np.allclose(left, right, atol=1e-6)

    def test_partition_of_unity(self):
        x = np.linspace(0.0, 1440.0, 500, endpoint=False)
        B = splines.cyclic_basis_matrix(x, 1440.0, 10)
        assert np.allclose(B.sum(axis=1), 1.0, atol=1e-10)


class TestPenalties:
    def test_difference_penalty_rank(self):
        P = splines.difference_penalty(8, order=2)
        assert P.shape == (8, 8)
        assert np.linalg.matrix_rank(P) == 6
        assert np.allclose(P, P.T)

    def test_null_space_is_polynomial(self):
        P = splines.difference_penalty(9, order=2)
        line = np.arange(9.0)
        assert np.allclose(P @ np.ones(9), 0.0, atol=1e-12)
        assert np.allclose(P @ line, 0.0, atol=1e-12)

    def test_cyclic_penalty_annihilates_constant(self):
        P = splines.cyclic_difference_penalty(7, order=2)
        assert np.allclose(P @ np.ones(7), 0.0, atol=1e-12)
        assert np.allclose(P, P.T)

    def test_quadratic_form_nonnegative(self):
        rng = np.random.default_rng(3)
        P = splines.difference_penalty(10, order=2)
        for _ in range(20):
            b = rng.standard_normal(10)
            assert b @ P @ b >= -1e-12


class TestTensor:
    def test_tensor_basis_is_outer_product(self):
        rng = np.random.default_rng(0)
        B1 = rng.random((5, 3))
        B2 = rng.random((5, 4))
        T = splines.tensor_basis(B1, B2)
        assert T.shape == (5, 12)
        for i in range(5):
            assert np.allclose(T[i], np.outer(B1[i], B2[i]).ravel())

    def test_tensor_penalty_shape_and_symmetry(self):
        P1 = splines.difference_penalty(3)
        P2 = splines.difference_penalty(4)
        P = splines.tensor_penalty(P1, P2)
        assert P.shape == (12, 12)
        assert np.allclose(P, P.T)
        # constant surface lies in the null space of the additive penalty
        assert np.allclose(P @ np.ones(12), 0.0, atol=1e-12)
