"""Shared penalized B-spline machinery.

Used by the copula density estimator, the additive logistic model, and
anywhere else a smooth univariate or tensor-product term is needed.  All
bases are built on uniform knots; penalties are squared finite differences
of adjacent coefficients.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline


def clamped_knots(lo: float, hi: float, n_basis: int, degree: int = 3) -> np.ndarray:
    """Uniform clamped knot vector yielding exactly `n_basis` basis functions."""
    if n_basis < degree + 1:
        raise ValueError(f"need n_basis >= degree + 1, got {n_basis} < {degree + 1}")
    n_interior = n_basis - degree - 1
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])


def basis_matrix(x, lo, hi, n_basis, degree=3) -> np.ndarray:
    """(len(x), n_basis) matrix of clamped B-spline values on [lo, hi].

    Points must lie inside [lo, hi]; the right endpoint is included.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"points outside spline support [{lo}, {hi}]")
    t = clamped_knots(lo, hi, n_basis, degree)
    # nudge the right endpoint inside the half-open support of the last span
    xx = np.where(x == hi, np.nextafter(hi, lo), x)
    B = BSpline.design_matrix(xx, t, degree).toarray()
    at_hi = x == hi
    if np.any(at_hi):
        B[at_hi] = 0.0
        B[at_hi, -1] = 1.0
    return B


def basis_integrals(lo, hi, n_basis, degree=3) -> np.ndarray:
    """Integrals of each clamped basis function over [lo, hi]."""
    t = clamped_knots(lo, hi, n_basis, degree)
    k = np.arange(n_basis)
    return (t[k + degree + 1] - t[k]) / (degree + 1)


def cyclic_basis_matrix(x, period, n_basis, degree=3) -> np.ndarray:
    """Periodic B-spline basis on [0, period) with `n_basis` free columns.

    Built on uniform unclamped knots; the trailing `degree` columns wrap onto
    the leading ones so the fitted curve and its derivatives close over the
    period.
    """
    if n_basis < degree + 1:
        raise ValueError(f"need n_basis >= degree + 1, got {n_basis}")
    x = np.mod(np.asarray(x, dtype=float), period)
    h = period / n_basis
    t = h * np.arange(-degree, n_basis + degree + 1)
    B = BSpline.design_matrix(x, t, degree).toarray()  # n_basis + degree columns
    B[:, :degree] += B[:, n_basis:]
    return B[:, :n_basis]


def difference_penalty(n_basis: int, order: int = 2) -> np.ndarray:
    """D'D for the `order`-th difference matrix; rank n_basis - order."""
    D = np.diff(np.eye(n_basis), n=order, axis=0)
    return D.T @ D


def cyclic_difference_penalty(n_basis: int, order: int = 2) -> np.ndarray:
    """Difference penalty with wrap-around, for periodic smooths."""
    rows = []
    base = np.diff(np.eye(order + 1), n=order, axis=0)[0]  # difference stencil
    for i in range(n_basis):
        row = np.zeros(n_basis)
        for j, c in enumerate(base):
            row[(i + j) % n_basis] += c
        rows.append(row)
    D = np.asarray(rows)
    return D.T @ D


def tensor_basis(B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product: tensor-product basis over two margins."""
    n = B1.shape[0]
    if B2.shape[0] != n:
        raise ValueError("margins evaluated at different numbers of points")
    return (B1[:, :, None] * B2[:, None, :]).reshape(n, -1)


def tensor_penalty(P1: np.ndarray, P2: np.ndarray) -> np.ndarray:
    """Additive roughness penalty for a tensor-product basis."""
    k1, k2 = P1.shape[0], P2.shape[0]
    return np.kron(P1, np.eye(k2)) + np.kron(np.eye(k1), P2)
