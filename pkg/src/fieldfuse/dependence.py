"""Dependence analysis: ranks, empirical copula, tail dependence, and a
penalized B-spline copula density.

Tail dependence follows the percentile-averaged concordance estimator
lambda = 2 - log C(u, u) / log u evaluated near the (1, 1) corner; the lower
tail reuses the same estimator on the survival-reflected pseudo-sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

from fieldfuse import splines

UPPER_PERCENTILES = tuple(range(80, 100))
LOWER_PERCENTILES = tuple(range(1, 21))


class CopulaFitError(RuntimeError):
    """Penalized likelihood fit failed to converge; carries the trace."""

    def __init__(self, message, coefficients=None, trace=None):
        super().__init__(message)
        self.coefficients = coefficients
        self.trace = trace


@dataclass(frozen=True)
class PseudoSample:
    """Rank-transformed bivariate sample on the unit square, values in (0, 1]."""

    u: np.ndarray
    n: int

    def reflected(self) -> "PseudoSample":
        """Survival reflection: rank R becomes n + 1 - R in each margin."""
        return PseudoSample(u=(self.n + 1) / self.n - self.u, n=self.n)


@dataclass
class TailDependenceEstimate:
    side: str
    per_percentile: dict
    mean_lambda: float
    zero_copula_percentiles: list = field(default_factory=list)


@dataclass
class CopulaDensityEstimate:
    """Nonnegative B-spline expansion of a copula density on [0, 1]^2."""

    coefficients: np.ndarray
    n_basis: tuple
    degree: int
    penalty: float

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if np.any(self.coefficients < 0):
            raise ValueError("coefficients must be nonnegative")
        integral = float(self.coefficients @ _tensor_integrals(self.n_basis, self.degree))
        if abs(integral - 1.0) > 1e-3:
            raise ValueError(f"density integrates to {integral:.6f}, not 1")


def pseudo_observations(samples) -> PseudoSample:
    """Transform an (n, 2) sample to average ranks divided by n."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError("samples must be an (n, 2) array")
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    u = np.column_stack([rankdata(x[:, j], method="average") for j in range(2)]) / n
    return PseudoSample(u=u, n=n)


def empirical_copula(ps: PseudoSample, u1: float, u2: float) -> float:
    """(1/n) * #{i : u_i1 <= u1 and u_i2 <= u2}."""
    return float(np.mean((ps.u[:, 0] <= u1) & (ps.u[:, 1] <= u2)))


def _lambda_at(ps: PseudoSample, u: float):
    c = empirical_copula(ps, u, u)
    if c == 0.0:
        return 0.0, True  # log-ratio limit
    lam = 2.0 - min(2.0, np.log(c) / np.log(u))
    return float(lam), False


def tail_dependence(ps: PseudoSample, side: str) -> TailDependenceEstimate:
    """Percentile-averaged tail dependence coefficient.

    The upper estimator evaluates the empirical copula diagonal at the 80th
    through 99th percentile points; the lower side applies the identical
    estimator to the survival-reflected sample at the 1st through 20th
    percentiles.  Each lambda lies in [0, 1].
    """
    if ps.n < 100:
        raise ValueError("percentile sweep needs n >= 100")
    if side not in ("upper", "lower"):
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    per, flagged = {}, []
    if side == "upper":
        for p in UPPER_PERCENTILES:
            lam, zero = _lambda_at(ps, p / 100.0)
            per[p] = lam
            if zero:
                flagged.append(p)
    else:
        refl = ps.reflected()
        for p in LOWER_PERCENTILES:
            lam, zero = _lambda_at(refl, 1.0 - p / 100.0)
            per[p] = lam
            if zero:
                flagged.append(p)
    return TailDependenceEstimate(
        side=side,
        per_percentile=per,
        mean_lambda=float(np.mean(list(per.values()))),
        zero_copula_percentiles=flagged,
    )


def pearson_correlation(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("x and y must be equal-length 1-D arrays with n >= 2")
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        raise ValueError("zero variance input")
    return float(np.corrcoef(x, y)[0, 1])


def _tensor_design(u: np.ndarray, n_basis, degree):
    B1 = splines.basis_matrix(u[:, 0], 0.0, 1.0, n_basis[0], degree)
    B2 = splines.basis_matrix(u[:, 1], 0.0, 1.0, n_basis[1], degree)
    return splines.tensor_basis(B1, B2)


def _tensor_integrals(n_basis, degree):
    i1 = splines.basis_integrals(0.0, 1.0, n_basis[0], degree)
    i2 = splines.basis_integrals(0.0, 1.0, n_basis[1], degree)
    return np.kron(i1, i2)


def fit_spline_copula(ps: PseudoSample, n_basis=(8, 8), degree=3, penalty=1.0,
                      max_iterations=500) -> CopulaDensityEstimate:
    """Penalized maximum-likelihood B-spline copula density.

    Maximizes sum_i log c(u_i) - penalty * b' P b over nonnegative
    coefficients with unit integral, where P is the additive second-difference
    tensor penalty.  The constraints are enforced by the parametrization
    b_k = exp(theta_k) / sum_j exp(theta_j) I_j with I_j the basis integrals,
    so every iterate is a valid density.
    """
    K = n_basis[0] * n_basis[1]
    if ps.n < 10 * K:
        raise ValueError(f"need n >= 10 K = {10 * K}, got {ps.n}")
    Phi = _tensor_design(ps.u, n_basis, degree)
    I = _tensor_integrals(n_basis, degree)
    P = splines.tensor_penalty(
        splines.difference_penalty(n_basis[0]), splines.difference_penalty(n_basis[1])
    )
    n = ps.n

    def coeffs(theta):
        e = np.exp(theta - theta.max())
        return e / (e @ I)

    def objective(theta):
        b = coeffs(theta)
        c = Phi @ b
        Pb = P @ b
        f = -np.sum(np.log(c)) + penalty * (b @ Pb)
        S = Phi.T @ (1.0 / c)
        g_ll = b * (S - n * I)
        g_pen = 2.0 * b * (Pb - I * (b @ Pb))
        return f, -(g_ll) + penalty * g_pen

    trace = []

    def record(theta):
        trace.append(-objective(theta)[0])

    theta0 = np.zeros(K)
    res = minimize(
        objective, theta0, jac=True, method="L-BFGS-B", callback=record,
        options={"maxiter": max_iterations, "ftol": 1e-12, "gtol": 1e-9},
    )
    if not res.success and res.status != 1:  # status 1 = maxiter
        raise CopulaFitError(res.message, coefficients=coeffs(res.x), trace=trace)
    if res.status == 1:
        raise CopulaFitError(
            f"no convergence after {max_iterations} iterations",
            coefficients=coeffs(res.x), trace=trace,
        )
    est = CopulaDensityEstimate(
        coefficients=coeffs(res.x), n_basis=tuple(n_basis), degree=degree, penalty=penalty
    )
    est.objective_trace = trace
    return est


def copula_density_eval(est: CopulaDensityEstimate, u) -> np.ndarray | float:
    """Evaluate the fitted density at one point or an (m, 2) array of points."""
    pts = np.atleast_2d(np.asarray(u, dtype=float))
    if pts.shape[1] != 2 or np.any(pts < 0) or np.any(pts > 1):
        raise ValueError("points must lie in the unit square")
    vals = _tensor_design(pts, est.n_basis, est.degree) @ est.coefficients
    return float(vals[0]) if np.ndim(u) == 1 else vals
