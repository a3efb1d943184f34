"""EM estimation of the low-rank covariance coefficients and noise variance.

The observation model treats each residual as y_i = (b . w_i) G_i + v_i with
a scalar standard-normal latent G_i and white noise v_i, so the marginal
variance at a point is (b . w_i)^2 + sigma^2.  The E-step computes the latent
posterior moments; the M-step solves an augmented least-squares system.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from fieldfuse.covariance import AnchorLayout, BasisCoefficients, basis_matrix


class RankDeficientBasisError(ValueError):
    """Augmented regressor matrix lost rank; use fewer anchors."""


@dataclass
class EMConfig:
    max_iterations: int = 500
    tolerance: float = 1e-6  # max relative change across (b, sigma2)
    init_sigma2: float | None = None  # default: var(y) / 2
    init_b: np.ndarray | str = "data-scaled random"
    seed: int = 0

    def __post_init__(self):
        if not (self.tolerance > 0):
            raise ValueError("tolerance must be positive")
        if np.isfinite(self.tolerance) and self.tolerance >= 1:
            raise ValueError("tolerance must be < 1 (or inf for a single sweep)")


@dataclass
class EMResult:
    coeffs: BasisCoefficients
    loglik_trace: list
    iterations: int
    converged: bool


def e_step(y_i, w_i, b, sigma2):
    """Posterior mean and variance of the scalar latent for one observation."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    bw = float(np.dot(b, w_i))
    v = 1.0 / (1.0 + bw * bw / sigma2)
    m = v / sigma2 * y_i * bw
    return m, v


def _e_step_vec(y, bw, sigma2):
    v = 1.0 / (1.0 + bw * bw / sigma2)
    m = v / sigma2 * y * bw
    return m, v


def m_step(y, w, m, v, sigma2_floor=0.0, check_rank=False):
    """Augmented least squares update of (b, sigma2).

    Solves W~' W~ b = W~' E~ with W~ stacking rows m_i w_i and sqrt(v_i) w_i
    and E~ = [y', 0']'; sigma2 is the mean squared augmented residual.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    m = np.asarray(m, dtype=float)
    s = np.sqrt(np.asarray(v, dtype=float))
    n, q = w.shape

    W_top = m[:, None] * w
    W_bot = s[:, None] * w
    G = W_top.T @ W_top + W_bot.T @ W_bot
    rhs = W_top.T @ y
    if check_rank:
        rank = np.linalg.matrix_rank(np.vstack([W_top, W_bot]))
        if rank < q:
            raise RankDeficientBasisError(
                f"augmented regressor rank {rank} < {q} coefficients; use fewer anchors"
            )
    try:
        b = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        b = np.linalg.lstsq(np.vstack([W_top, W_bot]), np.concatenate([y, np.zeros(n)]),
                            rcond=None)[0]
    resid_top = y - W_top @ b
    resid_bot = W_bot @ b
    sigma2 = (resid_top @ resid_top + resid_bot @ resid_bot) / n
    return b, max(float(sigma2), sigma2_floor)


def marginal_loglik(y, bw, sigma2):
    """Per-observation Gaussian log-likelihood with variance (b.w_i)^2 + sigma2."""
    var = bw * bw + sigma2
    return float(-0.5 * np.sum(np.log(2 * np.pi * var) + y * y / var))


def fit_em(points, residuals, layout: AnchorLayout, cfg: EMConfig = None) -> EMResult:
    """Alternate E and M steps until the parameters stop moving.

    Non-convergence within the iteration budget is reported through
    ``converged=False`` rather than raised.
    """
    cfg = cfg or EMConfig()
    y = np.asarray(residuals, dtype=float)
    W = basis_matrix(points, layout)
    n, q = W.shape
    if n <= q:
        warnings.warn(f"n = {n} observations for {q} coefficients; fit may be unstable")

    var_y = float(np.var(y))
    if var_y == 0.0:
        var_y = 1.0
    sigma2 = cfg.init_sigma2 if cfg.init_sigma2 is not None else 0.5 * var_y
    floor = 1e-10 * var_y

    if isinstance(cfg.init_b, str):
        rng = np.random.default_rng(cfg.seed)
        b = rng.standard_normal(q)
        scale = float(np.var(W @ b))
        b *= np.sqrt(0.5 * var_y / scale) if scale > 0 else 1.0
    else:
        b = np.asarray(cfg.init_b, dtype=float).copy()
        if len(b) != q:
            raise ValueError(f"init_b length {len(b)} != basis size {q}")

    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        bw = W @ b
        trace.append(marginal_loglik(y, bw, sigma2))
        m, v = _e_step_vec(y, bw, sigma2)
        b_new, sigma2_new = m_step(y, W, m, v, sigma2_floor=floor, check_rank=(it == 1))
        # floor the denominator at the data scale: coefficients near zero
        # are judged by absolute movement, not relative
        denom = np.maximum(np.abs(np.concatenate([b, [sigma2]])),
                           np.sqrt(var_y))
        delta = np.abs(np.concatenate([b_new - b, [sigma2_new - sigma2]])) / denom
        b, sigma2 = b_new, sigma2_new
        if np.max(delta) < cfg.tolerance:
            converged = True
            break
    trace.append(marginal_loglik(y, W @ b, sigma2))

    return EMResult(
        coeffs=BasisCoefficients(b=b, sigma2=max(sigma2, floor)),
        loglik_trace=trace,
        iterations=it,
        converged=converged,
    )


def plug_in_field(coeffs: BasisCoefficients, layout: AnchorLayout, x) -> float:
    """Rough latent-field estimate b . w(x) used inside the fusion moments."""
    w = basis_matrix([x], layout)[0]
    return float(np.dot(coeffs.b, w))


def plug_in_field_many(coeffs: BasisCoefficients, layout: AnchorLayout, points) -> np.ndarray:
    return basis_matrix(points, layout) @ coeffs.b
