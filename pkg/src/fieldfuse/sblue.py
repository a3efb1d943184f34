"""Fusion of continuous readings and binary exceedance reports.

The estimator is linear in the stacked observation vector Y = [y', y_ht']':
f_hat(x*) = rho' Sigma^{-1} Y with rho = E[f* Y'] and Sigma = E[Y Y'].  The
cross moments involving binary reports have closed forms built from Gaussian
densities; a Monte Carlo oracle sampling the same generative conventions
validates every closed form.

Conventions: the field is zero-mean (detrended), the thresholded latent at a
report site is the noisy field value f + v with variance sigma^2 + c(x, x)
marginally, and the report-pair moments substitute a plug-in field estimate
for the exact conditional expectations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import owens_t
from scipy.stats import norm


class FusionAssemblyError(RuntimeError):
    """The assembled moment matrix is not positive semidefinite."""


class SingularMomentMatrix(RuntimeError):
    """Sigma remains ill-conditioned after diagonal regularization."""


@dataclass(frozen=True)
class ExceedanceSensorModel:
    """Threshold reporter: reports 1 with different rates above/below T."""

    T: float
    p_given_exceed: float = 0.7
    p_given_not: float = 0.1

    def __post_init__(self):
        for p in (self.p_given_exceed, self.p_given_not):
            if not 0.0 <= p <= 1.0:
                raise ValueError("report probabilities must lie in [0, 1]")

    @property
    def informative(self) -> bool:
        return self.p_given_exceed != self.p_given_not


@dataclass
class ObservationSet:
    """Continuous readings stacked ahead of binary reports, order preserved."""

    continuous: list  # (SpaceTimePoint, y)
    binary: list  # (SpaceTimePoint, 0 or 1)

    @property
    def n(self) -> int:
        return len(self.continuous)

    @property
    def m(self) -> int:
        return len(self.binary)

    def stacked_values(self) -> np.ndarray:
        return np.array(
            [y for _, y in self.continuous] + [float(y) for _, y in self.binary]
        )


@dataclass
class FusionProblem:
    observations: ObservationSet
    cov: object  # anything with .matrix(points_a, points_b=None)
    sigma2: float
    sensor: ExceedanceSensorModel
    plugin_field: np.ndarray  # field estimates at the binary sites
    moment_mode: str = "plug-in"  # "plug-in" or "marginal"

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.moment_mode not in ("plug-in", "marginal"):
            raise ValueError(f"unknown moment mode {self.moment_mode!r}")
        self.plugin_field = np.asarray(self.plugin_field, dtype=float)
        if self.moment_mode == "plug-in" and len(self.plugin_field) != self.observations.m:
            raise ValueError("need one plug-in field value per binary site")


@dataclass
class FieldEstimate:
    at: object
    f_hat: float
    mse: float

    def __post_init__(self):
        if self.mse < 0:
            raise ValueError(f"negative MSE {self.mse}")


def exceedance_prob(f_hat_I, sigma2_lat, sensor: ExceedanceSensorModel):
    """Report probability with the latent at N(f_hat_I, sigma2_lat)."""
    if sigma2_lat <= 0:
        raise ValueError("latent variance must be positive")
    below = norm.cdf(sensor.T, loc=f_hat_I, scale=np.sqrt(sigma2_lat))
    out = sensor.p_given_exceed * (1.0 - below) + sensor.p_given_not * below
    return float(out) if np.ndim(f_hat_I) == 0 else out


def _cov_scalar(cov, xa, xb):
    return float(cov.matrix([xa], [xb])[0, 0])


def cross_moment_process_obs(x_star, x_I, cov, sigma2, sensor, f_plugin_I=None) -> float:
    """E[f* y_I]: closed form from the truncated-Gaussian mean identity.

    The thresholded latent is the noisy field value, variance
    sigma2 + c(x_I, x_I); the plug-in argument is accepted for interface
    parity but the closed form does not need it.
    """
    c_II = _cov_scalar(cov, x_I, x_I)
    s2 = sigma2 + c_II
    if s2 <= 0:
        raise ValueError("sigma2 + c(x_I, x_I) must be positive")
    c_star_I = _cov_scalar(cov, x_star, x_I)
    dens = norm.pdf(sensor.T, loc=0.0, scale=np.sqrt(s2))
    return float(c_star_I * (sensor.p_given_exceed - sensor.p_given_not) * dens)


def cross_moment_obs_obs(x_i, x_I, cov, sigma2, sensor, f_plugin_I) -> float:
    """E[y_i y_I] with the plug-in field value substituted at the report site.

    Conditioning the field at x_I on its plug-in value makes the continuous
    reading and the report independent given that value, so the moment
    factorizes into the conditional mean times the report probability.
    """
    c_II = _cov_scalar(cov, x_I, x_I)
    if sigma2 + c_II <= 0:
        raise ValueError("sigma2 + c(x_I, x_I) must be positive")
    if c_II == 0:
        return 0.0
    c_iI = _cov_scalar(cov, x_i, x_I)
    q = exceedance_prob(f_plugin_I, sigma2, sensor)
    return float(c_iI / c_II * f_plugin_I * q)


def cross_moment_binary_binary(x_I, x_J, cov, sigma2, sensor,
                               f_plugin_I, f_plugin_J) -> float:
    """E[y_I y_J] with plug-ins; the diagonal uses Bernoulli idempotence."""
    if sigma2 + _cov_scalar(cov, x_I, x_I) <= 0:
        raise ValueError("sigma2 + c(x_I, x_I) must be positive")
    q_I = exceedance_prob(f_plugin_I, sigma2, sensor)
    if x_I == x_J and f_plugin_I == f_plugin_J:
        return float(q_I)
    q_J = exceedance_prob(f_plugin_J, sigma2, sensor)
    return float(q_I * q_J)


def _bvn_cdf(h, k, r):
    """P(Z1 <= h, Z2 <= k) for standard bivariate normals with correlation r.

    Owen's T identity; elementwise over broadcast arrays.  Valid for |r| < 1
    (inputs are clipped slightly inside).
    """
    h = np.where(np.abs(h) < 1e-12, 1e-12, np.asarray(h, dtype=float))
    k = np.where(np.abs(k) < 1e-12, 1e-12, np.asarray(k, dtype=float))
    r = np.clip(np.asarray(r, dtype=float), -1 + 1e-12, 1 - 1e-12)
    root = np.sqrt(1.0 - r * r)
    a_h = (k - r * h) / (h * root)
    a_k = (h - r * k) / (k * root)
    beta = np.where(h * k < 0, 0.5, 0.0)
    out = 0.5 * (norm.cdf(h) + norm.cdf(k)) - owens_t(h, a_h) - owens_t(k, a_k) - beta
    return np.clip(out, 0.0, 1.0)


def marginal_report_prob(x_I, cov, sigma2, sensor: ExceedanceSensorModel) -> float:
    """E[y_I] under the zero-mean marginal: latent variance sigma2 + c_II."""
    return exceedance_prob(0.0, sigma2 + _cov_scalar(cov, x_I, x_I), sensor)


def marginal_cross_moment_binary_binary(x_I, x_J, cov, sigma2, sensor) -> float:
    """E[y_I y_J] integrating the field out exactly.

    The reports are conditionally independent given the latents z = f + v, so
    the moment is a mixture of the joint exceedance probability (a bivariate
    normal orthant mass) and the marginal exceedance probabilities.
    """
    s_I = sigma2 + _cov_scalar(cov, x_I, x_I)
    s_J = sigma2 + _cov_scalar(cov, x_J, x_J)
    if s_I <= 0 or s_J <= 0:
        raise ValueError("sigma2 + c(x_I, x_I) must be positive")
    p0, d = sensor.p_given_not, sensor.p_given_exceed - sensor.p_given_not
    P_I = 1.0 - norm.cdf(sensor.T / np.sqrt(s_I))
    if x_I == x_J:
        return float(p0 + d * P_I)
    P_J = 1.0 - norm.cdf(sensor.T / np.sqrt(s_J))
    r = _cov_scalar(cov, x_I, x_J) / np.sqrt(s_I * s_J)
    h, k = sensor.T / np.sqrt(s_I), sensor.T / np.sqrt(s_J)
    P_IJ = 1.0 - norm.cdf(h) - norm.cdf(k) + _bvn_cdf(h, k, r)
    return float(p0 * p0 + p0 * d * (P_I + P_J) + d * d * P_IJ)


def marginal_cross_moment_obs_obs(x_i, x_I, cov, sigma2, sensor) -> float:
    """E[y_i y_I] integrating the field out exactly.

    Stein's lemma collapses the inner expectation to the same Gaussian
    density form as the process/report moment.
    """
    return cross_moment_process_obs(x_i, x_I, cov, sigma2, sensor)


def _report(rng, z, T, sensor, size):
    p = np.where(z >= T, sensor.p_given_exceed, sensor.p_given_not)
    return (rng.random(size) < p).astype(float)


def mc_moment_oracle(moment_kind, geometry, cov, sigma2, sensor,
                     n_samples=10_000_000, seed=0):
    """Monte Carlo estimate (mean, standard error) of a cross moment.

    Samples the exact generative convention matched by each closed form:
    marginal zero-mean Gaussians for the process/report moment, and the
    plug-in-conditioned model for moments between observations.

    moment_kind: 'process_obs', 'obs_obs', 'binary_binary', or 'f_star_sq'.
    """
    if n_samples < 10_000:
        raise ValueError("need n_samples >= 1e4")
    rng = np.random.default_rng(seed)
    T = sensor.T

    if moment_kind == "f_star_sq":
        c_ss = _cov_scalar(cov, geometry["x_star"], geometry["x_star"])
        prod = c_ss * rng.standard_normal(n_samples) ** 2
    elif moment_kind == "process_obs":
        x_star, x_I = geometry["x_star"], geometry["x_I"]
        c_ss = _cov_scalar(cov, x_star, x_star)
        c_II = _cov_scalar(cov, x_I, x_I)
        c_sI = _cov_scalar(cov, x_star, x_I)
        joint = np.array([[c_ss, c_sI], [c_sI, c_II + sigma2]])
        eig = np.linalg.eigvalsh(joint)
        if eig[0] < -1e-12 * max(eig[-1], 1.0):
            raise ValueError(f"joint covariance not PSD (min eigenvalue {eig[0]:.3e})")
        L = np.linalg.cholesky(joint + 1e-14 * np.eye(2) * max(eig[-1], 1.0))
        draws = rng.standard_normal((n_samples, 2)) @ L.T
        y_I = _report(rng, draws[:, 1], T, sensor, n_samples)
        prod = draws[:, 0] * y_I
    elif moment_kind == "obs_obs":
        x_i, x_I = geometry["x_i"], geometry["x_I"]
        f_hat = geometry["f_plugin_I"]
        c_ii = _cov_scalar(cov, x_i, x_i)
        c_II = _cov_scalar(cov, x_I, x_I)
        c_iI = _cov_scalar(cov, x_i, x_I)
        cond_var = c_ii - c_iI**2 / c_II
        if cond_var < -1e-12 * max(c_ii, 1.0):
            raise ValueError(f"conditional variance {cond_var:.3e} negative: not PSD")
        y_i = (
            c_iI / c_II * f_hat
            + np.sqrt(max(cond_var, 0.0)) * rng.standard_normal(n_samples)
            + np.sqrt(sigma2) * rng.standard_normal(n_samples)
        )
        z_I = f_hat + np.sqrt(sigma2) * rng.standard_normal(n_samples)
        prod = y_i * _report(rng, z_I, T, sensor, n_samples)
    elif moment_kind == "binary_binary":
        x_I, x_J = geometry["x_I"], geometry["x_J"]
        f_I, f_J = geometry["f_plugin_I"], geometry["f_plugin_J"]
        z_I = f_I + np.sqrt(sigma2) * rng.standard_normal(n_samples)
        y_I = _report(rng, z_I, T, sensor, n_samples)
        if x_I == x_J and f_I == f_J:
            prod = y_I  # idempotent diagonal
        else:
            z_J = f_J + np.sqrt(sigma2) * rng.standard_normal(n_samples)
            prod = y_I * _report(rng, z_J, T, sensor, n_samples)
    else:
        raise ValueError(f"unknown moment kind {moment_kind!r}")

    est = float(np.mean(prod))
    se = float(np.std(prod, ddof=1) / np.sqrt(n_samples))
    return est, se


def _binary_site_variances(problem: FusionProblem) -> np.ndarray:
    pts_b = [p for p, _ in problem.observations.binary]
    if not pts_b:
        return np.zeros(0)
    return np.diag(problem.cov.matrix(pts_b)).copy()


def fusion_cross_vector(problem: FusionProblem, x_star, c_II=None) -> np.ndarray:
    """rho = E[f* Y']: plain covariances for the continuous block, the
    process/report closed form for the binary block."""
    obs = problem.observations
    sensor = problem.sensor
    pts_c = [p for p, _ in obs.continuous]
    pts_b = [p for p, _ in obs.binary]
    rho = np.zeros(obs.n + obs.m)
    if obs.n:
        rho[: obs.n] = problem.cov.matrix([x_star], pts_c)[0]
    if obs.m:
        if c_II is None:
            c_II = _binary_site_variances(problem)
        c_star_b = problem.cov.matrix([x_star], pts_b)[0]
        dens = norm.pdf(sensor.T, loc=0.0, scale=np.sqrt(problem.sigma2 + c_II))
        rho[obs.n:] = c_star_b * (sensor.p_given_exceed - sensor.p_given_not) * dens
    return rho


def fusion_moment_matrix(problem: FusionProblem) -> np.ndarray:
    """Sigma = E[Y Y'] (independent of the prediction site).

    In "plug-in" mode the report moments substitute the plug-in field values
    for the inner expectations; this is cheap but can leave Sigma indefinite
    when the plug-ins are large relative to the field scale.  In "marginal"
    mode the field is integrated out exactly (Stein's lemma for the mixed
    block, bivariate normal orthant masses for the report block), which keeps
    Sigma a true second-moment matrix.
    """
    obs = problem.observations
    sigma2 = problem.sigma2
    cov = problem.cov
    sensor = problem.sensor
    pts_c = [p for p, _ in obs.continuous]
    pts_b = [p for p, _ in obs.binary]
    n, M = obs.n, obs.m
    f_hat = problem.plugin_field

    Sigma = np.zeros((n + M, n + M))
    if n:
        Sigma[:n, :n] = sigma2 * np.eye(n) + cov.matrix(pts_c)
    if M and problem.moment_mode == "plug-in":
        c_II = _binary_site_variances(problem)
        q = exceedance_prob(f_hat, sigma2, sensor)
        if n:
            C_cb = cov.matrix(pts_c, pts_b)
            scale = np.where(c_II > 0, f_hat * q / np.where(c_II > 0, c_II, 1.0), 0.0)
            Sigma[:n, n:] = C_cb * scale[None, :]
            Sigma[n:, :n] = Sigma[:n, n:].T
        Q = np.outer(q, q)
        np.fill_diagonal(Q, q)
        Sigma[n:, n:] = Q
    elif M:
        c_II = _binary_site_variances(problem)
        s_lat = sigma2 + c_II
        p0, d = sensor.p_given_not, sensor.p_given_exceed - sensor.p_given_not
        if n:
            dens = norm.pdf(sensor.T, loc=0.0, scale=np.sqrt(s_lat))
            Sigma[:n, n:] = cov.matrix(pts_c, pts_b) * (d * dens)[None, :]
            Sigma[n:, :n] = Sigma[:n, n:].T
        hk = sensor.T / np.sqrt(s_lat)
        P = 1.0 - norm.cdf(hk)
        r = cov.matrix(pts_b) / np.sqrt(np.outer(s_lat, s_lat))
        P_joint = 1.0 - norm.cdf(hk)[:, None] - norm.cdf(hk)[None, :] \
            + _bvn_cdf(hk[:, None], hk[None, :], r)
        Q = p0 * p0 + p0 * d * (P[:, None] + P[None, :]) + d * d * P_joint
        np.fill_diagonal(Q, p0 + d * P)
        Sigma[n:, n:] = 0.5 * (Q + Q.T)

    eig = np.linalg.eigvalsh(Sigma)
    scale = max(abs(eig[-1]), 1.0)
    if eig[0] < -1e-8 * scale:
        raise FusionAssemblyError(
            f"assembled Sigma has negative eigenvalue {eig[0]:.6e}; "
            "plug-in field values are inconsistent with the covariance model"
        )
    return Sigma


def assemble_fusion(problem: FusionProblem, x_star):
    """Build rho = E[f* Y'] and Sigma = E[Y Y'] for one prediction site."""
    c_II = _binary_site_variances(problem)
    rho = fusion_cross_vector(problem, x_star, c_II=c_II)
    Sigma = fusion_moment_matrix(problem)
    return rho, Sigma


class FusionSolver:
    """Shared factorization of Sigma for predictions at many sites.

    Sigma depends on x* only through rho, so one Cholesky factorization
    serves every prediction site (read-only after construction).
    """

    def __init__(self, problem: FusionProblem):
        self.problem = problem
        if problem.observations.n + problem.observations.m == 0:
            raise ValueError("no observations to fuse")
        self._c_II = _binary_site_variances(problem)
        Sigma = fusion_moment_matrix(problem)
        nm = Sigma.shape[0]
        try:
            self._chol = cho_factor(Sigma, lower=True)
        except np.linalg.LinAlgError:
            # marginally indefinite assembly: regularize once, then insist on
            # a usable condition number
            ridge = 1e-10 * np.trace(Sigma) / nm
            Sigma_reg = Sigma + ridge * np.eye(nm)
            eig = np.linalg.eigvalsh(Sigma_reg)
            if eig[0] <= 0 or eig[-1] / eig[0] > 1e12:
                raise SingularMomentMatrix(
                    f"Sigma condition number "
                    f"{eig[-1] / max(eig[0], 1e-300):.3e} exceeds 1e12"
                )
            self._chol = cho_factor(Sigma_reg, lower=True)
        self._Y = problem.observations.stacked_values()
        self._SinvY = cho_solve(self._chol, self._Y)

    def rho(self, x_star) -> np.ndarray:
        return fusion_cross_vector(self.problem, x_star, c_II=self._c_II)

    def point_estimate(self, x_star) -> float:
        """Linear point estimate rho' Sigma^{-1} Y without the MSE.

        With plug-in binary moments the quadratic form rho' Sigma^{-1} rho is
        not guaranteed to stay below c(x*, x*), so the MSE in ``estimate`` can
        fail its positivity check even though the point estimate itself is
        well defined.  Use this when only the estimate is needed.
        """
        return float(self.rho(x_star) @ self._SinvY)

    def estimate(self, x_star) -> FieldEstimate:
        rho = self.rho(x_star)
        c_ss = _cov_scalar(self.problem.cov, x_star, x_star)
        f_hat = float(rho @ self._SinvY)
        mse = c_ss - float(rho @ cho_solve(self._chol, rho))
        if mse < -1e-9 * max(c_ss, 1.0):
            raise FusionAssemblyError(f"MSE {mse:.6e} is negative beyond tolerance")
        return FieldEstimate(at=x_star, f_hat=f_hat, mse=max(mse, 0.0))


def sblue_estimate(problem: FusionProblem, x_star) -> FieldEstimate:
    """Point estimate and MSE at one site (fresh factorization)."""
    return FusionSolver(problem).estimate(x_star)
