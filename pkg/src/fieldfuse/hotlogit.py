"""Additive logistic regression for report probabilities.

logit(p) = alpha + x'beta + s(day) + s(time-of-day) + s(lon, lat), with each
smooth a penalized cubic B-spline (the time-of-day smooth is cyclic over 1440
minutes and the spatial smooth a tensor product).  Fitting is penalized
iteratively reweighted least squares with step halving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from fieldfuse import splines

MINUTES_PER_DAY = 1440.0


class SeparationError(ValueError):
    """Responses are perfectly separable (or all one class)."""


class IRLSDivergenceError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class SmoothSpec:
    n_basis: int
    penalty_order: int = 2

    def __post_init__(self):
        if self.n_basis < 4:
            raise ValueError("basis size must be at least 4")


@dataclass
class AdditiveLogisticSpec:
    linear_covariates: list = field(default_factory=list)
    day_smooth: SmoothSpec | None = None
    time_smooth: SmoothSpec | None = None
    spatial_smooth: tuple | None = None  # (n_basis_lon, n_basis_lat)
    penalty_weights: dict = field(default_factory=dict)  # term name -> weight

    def __post_init__(self):
        if self.spatial_smooth is not None and min(self.spatial_smooth) < 4:
            raise ValueError("spatial basis sizes must be at least 4")
        for term, w in self.penalty_weights.items():
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"penalty weight for {term!r} must be finite and >= 0")

    def weight(self, term: str) -> float:
        return float(self.penalty_weights.get(term, 1.0))


@dataclass
class DesignMatrices:
    """Stacked design with per-term penalty blocks and prediction metadata."""

    X: np.ndarray
    y: np.ndarray
    slices: dict  # term -> slice into columns
    penalties: list  # (term, slice, penalty matrix, weight)
    spec: AdditiveLogisticSpec
    ranges: dict  # term -> support bounds used at prediction time
    centers: dict  # term -> column means subtracted from the smooth block

    def penalty_matrix(self) -> np.ndarray:
        P = np.zeros((self.X.shape[1], self.X.shape[1]))
        for _, sl, Pk, w in self.penalties:
            P[sl, sl] += w * Pk
        return P


@dataclass
class LogisticFit:
    alpha: float
    beta: np.ndarray
    smooth_coefficients: dict
    se: np.ndarray  # for [alpha, beta]
    z: np.ndarray
    deviance: float
    converged: bool
    design: DesignMatrices
    coef: np.ndarray  # full coefficient vector


def _smooth_blocks(points, spec: AdditiveLogisticSpec):
    """Basis blocks and penalties for the requested smooth terms."""
    t = np.array([p.t for p in points])
    lon = np.array([p.lon for p in points])
    lat = np.array([p.lat for p in points])
    blocks = []

    if spec.day_smooth is not None:
        day = np.floor(t / MINUTES_PER_DAY)
        lo, hi = day.min(), day.max()
        if lo == hi:
            raise ValueError("day smooth needs more than one day of data")
        B = splines.basis_matrix(day, lo, hi, spec.day_smooth.n_basis)
        P = splines.difference_penalty(spec.day_smooth.n_basis, spec.day_smooth.penalty_order)
        blocks.append(("day", B, P, ("day", lo, hi)))

    if spec.time_smooth is not None:
        tod = np.mod(t, MINUTES_PER_DAY)
        B = splines.cyclic_basis_matrix(tod, MINUTES_PER_DAY, spec.time_smooth.n_basis)
        P = splines.cyclic_difference_penalty(spec.time_smooth.n_basis,
                                              spec.time_smooth.penalty_order)
        blocks.append(("time", B, P, ("time", 0.0, MINUTES_PER_DAY)))

    if spec.spatial_smooth is not None:
        nx, ny = spec.spatial_smooth
        lon_lo, lon_hi = lon.min(), lon.max()
        lat_lo, lat_hi = lat.min(), lat.max()
        Bx = splines.basis_matrix(lon, lon_lo, lon_hi, nx)
        By = splines.basis_matrix(lat, lat_lo, lat_hi, ny)
        B = splines.tensor_basis(Bx, By)
        P = splines.tensor_penalty(splines.difference_penalty(nx),
                                   splines.difference_penalty(ny))
        blocks.append(("spatial", B, P, ("spatial", (lon_lo, lon_hi), (lat_lo, lat_hi))))

    return blocks


def build_design(tweets, spec: AdditiveLogisticSpec) -> DesignMatrices:
    """Assemble [intercept | linear | smooths] columns and penalty blocks.

    `tweets` is a sequence of (SpaceTimePoint, covariate row, hot in {0, 1}).
    Smooth blocks are column-centered so each fitted smooth averages to zero
    over the data, keeping it identifiable against the intercept; the
    centering vector is stored for prediction.  Centering leaves one exactly
    flat direction per smooth (constant shifts are both data-null and
    penalty-null), which the fitter resolves with minimum-norm solves.
    """
    points = [t[0] for t in tweets]
    covs = np.asarray([np.atleast_1d(t[1]) for t in tweets], dtype=float)
    y = np.asarray([t[2] for t in tweets], dtype=float)
    if not ((y == 0) | (y == 1)).all():
        raise ValueError("responses must be binary")
    if y.min() == y.max():
        raise SeparationError("responses are all 0 or all 1")
    n_lin = len(spec.linear_covariates)
    if covs.shape[1] != n_lin:
        raise ValueError(f"covariate rows have {covs.shape[1]} entries, "
                         f"spec names {n_lin}")

    cols = [np.ones((len(y), 1))]
    slices = {"intercept": slice(0, 1)}
    start = 1
    if n_lin:
        cols.append(covs)
        slices["linear"] = slice(start, start + n_lin)
        start += n_lin

    penalties, ranges, centers = [], {}, {}
    for name, B, P, rng_info in _smooth_blocks(points, spec):
        center = B.mean(axis=0)
        cols.append(B - center)
        sl = slice(start, start + B.shape[1])
        slices[name] = sl
        penalties.append((name, sl, P, spec.weight(name)))
        ranges[name] = rng_info
        centers[name] = center
        start += B.shape[1]

    return DesignMatrices(
        X=np.hstack(cols), y=y, slices=slices, penalties=penalties,
        spec=spec, ranges=ranges, centers=centers,
    )


def _bernoulli_deviance(y, mu):
    eps = 1e-12
    mu = np.clip(mu, eps, 1 - eps)
    return float(-2.0 * np.sum(y * np.log(mu) + (1 - y) * np.log(1 - mu)))


def fit_penalized_logistic(design: DesignMatrices, max_iterations=200,
                           tol=1e-8) -> LogisticFit:
    """Penalized IRLS with step halving.

    Maximizes the Bernoulli log-likelihood minus half the weighted quadratic
    roughness penalties; converged when the largest coefficient change drops
    below `tol`.  Standard errors come from the inverse penalized Fisher
    information diagonal.
    """
    X, y = design.X, design.y
    n, p = X.shape
    P = design.penalty_matrix()

    coef = np.zeros(p)
    coef[0] = np.log(y.mean() / (1 - y.mean()))
    eta = X @ coef
    mu = expit(eta)
    obj = _bernoulli_deviance(y, mu) + float(coef @ P @ coef)
    trace = [obj]
    increases = 0
    converged = False

    for _ in range(max_iterations):
        w = mu * (1 - mu)
        w = np.maximum(w, 1e-10)
        z = eta + (y - mu) / w
        XtW = X.T * w
        H = XtW @ X + P
        new_coef, _, rank, _ = np.linalg.lstsq(H, XtW @ z, rcond=None)
        if rank == 0:
            raise IRLSDivergenceError("penalized Fisher information vanished", trace)

        step = new_coef - coef
        accepted = False
        for _ in range(30):
            cand = coef + step
            eta_c = X @ cand
            mu_c = expit(eta_c)
            obj_c = _bernoulli_deviance(y, mu_c) + float(cand @ P @ cand)
            if obj_c <= obj + 1e-12 * max(1.0, abs(obj)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # a rejected microscopic step means we are at the optimum up to
            # floating point noise
            if np.max(np.abs(step)) < np.sqrt(tol):
                converged = True
                break
            increases += 1
            if increases >= 5:
                raise IRLSDivergenceError(
                    "objective increased on 5 consecutive steps", trace)
            continue
        increases = 0
        delta = np.max(np.abs(step))
        coef, eta, mu, obj = cand, eta_c, mu_c, obj_c
        trace.append(obj)
        dev = _bernoulli_deviance(y, mu)
        if dev < 1e-4 or np.max(np.abs(coef)) > 1e8:
            raise SeparationError(
                "fitted probabilities reached 0/1 on every record: "
                "perfect separation")
        if delta < tol:
            converged = True
            break

    H = (X.T * np.maximum(mu * (1 - mu), 1e-10)) @ X + P
    cov = np.linalg.pinv(H)
    n_ab = design.slices["linear"].stop if "linear" in design.slices else 1
    se = np.sqrt(np.diag(cov)[:n_ab])
    beta = coef[design.slices["linear"]] if "linear" in design.slices else np.zeros(0)
    z = np.concatenate([[coef[0]], beta]) / se

    return LogisticFit(
        alpha=float(coef[0]),
        beta=beta,
        smooth_coefficients={name: coef[sl] for name, sl, _, _ in design.penalties},
        se=se,
        z=z,
        deviance=_bernoulli_deviance(y, mu),
        converged=converged,
        design=design,
        coef=coef,
    )


def _prediction_row(design: DesignMatrices, point, covariates):
    spec = design.spec
    row = [np.ones(1)]
    if "linear" in design.slices:
        row.append(np.atleast_1d(np.asarray(covariates, dtype=float)))
    if "day" in design.slices:
        _, lo, hi = design.ranges["day"]
        day = np.floor(point.t / MINUTES_PER_DAY)
        B = splines.basis_matrix([day], lo, hi, spec.day_smooth.n_basis)
        row.append(B[0] - design.centers["day"])
    if "time" in design.slices:
        B = splines.cyclic_basis_matrix([np.mod(point.t, MINUTES_PER_DAY)],
                                        MINUTES_PER_DAY, spec.time_smooth.n_basis)
        row.append(B[0] - design.centers["time"])
    if "spatial" in design.slices:
        _, (lon_lo, lon_hi), (lat_lo, lat_hi) = design.ranges["spatial"]
        nx, ny = spec.spatial_smooth
        Bx = splines.basis_matrix([point.lon], lon_lo, lon_hi, nx)
        By = splines.basis_matrix([point.lat], lat_lo, lat_hi, ny)
        B = splines.tensor_basis(Bx, By)
        row.append(B[0] - design.centers["spatial"])
    return np.concatenate(row)


def predict_hot_probability(fit: LogisticFit, point, covariates=()) -> float:
    """Inverse-logit of the fitted linear predictor at a new space-time point.

    Raises for points outside the spline support: the smooths do not
    extrapolate.
    """
    row = _prediction_row(fit.design, point, covariates)
    return float(expit(row @ fit.coef))


def penalized_score(fit: LogisticFit) -> np.ndarray:
    """Gradient of the penalized log-likelihood at the reported optimum."""
    X, y = fit.design.X, fit.design.y
    mu = expit(X @ fit.coef)
    return X.T @ (y - mu) - fit.design.penalty_matrix() @ fit.coef


def coefficient_table(fit: LogisticFit) -> list:
    """Rows of (name, estimate, se, z, p, stars); * at 5%, ** at 1%."""
    names = ["Const."] + list(fit.design.spec.linear_covariates)
    est = np.concatenate([[fit.alpha], fit.beta])
    rows = []
    for name, e, s, zv in zip(names, est, fit.se, fit.z):
        pval = 2 * (1 - norm.cdf(abs(zv)))
        stars = "**" if pval < 0.01 else "*" if pval < 0.05 else ""
        rows.append((name, float(e), float(s), float(zv), float(pval), stars))
    return rows


def smooth_curve(fit: LogisticFit, term: str, n_grid: int = 100):
    """(grid, effect) pairs for plotting one smooth term's centered effect."""
    design = fit.design
    if term not in design.slices or term in ("intercept", "linear"):
        raise ValueError(f"no smooth term {term!r} in this fit")
    spec = design.spec
    coef = fit.coef[design.slices[term]]
    if term == "day":
        _, lo, hi = design.ranges["day"]
        grid = np.linspace(lo, hi, n_grid)
        B = splines.basis_matrix(grid, lo, hi, spec.day_smooth.n_basis)
    elif term == "time":
        grid = np.linspace(0, MINUTES_PER_DAY, n_grid, endpoint=False)
        B = splines.cyclic_basis_matrix(grid, MINUTES_PER_DAY, spec.time_smooth.n_basis)
    else:
        raise ValueError("use smooth_surface for the spatial term")
    return grid, (B - design.centers[term]) @ coef


def smooth_surface(fit: LogisticFit, n_grid: int = 40):
    """(lon grid, lat grid, effect matrix) for the spatial tensor smooth."""
    design = fit.design
    if "spatial" not in design.slices:
        raise ValueError("fit has no spatial smooth")
    _, (lon_lo, lon_hi), (lat_lo, lat_hi) = design.ranges["spatial"]
    nx, ny = design.spec.spatial_smooth
    gx = np.linspace(lon_lo, lon_hi, n_grid)
    gy = np.linspace(lat_lo, lat_hi, n_grid)
    Bx = splines.basis_matrix(gx, lon_lo, lon_hi, nx)
    By = splines.basis_matrix(gy, lat_lo, lat_hi, ny)
    b = fit.coef[design.slices["spatial"]].reshape(nx, ny)
    offset = float(design.centers["spatial"] @ fit.coef[design.slices["spatial"]])
    return gx, gy, Bx @ b @ By.T - offset
