"""Spatiotemporal covariance engines.

Two interchangeable models provide c(x_i, x_j):

* a product-sum exponential kernel (spatial + temporal + interaction terms),
  fitted by weighted least squares on an empirical variogram, and
* a low-rank radial-basis model over anchor points, whose coefficients are
  estimated by the EM algorithm in :mod:`fieldfuse.lowrank_em`.

Spatial distance is Euclidean on the provided coordinates; callers project
geographic coordinates beforehand.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist

from fieldfuse.ingest import SpaceTimePoint


class VariogramFitError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


def _coords(points):
    """Split a list of SpaceTimePoint (or (lon, lat, t) rows) into xy and t arrays."""
    if isinstance(points, np.ndarray):
        pts = np.asarray(points, dtype=float)
        return pts[:, :2], pts[:, 2] if pts.shape[1] > 2 else np.zeros(len(pts))
    xy = np.array([[p.lon, p.lat] for p in points], dtype=float)
    t = np.array([p.t for p in points], dtype=float)
    return xy, t


@dataclass
class ProductSumKernel:
    """Exponential product-sum covariance: spatial, temporal, and interaction terms."""

    sigma2_s: float
    sigma2_t: float
    sigma2_st: float
    r_s: float
    r_t: float

    def __post_init__(self):
        if min(self.sigma2_s, self.sigma2_t, self.sigma2_st) < 0:
            raise ValueError("variance components must be nonnegative")
        if self.r_s <= 0 or self.r_t <= 0:
            raise ValueError("range parameters must be positive")

    @property
    def sill(self) -> float:
        return self.sigma2_s + self.sigma2_t + self.sigma2_st

    def __call__(self, xi: SpaceTimePoint, xj: SpaceTimePoint) -> float:
        return product_sum_cov(xi, xj, self)

    def matrix(self, points_a, points_b=None) -> np.ndarray:
        """Covariance matrix between two point sets (gram matrix if one set)."""
        xy_a, t_a = _coords(points_a)
        xy_b, t_b = (xy_a, t_a) if points_b is None else _coords(points_b)
        ks = np.exp(-cdist(xy_a, xy_b) / self.r_s)
        kt = np.exp(-np.abs(t_a[:, None] - t_b[None, :]) / self.r_t)
        return self.sigma2_s * ks + self.sigma2_t * kt + self.sigma2_st * ks * kt


def space_kernel(d, r_s: float):
    """exp(-d / r_s) for spatial separation d >= 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be nonnegative")
    if r_s <= 0:
        raise ValueError("r_s must be positive")
    out = np.exp(-d / r_s)
    return float(out) if out.ndim == 0 else out


def time_kernel(lag, r_t: float):
    """exp(-lag / r_t) for temporal separation lag >= 0."""
    lag = np.asarray(lag, dtype=float)
    if np.any(lag < 0):
        raise ValueError("time lag must be nonnegative")
    if r_t <= 0:
        raise ValueError("r_t must be positive")
    out = np.exp(-lag / r_t)
    return float(out) if out.ndim == 0 else out


def product_sum_cov(xi: SpaceTimePoint, xj: SpaceTimePoint, k: ProductSumKernel) -> float:
    d = math.hypot(xi.lon - xj.lon, xi.lat - xj.lat)
    lag = abs(xi.t - xj.t)
    ks = space_kernel(d, k.r_s)
    kt = time_kernel(lag, k.r_t)
    return k.sigma2_s * ks + k.sigma2_t * kt + k.sigma2_st * ks * kt


@dataclass
class AnchorLayout:
    """Anchor points generating the radial basis functions, with the 1.5x ranges."""

    anchors: list
    r_tilde_s: float
    r_tilde_t: float
    spatial_only: bool = False

    def __post_init__(self):
        if len(self.anchors) < 1:
            raise ValueError("need at least one anchor")
        if self.r_tilde_s <= 0 or self.r_tilde_t <= 0:
            raise ValueError("ranges must be positive")

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    @property
    def n_basis(self) -> int:
        return self.n_anchors if self.spatial_only else 3 * self.n_anchors


@dataclass
class BasisCoefficients:
    """Stacked coefficient vector for the low-rank model plus noise variance."""

    b: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive to keep sigma2*I + C positive definite")


@dataclass
class EmpiricalVariogram:
    """Binned semivariances: (spatial lag, temporal lag, semivariance, pair count)."""

    bins: list


def make_anchors(spatial_points, temporal_count: int, window) -> AnchorLayout:
    """Cartesian product of spatial points and equally spaced times.

    Ranges follow the 1.5x shortest-separation rule; a dimension with a
    single distinct value falls back to 1.5x the data extent (window length
    in time, coordinate extent in space).
    """
    if len(spatial_points) == 0:
        raise ValueError("need at least one spatial point")
    if temporal_count < 1:
        raise ValueError("temporal_count must be >= 1")
    xy = np.asarray(
        [[p[0], p[1]] if not isinstance(p, SpaceTimePoint) else [p.lon, p.lat] for p in spatial_points],
        dtype=float,
    )
    t0, t1 = window
    times = np.linspace(t0, t1, temporal_count)
    spatial_only = temporal_count == 1 and t0 == t1

    if len(xy) > 1:
        d = cdist(xy, xy)
        min_d = d[np.triu_indices(len(xy), k=1)].min()
        if min_d == 0:
            raise ValueError("duplicate spatial points break the 1.5x spacing rule")
        r_s = 1.5 * min_d
    else:
        extent = max(np.ptp(xy[:, 0]), np.ptp(xy[:, 1]))
        r_s = 1.5 * extent if extent > 0 else 1.5  # lone anchor: arbitrary unit scale

    if temporal_count > 1:
        r_t = 1.5 * (times[1] - times[0])
    else:
        r_t = 1.5 * (t1 - t0) if t1 > t0 else 1.5

    anchors = [
        SpaceTimePoint(lon=float(x), lat=float(y), t=float(tt))
        for tt in times
        for x, y in xy
    ]
    return AnchorLayout(anchors=anchors, r_tilde_s=r_s, r_tilde_t=r_t, spatial_only=spatial_only)


def basis_matrix(points, layout: AnchorLayout) -> np.ndarray:
    """Rows of basis vectors w(x) for many points at once.

    Columns are [w_s | w_t | w_st] blocks (just w_s when the layout is
    spatial-only); every entry lies in (0, 1].
    """
    xy, t = _coords(points)
    a_xy, a_t = _coords(layout.anchors)
    w_s = np.exp(-cdist(xy, a_xy) / layout.r_tilde_s)
    if layout.spatial_only:
        return w_s
    w_t = np.exp(-np.abs(t[:, None] - a_t[None, :]) / layout.r_tilde_t)
    return np.hstack([w_s, w_t, w_s * w_t])


def basis_vector(x: SpaceTimePoint, layout: AnchorLayout) -> np.ndarray:
    """w(x): stacked radial basis values at a single space-time point."""
    return basis_matrix([x], layout)[0]


def lowrank_cov(xi, xj, coeffs: BasisCoefficients, layout: AnchorLayout) -> float:
    """Sum of per-block rank-1 terms (b . w(xi)) (b . w(xj))."""
    W = basis_matrix([xi, xj], layout)
    scores = _block_scores(W, coeffs, layout)
    return float(np.sum(scores[0] * scores[1]))


def _block_scores(W, coeffs: BasisCoefficients, layout: AnchorLayout) -> np.ndarray:
    """(n, n_blocks) matrix of per-block inner products b_block . w_block."""
    A = layout.n_anchors
    if layout.spatial_only:
        if len(coeffs.b) != A:
            raise ValueError(f"coefficient length {len(coeffs.b)} != {A}")
        return (W @ coeffs.b)[:, None]
    if len(coeffs.b) != 3 * A:
        raise ValueError(f"coefficient length {len(coeffs.b)} != 3A = {3 * A}")
    return np.column_stack(
        [W[:, i * A:(i + 1) * A] @ coeffs.b[i * A:(i + 1) * A] for i in range(3)]
    )


def block_scores(points, coeffs: BasisCoefficients, layout: AnchorLayout) -> np.ndarray:
    """(n, n_blocks) score matrix U with lowrank cov = U U'.

    Solving (U U' + sigma2 I) systems through U keeps the cost linear in n,
    which is the point of the low-rank model.
    """
    return _block_scores(basis_matrix(points, layout), coeffs, layout)


def lowrank_cov_matrix(points_a, coeffs: BasisCoefficients, layout: AnchorLayout,
                       points_b=None) -> np.ndarray:
    """Gram matrix of the low-rank covariance; rank at most the block count."""
    Ua = _block_scores(basis_matrix(points_a, layout), coeffs, layout)
    Ub = Ua if points_b is None else _block_scores(basis_matrix(points_b, layout), coeffs, layout)
    return Ua @ Ub.T


@dataclass
class LowRankCovariance:
    """Adapter giving the low-rank model the common .matrix(a, b) interface."""

    coeffs: BasisCoefficients
    layout: AnchorLayout

    def matrix(self, points_a, points_b=None) -> np.ndarray:
        return lowrank_cov_matrix(points_a, self.coeffs, self.layout, points_b)

    def __call__(self, xi, xj) -> float:
        return lowrank_cov(xi, xj, self.coeffs, self.layout)


def empirical_variogram(points, residuals, space_bin_edges, time_bin_edges=None) -> EmpiricalVariogram:
    """Bin half squared differences of residuals by spatial and temporal lag.

    Pairs outside the outermost edges are discarded; empty bins are dropped
    with a warning.
    """
    residuals = np.asarray(residuals, dtype=float)
    if len(residuals) < 2:
        raise ValueError("need at least 2 observations")
    xy, t = _coords(points)
    iu, ju = np.triu_indices(len(residuals), k=1)
    d = np.sqrt(((xy[iu] - xy[ju]) ** 2).sum(axis=1))
    lag = np.abs(t[iu] - t[ju])
    gamma = 0.5 * (residuals[iu] - residuals[ju]) ** 2

    s_edges = np.asarray(space_bin_edges, dtype=float)
    t_edges = np.asarray(time_bin_edges, dtype=float) if time_bin_edges is not None else None

    si = np.digitize(d, s_edges) - 1
    keep = (si >= 0) & (si < len(s_edges) - 1)
    if t_edges is not None:
        ti = np.digitize(lag, t_edges) - 1
        keep &= (ti >= 0) & (ti < len(t_edges) - 1)
    else:
        ti = np.zeros_like(si)

    si, ti, gamma = si[keep], ti[keep], gamma[keep]
    n_t = 1 if t_edges is None else len(t_edges) - 1
    flat = si * n_t + ti
    counts = np.bincount(flat, minlength=(len(s_edges) - 1) * n_t)
    sums = np.bincount(flat, weights=gamma, minlength=len(counts))

    bins = []
    n_empty = 0
    for s in range(len(s_edges) - 1):
        for tt in range(n_t):
            c = counts[s * n_t + tt]
            if c == 0:
                n_empty += 1
                continue
            h_s = 0.5 * (s_edges[s] + s_edges[s + 1])
            h_t = 0.0 if t_edges is None else 0.5 * (t_edges[tt] + t_edges[tt + 1])
            bins.append((float(h_s), float(h_t), float(sums[s * n_t + tt] / c), int(c)))
    if n_empty:
        warnings.warn(f"dropped {n_empty} empty variogram bins")
    return EmpiricalVariogram(bins=bins)


def _model_semivariance(params, h_s, h_t, spatial_only):
    """gamma(h) = c(0,0) - c(h) under the product-sum kernel."""
    if spatial_only:
        s2s, rs, nug = params
        return nug + s2s * (1.0 - np.exp(-h_s / rs))
    s2s, s2t, s2st, rs, rt, nug = params
    ks = np.exp(-h_s / rs)
    kt = np.exp(-h_t / rt)
    return nug + s2s * (1 - ks) + s2t * (1 - kt) + s2st * (1 - ks * kt)


def fit_product_sum_wls(vg: EmpiricalVariogram, init: ProductSumKernel,
                        spatial_only: bool = False, init_nugget: float = 0.0):
    """Cressie-weighted least squares fit of the product-sum variogram.

    Minimizes sum over bins of count * (gamma_model - gamma_hat)^2 /
    gamma_model^2, parameters constrained positive.  Returns
    (ProductSumKernel, nugget); the nugget maps to the observation noise
    variance.
    """
    bins = vg.bins
    if len(bins) < (3 if spatial_only else 5):
        raise ValueError(f"need at least {'3' if spatial_only else '5'} non-empty bins, got {len(bins)}")
    h_s = np.array([b[0] for b in bins])
    h_t = np.array([b[1] for b in bins])
    g = np.array([b[2] for b in bins])
    cnt = np.array([b[3] for b in bins], dtype=float)

    if np.all(g == 0):
        warnings.warn("all semivariances are zero; returning zero-variance kernel")
        zero = ProductSumKernel(0.0, 0.0, 0.0, init.r_s, init.r_t)
        return zero, 0.0

    if spatial_only:
        x0 = np.array([init.sigma2_s, init.r_s, init_nugget])
    else:
        x0 = np.array([init.sigma2_s, init.sigma2_t, init.sigma2_st,
                       init.r_s, init.r_t, init_nugget])
    x0 = np.maximum(x0, 1e-12)
    sq_cnt = np.sqrt(cnt)

    def resid(params):
        gm = _model_semivariance(params, h_s, h_t, spatial_only)
        gm = np.maximum(gm, 1e-12)
        return sq_cnt * (gm - g) / gm

    res = least_squares(resid, x0, bounds=(1e-12, np.inf), method="trf",
                        max_nfev=5000)
    if not res.success:
        raise VariogramFitError(f"WLS optimizer failed: {res.message}",
                                trace=float(0.5 * res.cost))
    p = res.x
    if spatial_only:
        kern = ProductSumKernel(float(p[0]), 0.0, 0.0, float(p[1]), init.r_t)
        return kern, float(p[2])
    kern = ProductSumKernel(float(p[0]), float(p[1]), float(p[2]), float(p[3]), float(p[4]))
    return kern, float(p[5])


def kernel_config_dict(kernel: ProductSumKernel, nugget: float = 0.0) -> dict:
    """Flat key=value mapping for the shared plain-text config format."""
    return {
        "sigma2_s": kernel.sigma2_s,
        "sigma2_t": kernel.sigma2_t,
        "sigma2_st": kernel.sigma2_st,
        "r_s": kernel.r_s,
        "r_t": kernel.r_t,
        "nugget": nugget,
    }


def kernel_from_config(cfg: dict):
    kern = ProductSumKernel(
        sigma2_s=float(cfg["sigma2_s"]),
        sigma2_t=float(cfg["sigma2_t"]),
        sigma2_st=float(cfg["sigma2_st"]),
        r_s=float(cfg["r_s"]),
        r_t=float(cfg["r_t"]),
    )
    return kern, float(cfg.get("nugget", 0.0))
