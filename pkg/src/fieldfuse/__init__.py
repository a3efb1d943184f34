"""Spatiotemporal field reconstruction from mixed continuous and binary sensors.

The package combines sparse continuous station readings with dense, noisy
binary threshold-exceedance reports (e.g. keyword-flagged social media posts)
through a best linear unbiased estimator over a Gaussian-process field.  It
also ships the supporting dependence analysis (empirical copulas, tail
dependence, penalized spline copula densities), an additive logistic
regression for report probabilities, two spatiotemporal covariance engines
(product-sum kernel and low-rank radial basis), and a Monte Carlo benchmark
harness comparing the two engines.
"""

from fieldfuse.ingest import (
    SpaceTimePoint,
    TweetRecord,
    Lexicon,
    StationReading,
    DetrendModel,
    parse_tweets,
    match_hot,
    detrend,
)
from fieldfuse.covariance import (
    ProductSumKernel,
    AnchorLayout,
    BasisCoefficients,
    space_kernel,
    time_kernel,
    product_sum_cov,
    make_anchors,
    basis_vector,
    lowrank_cov,
    empirical_variogram,
    fit_product_sum_wls,
)
from fieldfuse.lowrank_em import EMConfig, EMResult, fit_em, plug_in_field
from fieldfuse.sblue import (
    ExceedanceSensorModel,
    ObservationSet,
    FusionProblem,
    FieldEstimate,
    exceedance_prob,
    sblue_estimate,
)

__version__ = "0.1.0"
