"""Quantify dependence between two series: correlation, tails, copula.

Synthetic stand-in for pairing a report-probability series against
temperature: a Gaussian copula with correlation 0.8 treats both tails
symmetrically, while a Clayton copula of similar concordance clusters in
the lower tail only.  The rank transform, percentile sweep, and penalized
B-spline density make the asymmetry visible.
"""

import numpy as np
from scipy import stats

from fieldfuse.dependence import (
    copula_density_eval,
    fit_spline_copula,
    pearson_correlation,
    pseudo_observations,
    tail_dependence,
)

rng = np.random.default_rng(0)
n = 20_000

# Gaussian copula, rho = 0.8
cov = np.array([[1.0, 0.8], [0.8, 1.0]])
gauss = stats.norm.cdf(rng.multivariate_normal(np.zeros(2), cov, size=n))

# Clayton copula, theta = 2 (lower tail dependence 2^(-1/2) ~ 0.707)
u = rng.random(n)
v = rng.random(n)
clayton = np.column_stack(
    [u, (u ** -2.0 * (v ** (-2.0 / 3.0) - 1.0) + 1.0) ** -0.5])

for name, sample in (("Gaussian rho=0.8", gauss), ("Clayton theta=2", clayton)):
    ps = pseudo_observations(sample)
    corr = pearson_correlation(sample[:, 0], sample[:, 1])
    upper = tail_dependence(ps, "upper")
    lower = tail_dependence(ps, "lower")
    print(f"{name}: pearson {corr:.3f}, "
          f"lambda upper {upper.mean_lambda:.3f}, "
          f"lambda lower {lower.mean_lambda:.3f}")

# fitted copula density along the diagonal separates the two families
print()
print("fitted copula density on the diagonal (u, u):")
diag = np.linspace(0.05, 0.95, 7)
header = "  ".join(f"{u:.2f}" for u in diag)
print(f"          u: {header}")
for name, sample in (("Gaussian", gauss), ("Clayton ", clayton)):
    est = fit_spline_copula(pseudo_observations(sample), penalty=1.0)
    dens = copula_density_eval(est, np.column_stack([diag, diag]))
    row = "  ".join(f"{d:4.2f}" for d in np.atleast_1d(dens))
    print(f"  {name}: {row}")
print("(Clayton mass concentrates near (0, 0); Gaussian stays symmetric)")
