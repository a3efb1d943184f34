"""Compare the two covariance engines on one simulated field.

A zero-mean Gaussian process is sampled at random sites on the unit square,
then reconstructed on a grid twice: with the product-sum kernel fitted by
weighted least squares on the empirical variogram, and with the low-rank
anchor-basis model fitted by EM.  The kernel engine is more accurate; the
basis engine is dramatically cheaper as the sample grows.
"""

import time

import numpy as np

from fieldfuse.covariance import ProductSumKernel
from fieldfuse.simbench import (
    benchmark_anchor_layout,
    fit_basis_engine,
    fit_kernel_engine,
    kriging_predict,
    plug_in_surface,
    rmse,
    sample_gp,
    scale_sites,
)

rng_seed = 0
true_kernel = ProductSumKernel(1.0, 0.0, 0.0, 0.1, 1.0)

# a 20 x 20 evaluation grid over the interior of the unit square
gx = np.linspace(0.1, 0.9, 20)
xx, yy = np.meshgrid(gx, gx)
grid = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])

print("engine comparison on one simulated field per sample size")
print(f"{'N':>5} {'kernel RMSE':>12} {'basis RMSE':>11} "
      f"{'kernel s':>9} {'basis s':>8}")

for n in (20, 200, 1000):
    sites = np.column_stack([scale_sites(n, rng_seed), np.zeros(n)])
    # draw the field jointly at the sites and the grid so the truth is known
    both = np.vstack([sites, grid])
    field = sample_gp(both, true_kernel, rng_seed + n)
    values, truth = field[:n], field[n:]

    t0 = time.perf_counter()
    kernel, nugget = fit_kernel_engine(sites, values)
    pred_k = kriging_predict(kernel, nugget, sites, values, grid)
    t_kernel = time.perf_counter() - t0

    layout = benchmark_anchor_layout(3)
    t0 = time.perf_counter()
    res = fit_basis_engine(sites, values, layout)
    pred_b = plug_in_surface(res.coeffs, layout, grid)
    t_basis = time.perf_counter() - t0

    print(f"{n:>5} {rmse(pred_k, truth):>12.3f} {rmse(pred_b, truth):>11.3f} "
          f"{t_kernel:>9.3f} {t_basis:>8.3f}")

print()
print("the full Monte Carlo benchmark (200 replications) is available via")
print("  fieldfuse bench --table 5   (accuracy vs sample size)")
print("  fieldfuse bench --table 7   (wall time vs sample size)")
