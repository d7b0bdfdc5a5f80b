"""Variance components of the outcome model on its own.

The outcome part of the sampler can be run without any views: a random
intercept per family, centred on a random intercept per site.  Here we
simulate that model, recover the site and family variances, and compare the
nested fit with a family-only fit that ignores sites.

Run with:  python3 demos/03_variance_components.py
"""
import numpy as np

from bipmixed import Hyperparameters, build_hierarchy, make_rng
from bipmixed.outcome import sample_mixed_model

rng = make_rng(3)
sites = np.repeat([f"s{k:02d}" for k in range(20)], 40)
families = np.repeat([f"f{k:03d}" for k in range(400)], 2)
h = build_hierarchy(sites, families)

xi = 1.0 + rng.normal(0, 1.0, h.N_S)  # sigma_xi2 = 1
theta = xi[h.family_site] + rng.normal(0, np.sqrt(0.5), h.n_families)  # sigma_theta2 = 0.5
y = theta[h.row_family] + rng.normal(0, 1.0, h.n)

hyper = Hyperparameters(n_iter=4000, n_burn=1000)
nested = sample_mixed_model(y, h, hyper, make_rng(3, 1))
for name, truth in (("sigma_xi2", 1.0), ("sigma2", 1.0)):
    lo, hi = nested.interval(name)
    print(f"{name:13s} truth {truth:.2f}  posterior mean {nested.mean(name):.3f}  95% CI [{lo:.3f}, {hi:.3f}]")
st2 = nested.traces["sigma_theta2"]
lo, hi = np.quantile(st2.mean(axis=1), [0.025, 0.975])
print(f"sigma_theta2  truth 0.50  site-average mean {st2.mean():.3f}  95% CI [{lo:.3f}, {hi:.3f}]")
print(f"sites whose sigma_theta2 posterior mean is below 0.1: {(st2.mean(axis=0) < 0.1).sum()} of {h.N_S}")

flat = sample_mixed_model(y, h, hyper, make_rng(3, 2), family_only=True)
print(f"\nfamily-only fit: one family variance {flat.mean('sigma_theta2')[0]:.3f} "
      f"(absorbs site spread, truth 0.5 + 1.0 = 1.5)")
err_nested = np.mean((nested.theta_hat - theta) ** 2)
err_flat = np.mean((flat.theta_hat - theta) ** 2)
print(f"family-intercept MSE: nested {err_nested:.3f}, family-only {err_flat:.3f}")
