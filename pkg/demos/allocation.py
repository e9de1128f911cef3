"""
Splitting a batch across domains
================================

The mixed-batch gradient has variance sum_i pi_i^2 w_i^2 v_i^2 / b_i, where
v_i is the gradient dispersion inside domain i. Allocating rows in
proportion to pi_i w_i v_i minimizes it; ``va_allocate`` finds the integer
optimum under a per-domain floor.
"""

import numpy as np

from mixweights import data, models, trainer, weighting

pi = np.array([0.5, 0.5])
w = np.array([1.0, 1.0])

# Hand-sized cases.
print(weighting.va_allocate(pi, w, [3.0, 1.0], 8, 0.125))   # the noisier domain gets more
print(weighting.va_allocate(pi, w, [0.0, 5.0], 10, 0.1))    # a flat domain keeps its floor

# A real pair of domains: feature scales 4 and 1 make domain one's gradients
# far more spread out.
spec = data.LinearTaskSpec(10, [data.LinearDomain(4.0, 1.0, 0.5), data.LinearDomain(1.0, 1.0, 0.5)], 2000)
sets = data.gen_linear(spec, seed=0)
p = models.Params("linear", spec.theta_gt + 0.3, spec.dim)
stats = weighting.stats_from_rows(p, [(ds.features, ds.labels) for ds in sets])
print("\ndispersion v:", np.round(stats.grad_dispersion, 2))

batch = 16
uniform = np.array([8, 8])
va = weighting.va_allocate(pi, w, stats.grad_dispersion, batch, 1 / 8)
for name, counts in [("uniform", uniform), ("va", va)]:
    pred = weighting.va_objective(pi, w, stats.grad_dispersion, counts)
    print(f"{name:8s} counts {counts}  predicted variance {pred:.3f}")

# Check the prediction by resampling batches.
rng = np.random.default_rng(1)
state = weighting.MixtureState.uniform(pi)
for name, counts in [("uniform", uniform), ("va", va)]:
    g = np.array([
        trainer.weighted_gradient(
            p, [ds.rows(data.sample_batch(ds, True, int(c), rng)) for ds, c in zip(sets, counts)], state)
        for _ in range(4000)
    ])
    print(f"{name:8s} empirical variance {g.var(axis=0, ddof=1).sum():.3f}")
