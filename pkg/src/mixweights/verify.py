"""Monte Carlo and enumeration oracles behind the ``verify`` subcommand.

Each suite returns a list of :class:`Check` records (measured value,
tolerance, verdict). The oracles are written independently of the code they
check: allocations are enumerated, gradients are differenced, expectations
are taken over every possible batch.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import data as datamod
from . import estimators as est
from . import metrics, models, trainer, weighting
from .errors import UnknownSuite
from .weighting import MixtureState


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: str
    passed: bool

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.name}: {self.value:.6g} ({self.tolerance})"


def planted_spec(samples_per_domain=200, dim=20, noise_var=(1.0, 20.0)):
    """Two equally likely unit-scale domains that differ only in label noise."""
    doms = [datamod.LinearDomain(1.0, s, 0.5) for s in noise_var]
    return datamod.LinearTaskSpec(dim, doms, samples_per_domain)


# --- closed-form estimators -------------------------------------------------

def aitken(replicates=200, seed=0):
    """GLS with inverse-variance weights against OLS and other weightings."""
    spec = planted_spec()
    rng = np.random.default_rng(seed + 12345)
    sigma2 = spec.noise_var
    candidates = {
        "gls": 1.0 / sigma2,
        "ols": np.ones(2),
        "sigma2": sigma2.copy(),
    }
    for j in range(3):
        candidates[f"random{j}"] = np.exp(rng.uniform(-3.0, 3.0, size=2))
    errs = est.mc_squared_errors({k: est.weighted_estimator(v) for k, v in candidates.items()}, spec, replicates, seed)
    gls_mean, gls_se = est.mean_stderr(errs["gls"])
    ols_mean, ols_se = est.mean_stderr(errs["ols"])
    margin = (ols_mean - gls_mean) / math.hypot(gls_se, ols_se)
    checks = [Check("MSE(OLS) - MSE(GLS) in combined stderr", margin, "> 3", margin > 3.0)]
    for name in candidates:
        if name == "gls":
            continue
        mean, _ = est.mean_stderr(errs[name])
        w = candidates[name]
        checks.append(Check(
            f"MSE({name} w1/w2={w[0] / w[1]:.3g}) / MSE(GLS)", mean / gls_mean, "> 1", mean > gls_mean))
    return checks


def lemma1(weightings=20, replicates=200, seed=0):
    """MSE ratio of arbitrary fixed weights vs GLS against the max/min ratio bound."""
    spec = planted_spec()
    sigma2 = spec.noise_var
    rng = np.random.default_rng(seed + 777)
    ws = [np.exp(rng.uniform(-4.0, 4.0, size=2)) for _ in range(weightings)]
    ests = {"gls": est.weighted_estimator(1.0 / sigma2)}
    ests.update({f"w{j}": est.weighted_estimator(w) for j, w in enumerate(ws)})
    errs = est.mc_squared_errors(ests, spec, replicates, seed)
    checks = []
    for j, w in enumerate(ws):
        ratio, se = est.ratio_stderr(errs[f"w{j}"], errs["gls"])
        bound = float(np.max(w * sigma2) / np.min(w * sigma2))
        checks.append(Check(f"weighting {j}: MSE ratio vs GLS", ratio, f"<= bound {bound:.4g} + 3*{se:.2g}",
                            ratio <= bound + 3.0 * se))
    return checks


def thm2_trend(sizes=(2000, 8000, 32000), replicates=100, dim=50, n_updates=5, seed=0):
    """One-shot FGLS (exact inner solves) vs GLS on the same train split as |S| grows."""
    ratios, ses = [], []
    for size in sizes:
        spec = planted_spec(size // 2, dim)
        rho = 1.0 - 1.0 / math.sqrt(size)
        a, b = np.empty(replicates), np.empty(replicates)
        for r in range(replicates):
            datasets = datamod.gen_linear(spec, seed + r)
            theta, _, split_sets = est.one_shot_fgls_exact(datasets, spec.pi, rho, n_updates, 1.0, seed + r)
            X, y, dom = est.stack(split_sets, "train")
            gls = est.wls(X, y, (1.0 / spec.noise_var)[dom])
            a[r] = np.sum((theta - spec.theta_gt) ** 2)
            b[r] = np.sum((gls - spec.theta_gt) ** 2)
        ratio, se = est.ratio_stderr(a, b)
        ratios.append(ratio)
        ses.append(se)
    checks = [Check(f"|S|={s}: MSE(one-shot FGLS)/MSE(GLS)", r, f"stderr {e:.3g}", True)
              for s, r, e in zip(sizes, ratios, ses)]
    for i in range(1, len(sizes)):
        slack = 2.0 * math.hypot(ses[i], ses[i - 1])
        checks.append(Check(f"ratio change {sizes[i - 1]} -> {sizes[i]}", ratios[i] - ratios[i - 1],
                            f"<= 2 stderr = {slack:.3g}", ratios[i] - ratios[i - 1] <= slack))
    checks.append(Check(f"ratio at |S|={sizes[-1]}", ratios[-1], "<= 1.2", ratios[-1] <= 1.2))
    return checks


# --- gradient estimator -----------------------------------------------------

def _variance_instance(seed):
    spec = datamod.LinearTaskSpec(
        20, [datamod.LinearDomain(4.0, 1.0, 0.3), datamod.LinearDomain(1.0, 5.0, 0.7)], 200)
    datasets = datamod.gen_linear(spec, seed)
    theta = spec.theta_gt + np.random.default_rng(seed + 1).normal(0, 0.3, size=20)
    p = models.Params("linear", theta, 20)
    state = MixtureState(spec.pi, weighting.normalize_loss_weights([1.5, 0.8], spec.pi), np.array([0.4, 0.6]))
    return datasets, p, state


def _full_domain_grads(p, datasets):
    """Per-domain full-data mean gradient and squared dispersion (two-pass oracle)."""
    means, v2 = [], []
    for ds in datasets:
        _, g = models.per_sample_grads(p, ds.features, ds.labels)
        mu = g.mean(axis=0)
        means.append(mu)
        v2.append(float(np.mean(np.sum((g - mu) ** 2, axis=1))))
    return np.array(means), np.array(v2)


def eq12_variance(draws=10_000, counts=(4, 6), seed=0):
    """Empirical variance of the mixed-batch gradient vs the per-domain decomposition."""
    datasets, p, state = _variance_instance(seed)
    counts = np.asarray(counts)
    state = weighting.with_allocation(state, counts)
    means, v2 = _full_domain_grads(p, datasets)
    rng = np.random.default_rng(seed + 2)
    g = np.empty((draws, p.theta.size))
    for t in range(draws):
        batches = [ds.rows(datamod.sample_batch(ds, True, int(c), rng)) for ds, c in zip(datasets, counts)]
        g[t] = trainer.weighted_gradient(p, batches, state)
    empirical = float(np.sum(g.var(axis=0, ddof=1)))
    predicted = weighting.va_objective(state.pi, state.w, np.sqrt(v2), counts)
    rel = abs(empirical - predicted) / predicted
    return [Check(f"trace Var(g) empirical {empirical:.5g} vs predicted {predicted:.5g}", rel, "relative <= 0.05", rel <= 0.05)]


def unbiasedness_exhaustive(seed=0):
    """Average of the mixed-batch gradient over all 9 single-row draws (2 domains x 3 rows)."""
    rng = np.random.default_rng(seed)
    datasets = [datamod.DomainDataset(i, rng.normal(size=(3, 4)), rng.normal(size=3)) for i in range(2)]
    p = models.Params("linear", rng.normal(size=4), 4)
    pi = np.array([0.35, 0.65])
    state = MixtureState(pi, weighting.normalize_loss_weights([2.0, 0.5], pi), np.array([0.5, 0.5]))
    total = np.zeros(4)
    for i, j in itertools.product(range(3), range(3)):
        batches = [datasets[0].rows([i]), datasets[1].rows([j])]
        total += trainer.weighted_gradient(p, batches, state)
    avg = total / 9.0
    target = sum(pi[k] * state.w[k] * models.mean_loss_grad(p, ds.features, ds.labels)[1] for k, ds in enumerate(datasets))
    err = float(np.max(np.abs(avg - target)))
    return [Check("exhaustive mean of mixed-batch gradient minus full weighted gradient", err, "<= 1e-12", err <= 1e-12)]


def unbiasedness_mc(draws=10_000, counts=(3, 5), seed=0):
    """Monte Carlo mean of the mixed-batch gradient on a d = 20 task, checked per coordinate."""
    datasets, p, state = _variance_instance(seed)
    counts = np.asarray(counts)
    means, _ = _full_domain_grads(p, datasets)
    target = (state.pi * state.w) @ means
    rng = np.random.default_rng(seed + 3)
    g = np.empty((draws, p.theta.size))
    for t in range(draws):
        batches = [ds.rows(datamod.sample_batch(ds, True, int(c), rng)) for ds, c in zip(datasets, counts)]
        g[t] = trainer.weighted_gradient(p, batches, state)
    z = np.abs(g.mean(axis=0) - target) / (g.std(axis=0, ddof=1) / math.sqrt(draws))
    return [Check("max |mean - target| per coordinate in stderr", float(z.max()), "<= 3", bool(z.max() <= 3.0))]


# --- gradients --------------------------------------------------------------

def reference_loss(p, theta, x, y):
    """Independent per-sample loss in extended precision, used as the difference oracle."""
    ld = np.longdouble
    t = np.asarray(theta, dtype=ld)
    x = np.asarray(x, dtype=ld)
    if p.kind == "linear":
        return (t @ x - ld(y)) ** 2
    if p.kind == "logistic":
        z = t @ x
        return np.logaddexp(ld(0), z) - ld(y) * z
    d, h, c = p.dim, p.hidden, p.classes
    w1 = t[: d * h].reshape(d, h)
    b1 = t[d * h : d * h + h]
    w2 = t[d * h + h : d * h + h + h * c].reshape(h, c)
    b2 = t[d * h + h + h * c :]
    logits = np.maximum(x @ w1 + b1, ld(0)) @ w2 + b2
    top = logits.max()
    return top + np.log(np.sum(np.exp(logits - top))) - logits[int(y)]


def _fd_rel_error(p, x, y, h=1e-5):
    analytic = models.loss_grad(p, x, y).grad
    numeric = np.empty_like(analytic)
    base = p.theta.astype(np.longdouble)
    for j in range(analytic.size):
        up = base.copy()
        dn = base.copy()
        up[j] += h
        dn[j] -= h
        numeric[j] = float((reference_loss(p, up, x, y) - reference_loss(p, dn, x, y)) / (2 * h))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(points=50, seed=0, dims=None):
    """Central finite differences at random (params, sample) points for every model kind."""
    dims = dims or {"linear": 10, "logistic": 10, "mlp": 8}
    rng = np.random.default_rng(seed)
    checks = []
    for kind, d in dims.items():
        worst = 0.0
        for _ in range(points):
            x = rng.normal(size=d)
            if kind == "mlp":
                p = models.init_params("mlp", d, int(rng.integers(2**31)))
                p = p.with_theta(p.theta + rng.normal(0, 0.1, size=p.theta.size))
                y = int(rng.integers(models.CLASSES))
            else:
                p = models.Params(kind, rng.normal(size=d) / math.sqrt(d), d)
                y = float(rng.integers(2)) if kind == "logistic" else float(rng.normal())
            worst = max(worst, _fd_rel_error(p, x, y))
        checks.append(Check(f"{kind}: max relative gradient error over {points} points", worst, "<= 1e-4", worst <= 1e-4))
    return checks


# --- allocation -------------------------------------------------------------

def _compositions(total, k, floor):
    """All k-tuples of integers >= floor summing to total."""
    if k == 1:
        if total >= floor:
            yield (total,)
        return
    for first in range(floor, total - floor * (k - 1) + 1):
        for rest in _compositions(total - first, k - 1, floor):
            yield (first,) + rest


def brute_force_allocation(pi, w, v, batch, b_min):
    """Every minimizer of the mixed-batch variance among floored integer allocations."""
    k = len(pi)
    m = weighting.floor_count(b_min, batch, k)
    a2 = (np.asarray(pi) * np.asarray(w) * np.asarray(v)) ** 2
    best, arg = None, []
    for comp in _compositions(batch, k, m):
        val = float(np.sum(a2 / np.asarray(comp, dtype=np.float64)))
        if best is None or val < best * (1 - 1e-12) - 1e-300:
            best, arg = val, [comp]
        elif val <= best * (1 + 1e-12) + 1e-300:
            arg.append(comp)
    return best, arg


_ALLOC_MIXES = {
    1: [((1.0,), (1.0,))],
    2: [((0.5, 0.5), (1.0, 1.0)), ((0.7, 0.3), (0.6, 1.9))],
    3: [((1 / 3, 1 / 3, 1 / 3), (1.0, 1.0, 1.0)), ((0.5, 0.3, 0.2), (1.2, 0.5, 1.75))],
}


def allocation_oracle(max_k=3, max_batch=15, grid=(0.0, 1.0, 3.0, 5.0)):
    """Exhaustive comparison of va_allocate with the enumeration argmin."""
    cases = mismatches = ties = 0
    for k in range(1, max_k + 1):
        b_min = 1.0 / (4 * k)
        for pi, w in _ALLOC_MIXES[k]:
            for v in itertools.product(grid, repeat=k):
                for batch in range(k, max_batch + 1):
                    counts = tuple(int(c) for c in weighting.va_allocate(pi, w, v, batch, b_min))
                    _, arg = brute_force_allocation(pi, w, v, batch, b_min)
                    cases += 1
                    ties += len(arg) > 1
                    if counts not in arg:
                        mismatches += 1
    return [
        Check(f"allocations differing from the enumeration argmin ({cases} cases, {ties} with tied optima)",
              mismatches, "== 0", mismatches == 0)
    ]


# --- generalization bound ----------------------------------------------------

def bound_coverage(trials=200, holdout=100, delta=0.1, steps_ratio=10, seed=0):
    """How often the squared risk gap exceeds the bound over fresh holdout draws."""
    spec = datamod.LinearTaskSpec(
        10, [datamod.LinearDomain(1.0, 1.0, 0.5), datamod.LinearDomain(4.0, 6.0, 0.5)], holdout)
    rng = np.random.default_rng(seed)
    theta = spec.theta_gt + rng.normal(0, 0.2, size=spec.dim)
    p = models.Params("linear", theta, spec.dim)
    state = MixtureState(spec.pi, weighting.normalize_loss_weights([1.4, 0.6], spec.pi), np.array([0.5, 0.5]))
    pop_spec = datamod.LinearTaskSpec(spec.dim, spec.domains, 10 * holdout)
    violations = 0
    for t in range(trials):
        hold = datamod.gen_linear(spec, seed + 1000 + 2 * t)
        pop = datamod.gen_linear(pop_spec, seed + 1001 + 2 * t)
        stats = weighting.stats_from_rows(p, [(ds.features, ds.labels) for ds in hold], need_grad_dispersion=False)
        pop_risk = float(sum(pi * models.batch_mean_loss(p, ds.features, ds.labels) for pi, ds in zip(spec.pi, pop)))
        hold_risk = metrics.weighted_holdout_risk(state, [models.losses(p, ds.features, ds.labels) for ds in hold])
        bound = metrics.bound_diagnostic(stats, state, [holdout] * 2, delta, steps_ratio, 1)
        violations += (pop_risk - hold_risk) ** 2 > bound
    allowed = delta * trials + 3.0 * math.sqrt(delta * (1 - delta) * trials)
    return [Check(f"bound violations in {trials} holdout redraws", violations, f"<= {allowed:.1f}", violations <= allowed)]


SUITES = {
    "aitken": aitken,
    "lemma1": lemma1,
    "thm2-trend": thm2_trend,
    "eq12-variance": eq12_variance,
    "gradcheck": gradcheck,
    "allocation-oracle": allocation_oracle,
}


def run_suite(name, seed=0):
    if name not in SUITES:
        raise UnknownSuite(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    fn = SUITES[name]
    if name == "allocation-oracle":
        return fn()
    return fn(seed=seed)
