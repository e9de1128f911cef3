"""Closed-form estimators for the latent linear model and Monte Carlo helpers.

Every solve goes through :func:`mixweights.linalg.solve_spd`, so rank
deficiency (e.g. more features than rows) surfaces as NotPositiveDefinite.
"""
from dataclasses import dataclass

import numpy as np

from . import data as datamod
from .errors import DegenerateVariance, LossUnderflow, SpecError
from .linalg import as_matrix, as_vector, solve_spd

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class WeightedDesign:
    X: np.ndarray
    y: np.ndarray
    row_domain: np.ndarray
    per_row_weight: np.ndarray

    def __post_init__(self):
        X = as_matrix(self.X)
        y = as_vector(self.y)
        dom = np.asarray(self.row_domain, dtype=np.int64)
        w = as_vector(self.per_row_weight)
        if not (X.shape[0] == y.size == dom.size == w.size):
            raise SpecError("design, labels, domains and weights must have one entry per row")
        if np.any(w <= 0):
            raise SpecError("per-row weights must be positive")
        if np.any(dom < 0):
            raise SpecError("row domains must be non-negative indices")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "row_domain", dom)
        object.__setattr__(self, "per_row_weight", w)

    @classmethod
    def from_domain_weights(cls, X, y, row_domain, domain_weights):
        row_domain = np.asarray(row_domain, dtype=np.int64)
        return cls(X, y, row_domain, np.asarray(domain_weights, dtype=np.float64)[row_domain])


def stack(datasets, which="all"):
    """Concatenate domain rows into ``(X, y, row_domain)``.

    ``which`` selects all rows, only ``"train"`` rows or only ``"holdout"`` rows.
    """
    xs, ys, ds = [], [], []
    for ds_ in datasets:
        if which == "all":
            idx = slice(None)
            n = ds_.n
        else:
            idx = ds_.pool(which == "train")
            n = idx.size
        xs.append(ds_.features[idx])
        ys.append(ds_.labels[idx])
        ds.append(np.full(n, ds_.domain_id))
    return np.vstack(xs), np.concatenate(ys), np.concatenate(ds)


def wls(X, y, row_weights):
    """Weighted least squares ``(X^T W X)^{-1} X^T W y`` for diagonal ``W``."""
    X = as_matrix(X)
    y = as_vector(y)
    w = as_vector(row_weights)
    Xw = X * w[:, None]
    return solve_spd(X.T @ Xw, Xw.T @ y)


def ols(X, y):
    X = as_matrix(X)
    return solve_spd(X.T @ X, X.T @ as_vector(y))


def gls(wd):
    """GLS solution for a design carrying its own per-row weights."""
    return wls(wd.X, wd.y, wd.per_row_weight)


def normalize_weights(w, pi):
    """Rescale loss weights so that ``sum_i pi_i w_i == 1``."""
    w = np.asarray(w, dtype=np.float64)
    return w / float(np.dot(pi, w))


@dataclass(frozen=True, eq=False)
class FGLSResult:
    theta: np.ndarray
    sigma_hat: np.ndarray
    w_hat: np.ndarray


def fgls(X, y, row_domain, pi=None):
    """Feasible GLS: OLS residual variances per domain, then one weighted pass.

    ``w_hat`` is normalized so that ``sum_i pi_i w_hat_i = 1``; ``pi``
    defaults to the row share of each domain.
    """
    X = as_matrix(X)
    y = as_vector(y)
    row_domain = np.asarray(row_domain, dtype=np.int64)
    k = int(row_domain.max()) + 1
    counts = np.bincount(row_domain, minlength=k)
    if np.any(counts < 2):
        raise SpecError("every domain needs at least two rows")
    resid2 = (X @ ols(X, y) - y) ** 2
    sigma_hat = np.bincount(row_domain, weights=resid2, minlength=k) / counts
    if np.any(sigma_hat < VARIANCE_FLOOR):
        raise DegenerateVariance(f"residual variance below {VARIANCE_FLOOR:g}: {sigma_hat.tolist()}")
    pi = counts / counts.sum() if pi is None else np.asarray(pi, dtype=np.float64)
    w_hat = normalize_weights(1.0 / sigma_hat, pi)
    return FGLSResult(wls(X, y, w_hat[row_domain]), sigma_hat, w_hat)


def one_shot_fgls_exact(datasets, pi, rho, n_updates, gamma=1.0, seed=0):
    """One-shot FGLS with each inner optimization solved exactly.

    Every phase between weight updates is replaced by the weighted ERM
    solution on the training split, which is the regime where the SGD
    tracking error vanishes. Each update draws a fresh holdout batch of
    ``max(1, round(M |S_i|))`` rows, ``M = (1 - rho) / n_updates``, without
    replacement from the holdout pool.

    Returns ``(theta, w, split_datasets)``.
    """
    rng = np.random.default_rng(seed)
    split_sets = [datamod.split(ds, rho, int(rng.integers(2**31))) for ds in datasets]
    X, y, dom = stack(split_sets, "train")
    pi = np.asarray(pi, dtype=np.float64)
    w = np.ones(len(split_sets))
    theta = wls(X, y, w[dom])
    m = (1.0 - rho) / n_updates
    for _ in range(n_updates):
        mean_loss = np.empty(len(split_sets))
        for i, ds in enumerate(split_sets):
            size = min(max(1, round(m * ds.n)), ds.holdout_pool.size)
            idx = rng.choice(ds.holdout_pool, size=size, replace=False)
            xh, yh = ds.rows(idx)
            mean_loss[i] = np.mean((xh @ theta - yh) ** 2)
        if np.any(mean_loss < 1e-10):
            raise LossUnderflow("holdout loss underflow", np.flatnonzero(mean_loss < 1e-10))
        w = normalize_weights((1.0 - gamma) * w + gamma / mean_loss, pi)
        theta = wls(X, y, w[dom])
    return theta, w, split_sets


# --- Monte Carlo ------------------------------------------------------------

def ols_estimator(datasets, spec):
    X, y, _ = stack(datasets)
    return ols(X, y)


def weighted_estimator(domain_weights):
    """Estimator that solves WLS with fixed per-domain weights."""
    domain_weights = np.asarray(domain_weights, dtype=np.float64)

    def estimate(datasets, spec):
        X, y, dom = stack(datasets)
        return wls(X, y, domain_weights[dom])

    return estimate


def true_gls_estimator(datasets, spec):
    return weighted_estimator(1.0 / spec.noise_var)(datasets, spec)


def fgls_estimator(datasets, spec):
    X, y, dom = stack(datasets)
    return fgls(X, y, dom, spec.pi).theta


def mc_squared_errors(estimators, spec, replicates, seed):
    """Squared errors ``||theta_hat - theta_gt||^2`` per replicate.

    All estimators see the same dataset in a given replicate (replicate
    ``r`` uses seed ``seed + r``). Returns ``{name: array(replicates)}``.
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    out = {name: np.empty(replicates) for name in estimators}
    for r in range(replicates):
        datasets = datamod.gen_linear(spec, seed + r)
        for name, est in estimators.items():
            out[name][r] = float(np.sum((est(datasets, spec) - spec.theta_gt) ** 2))
    return out


def mean_stderr(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def mc_estimator_mse(estimator, spec, replicates, seed):
    """Monte Carlo MSE of ``estimator`` over fresh datasets, with its standard error."""
    errs = mc_squared_errors({"est": estimator}, spec, replicates, seed)["est"]
    return mean_stderr(errs)


def ratio_stderr(num, den):
    """Ratio of means ``mean(num) / mean(den)`` with a delta-method standard error.

    ``num`` and ``den`` are paired per replicate, so their covariance enters.
    """
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    n = num.size
    a, b = num.mean(), den.mean()
    ratio = a / b
    cov = np.cov(num, den, ddof=1)
    var = (cov[0, 0] - 2 * ratio * cov[0, 1] + ratio**2 * cov[1, 1]) / (b**2 * n)
    return float(ratio), float(np.sqrt(max(var, 0.0)))
