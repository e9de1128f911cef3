"""Adaptive domain weights: One-shot FGLS, ERMA and variance-aware allocation.

Loss weights ``w`` are kept on the scale ``sum_i pi_i w_i = 1`` after every
update and sampling allocations ``b`` are fractions of the batch summing to
one. With that convention the mixed-batch gradient needs no extra
normalizing prefactor.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

from . import models
from .errors import BatchTooSmall, EmptyPool, LossUnderflow, SpecError

LOSS_FLOOR = 1e-10
EXPONENT_CLIP = 30.0


@dataclass(frozen=True, eq=False)
class MixtureState:
    pi: np.ndarray
    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("pi", "w", "b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.pi.shape == self.w.shape == self.b.shape) or self.pi.ndim != 1:
            raise SpecError("pi, w and b must be vectors of equal length")

    @property
    def K(self):
        return self.pi.size

    @classmethod
    def uniform(cls, pi):
        pi = np.asarray(pi, dtype=np.float64)
        k = pi.size
        return cls(pi, np.full(k, 1.0 / pi.sum()), np.full(k, 1.0 / k))

    def check(self, tol_w=1e-9, tol_b=1e-12):
        """Raise if the normalization invariants do not hold."""
        if abs(self.pi.sum() - 1.0) > 1e-12 or abs(self.b.sum() - 1.0) > tol_b:
            raise SpecError(f"pi or b not normalized: {self.pi}, {self.b}")
        if np.any(self.w <= 0) or np.any(self.b <= 0):
            raise SpecError(f"weights must stay positive: w={self.w}, b={self.b}")
        if abs(float(self.pi @ self.w) - 1.0) > tol_w:
            raise SpecError(f"sum(pi * w) = {self.pi @ self.w}, expected 1")
        return self


@dataclass(frozen=True, eq=False)
class DomainStats:
    mean_loss: np.ndarray
    loss_var: np.ndarray
    grad_dispersion: np.ndarray
    sample_count: np.ndarray


@dataclass(frozen=True)
class SchedulerConfig:
    gamma: float = 1.0
    gamma1: float = 0.01
    gamma2: float = 0.05
    update_interval: int = 50
    va_interval: int = 50
    estimation_batch: int = 100
    warmup_fraction: float = 0.2
    b_min: float = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise SpecError("gamma must lie in [0, 1]")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise SpecError("gamma1 and gamma2 must be non-negative")
        if min(self.update_interval, self.va_interval, self.estimation_batch) < 1:
            raise SpecError("intervals and estimation batch must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise SpecError("warmup_fraction must lie in [0, 1)")
        if self.b_min is not None and not 0.0 < self.b_min < 1.0:
            raise SpecError("b_min must lie in (0, 1)")

    def floor_fraction(self, k):
        return 1.0 / (4 * k) if self.b_min is None else self.b_min


def normalize_loss_weights(w, pi):
    w = np.asarray(w, dtype=np.float64)
    return w / float(np.dot(pi, w))


def one_shot_fgls_step(w_old, holdout_mean_loss, gamma, pi):
    """Blend the old weights with reciprocal holdout losses, then renormalize.

    Raises LossUnderflow if any holdout mean loss is below ``LOSS_FLOOR``;
    the caller may clamp the losses and retry.
    """
    loss = np.asarray(holdout_mean_loss, dtype=np.float64)
    low = np.flatnonzero(loss < LOSS_FLOOR)
    if low.size:
        raise LossUnderflow(f"holdout mean loss below {LOSS_FLOOR:g} in domains {low.tolist()}", low)
    raw = (1.0 - gamma) * np.asarray(w_old, dtype=np.float64) + gamma / loss
    return normalize_loss_weights(raw, pi)


def coupling_term(state, mean_loss):
    """``sum_j pi_j (1 - w_j) L_j``, the bias term driving the ERMA update."""
    return float(np.sum(state.pi * (1.0 - state.w) * mean_loss))


def erma_exponent(state, stats, gamma1, gamma2):
    """Unclipped mirror-descent exponent for every domain."""
    g = coupling_term(state, stats.mean_loss)
    return gamma1 * state.pi * g * stats.mean_loss - gamma2 * state.pi * state.w * stats.loss_var


def erma_step(state, stats, gamma1, gamma2):
    """Multiplicative (KL mirror-descent) loss-weight update.

    The exponent is clipped to ``[-30, 30]``; use :func:`erma_exponent` to
    detect when clipping happened.
    """
    e = np.clip(erma_exponent(state, stats, gamma1, gamma2), -EXPONENT_CLIP, EXPONENT_CLIP)
    return normalize_loss_weights(state.w * np.exp(e - e.max()), state.pi)


def va_objective(pi, w, v, counts):
    """Mixed-batch gradient variance ``sum_i pi_i^2 w_i^2 v_i^2 / b_i``."""
    a = np.asarray(pi) * np.asarray(w) * np.asarray(v)
    return float(np.sum(a**2 / np.asarray(counts, dtype=np.float64)))


def floor_count(b_min, batch, k):
    """Smallest per-domain count implied by a fractional floor ``b_min``."""
    m = max(1, math.ceil(round(b_min * batch, 9)))
    return min(m, batch // k)


def _largest_remainder(x, total):
    base = np.floor(x).astype(np.int64)
    rem = x - base
    short = total - int(base.sum())
    # stable sort keeps lower domain index first on ties
    order = np.argsort(-rem, kind="stable")
    base[order[:short]] += 1
    return base


def _waterfill(a, batch, m):
    """Continuous minimizer of sum a_i^2 / b_i with b_i >= m and sum b_i = batch."""
    b = np.full(a.size, float(m))
    free = a > 0
    while free.any():
        budget = batch - m * np.count_nonzero(~free)
        lam = budget / a[free].sum()
        prop = lam * a
        newly = free & (prop < m)
        if not newly.any():
            b[free] = prop[free]
            return b
        free &= ~newly
    return b


def va_allocate(pi, w, v, batch, b_min):
    """Integer batch counts minimizing the mixed-batch gradient variance.

    Counts start from the allocation proportional to ``pi_i w_i v_i``
    (floored at ``b_min * batch`` and rounded by largest remainder) and are
    then polished by unit exchanges until no move lowers
    :func:`va_objective`; for this separable convex objective that local
    optimum is the integer optimum.
    """
    pi = np.asarray(pi, dtype=np.float64)
    a = pi * np.asarray(w, dtype=np.float64) * np.asarray(v, dtype=np.float64)
    k = a.size
    if batch < k:
        raise BatchTooSmall(f"batch of {batch} cannot cover {k} domains")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise SpecError("pi, w and v must be finite and non-negative")
    m = floor_count(b_min, batch, k)
    if not np.any(a > 0):
        return _largest_remainder(np.full(k, batch / k), batch)
    counts = _largest_remainder(_waterfill(a, batch, m), batch)
    a2 = a**2
    while True:
        gain_add = a2 / counts - a2 / (counts + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            loss_rm = np.where(counts > m, a2 / (counts - 1) - a2 / counts, np.inf)
        i = int(np.argmax(gain_add))
        j = int(np.argmin(np.where(np.arange(k) == i, np.inf, loss_rm)))
        if i == j or not gain_add[i] - loss_rm[j] > 1e-12 * (a2 / counts).sum():
            return counts
        counts[i] += 1
        counts[j] -= 1


def combined_single_weight(erma_w, va_b):
    """Merge loss and sampling weights into one normalized sampling vector."""
    prod = np.asarray(erma_w, dtype=np.float64) * np.asarray(va_b, dtype=np.float64)
    return prod / prod.sum()


def stats_from_rows(p, rows, need_grad_dispersion=True):
    """Per-domain loss mean, unbiased loss variance and gradient dispersion.

    ``rows`` holds one ``(x, y)`` pair of arrays per domain. The dispersion is
    the root mean squared deviation of per-sample gradients from their batch
    mean.
    """
    k = len(rows)
    mean_loss, loss_var, disp, count = (np.zeros(k) for _ in range(4))
    for i, (x, y) in enumerate(rows):
        if len(y) < 2:
            raise EmptyPool(f"domain {i}: need at least two estimation rows, got {len(y)}")
        if need_grad_dispersion:
            vals, sq = models.grad_dispersion(p, x, y)
            disp[i] = math.sqrt(sq)
        else:
            vals = models.losses(p, x, y)
        mean_loss[i] = vals.mean()
        loss_var[i] = vals.var(ddof=1)
        count[i] = len(y)
    return DomainStats(mean_loss, loss_var, disp, count)


def estimate_domain_stats(p, datasets, estimation_batch, rng, need_grad_dispersion=True, from_train=False):
    """Estimate :class:`DomainStats` from a fresh batch per domain.

    Each domain contributes ``estimation_batch`` rows drawn without
    replacement from its holdout pool (or training pool), or the whole pool
    when it is smaller.
    """
    if estimation_batch < 2:
        raise ValueError("estimation_batch must be >= 2")
    rows = []
    for ds in datasets:
        pool = ds.pool(from_train)
        if pool.size == 0:
            raise EmptyPool(f"domain {ds.domain_id}: estimation pool is empty")
        idx = pool if pool.size <= estimation_batch else rng.choice(pool, estimation_batch, replace=False)
        rows.append(ds.rows(idx))
    return stats_from_rows(p, rows, need_grad_dispersion)


def with_loss_weights(state, w):
    return replace(state, w=np.asarray(w, dtype=np.float64))


def with_allocation(state, counts):
    counts = np.asarray(counts, dtype=np.float64)
    return replace(state, b=counts / counts.sum())
