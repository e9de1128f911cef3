"""Evaluation quantities: parameter distances, accuracy and the holdout-gap bound."""
import math
from dataclasses import dataclass

import numpy as np

from . import models
from .errors import EmptyTestSet, ZeroVector


@dataclass(frozen=True)
class MetricReport:
    l2_distance: float = None
    cosine_distance: float = None
    accuracy: float = None
    bound_value: float = None


def l2_distance(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def cosine_distance(a, b):
    """``1 - a.b / (|a| |b|)``, clipped into ``[0, 2]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine distance needs two non-zero vectors")
    return float(np.clip(1.0 - (a @ b) / (na * nb), 0.0, 2.0))


def accuracy(p, x, y):
    """Fraction of rows whose predicted class equals the label."""
    if len(y) == 0:
        raise EmptyTestSet("test set is empty")
    return float(np.mean(models.predict(p, x) == np.asarray(y).astype(np.int64)))


def bound_diagnostic(stats, state, holdout_sizes, delta, steps, update_interval):
    """Variance-based bound on the squared gap between population and holdout risk.

    ``2 (sum_i pi_i (1 - w_i) L_i)^2
    + 16 K ln(K T / (delta T0)) sum_i pi_i^2 w_i^2 Var_i / |V_i|``
    evaluated at the estimated per-domain mean losses and loss variances.
    """
    pi, w = state.pi, state.w
    k = pi.size
    sizes = np.asarray(holdout_sizes, dtype=np.float64)
    bias = 2.0 * float(np.sum(pi * (1.0 - w) * stats.mean_loss)) ** 2
    log_term = math.log(k * steps / (delta * update_interval))
    var = 16.0 * k * log_term * float(np.sum(pi**2 * w**2 * stats.loss_var / sizes))
    return bias + var


def weighted_holdout_risk(state, holdout_losses):
    """``sum_i pi_i w_i mean(holdout losses of domain i)``."""
    return float(sum(pi * w * np.mean(l) for pi, w, l in zip(state.pi, state.w, holdout_losses)))
