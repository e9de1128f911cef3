"""Per-sample losses and exact gradients for linear, logistic and MLP models.

Parameters always travel as one flat float64 vector. For the MLP the vector
packs ``W1 (d x h)``, ``b1 (h)``, ``W2 (h x c)``, ``b2 (c)`` in that order,
each matrix row-major.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import EmptyBatch, ShapeMismatch

KINDS = ("linear", "logistic", "mlp")
HIDDEN = 100
CLASSES = 10


def n_params(kind, dim, hidden=HIDDEN, classes=CLASSES):
    if kind in ("linear", "logistic"):
        return dim
    if kind == "mlp":
        return dim * hidden + hidden + hidden * classes + classes
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Params:
    kind: str
    theta: np.ndarray
    dim: int
    hidden: int = HIDDEN
    classes: int = CLASSES

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 1 or theta.size != n_params(self.kind, self.dim, self.hidden, self.classes):
            raise ShapeMismatch(f"{self.kind} params of dim {self.dim} cannot hold a vector of shape {theta.shape}")
        object.__setattr__(self, "theta", theta)

    def with_theta(self, theta):
        return Params(self.kind, theta, self.dim, self.hidden, self.classes)

    def unpack(self):
        """Views ``(W1, b1, W2, b2)`` into ``theta`` (MLP only)."""
        d, h, c = self.dim, self.hidden, self.classes
        t = self.theta
        o1 = d * h
        o2 = o1 + h
        o3 = o2 + h * c
        return t[:o1].reshape(d, h), t[o1:o2], t[o2:o3].reshape(h, c), t[o3:]


@dataclass(frozen=True)
class SampleLoss:
    value: float
    grad: np.ndarray


def init_params(kind, dim, seed=0, hidden=HIDDEN, classes=CLASSES):
    """Zero init for linear/logistic; MLP weights ~ U(+-1/sqrt(fan_in)), zero biases.

    The uniform bound is ``sqrt(3 / fan_in)`` so the weight standard deviation
    equals ``1 / sqrt(fan_in)``.
    """
    if kind in ("linear", "logistic"):
        return Params(kind, np.zeros(dim), dim)
    if kind != "mlp":
        raise ValueError(f"unknown model kind {kind!r}")
    rng = np.random.default_rng(seed)
    w1 = rng.uniform(-1.0, 1.0, size=(dim, hidden)) * math.sqrt(3.0 / dim)
    w2 = rng.uniform(-1.0, 1.0, size=(hidden, classes)) * math.sqrt(3.0 / hidden)
    theta = np.concatenate([w1.ravel(), np.zeros(hidden), w2.ravel(), np.zeros(classes)])
    return Params("mlp", theta, dim, hidden, classes)


def _check_batch(p, x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.dim:
        raise ShapeMismatch(f"expected rows of length {p.dim}, got array of shape {x.shape}")
    y = np.asarray(y)
    if y.shape != (x.shape[0],):
        raise ShapeMismatch(f"{x.shape[0]} rows but labels of shape {y.shape}")
    if x.shape[0] == 0:
        raise EmptyBatch("batch has no rows")
    return x, y


def _mlp_forward(p, x):
    w1, b1, w2, b2 = p.unpack()
    pre = x @ w1 + b1
    hid = np.maximum(pre, 0.0)
    return pre, hid, hid @ w2 + b2


def losses(p, x, y):
    """Per-sample loss values for a batch of rows."""
    x, y = _check_batch(p, x, y)
    if p.kind == "linear":
        return (x @ p.theta - y) ** 2
    if p.kind == "logistic":
        z = x @ p.theta
        return np.logaddexp(0.0, z) - y * z
    _, _, logits = _mlp_forward(p, x)
    yi = y.astype(np.int64)
    return logsumexp(logits, axis=1) - logits[np.arange(len(yi)), yi]


def _backward(p, x, y):
    """Per-sample loss plus the factors that make up each per-sample gradient."""
    if p.kind == "linear":
        r = x @ p.theta - y
        return r**2, 2.0 * r
    if p.kind == "logistic":
        z = x @ p.theta
        return np.logaddexp(0.0, z) - y * z, 0.5 * (1.0 + np.tanh(0.5 * z)) - y
    w1, b1, w2, b2 = p.unpack()
    pre, hid, logits = _mlp_forward(p, x)
    yi = y.astype(np.int64)
    rows = np.arange(len(yi))
    value = logsumexp(logits, axis=1) - logits[rows, yi]
    dlogits = softmax(logits, axis=1)
    dlogits[rows, yi] -= 1.0
    dpre = (dlogits @ w2.T) * (pre > 0)
    return value, (hid, dlogits, dpre)


def weighted_loss_grad(p, x, y, row_weights):
    """``(sum_r c_r l_r, sum_r c_r grad l_r)`` for per-row coefficients ``c``."""
    x, y = _check_batch(p, x, y)
    c = np.asarray(row_weights, dtype=np.float64)
    value, factors = _backward(p, x, y)
    if p.kind in ("linear", "logistic"):
        return float(c @ value), x.T @ (c * factors)
    hid, dlogits, dpre = factors
    cd = c[:, None] * dlogits
    cp = c[:, None] * dpre
    grad = np.concatenate([(x.T @ cp).ravel(), cp.sum(0), (hid.T @ cd).ravel(), cd.sum(0)])
    return float(c @ value), grad


def mean_loss_grad(p, x, y):
    n = np.asarray(x).shape[0]
    if n == 0:
        raise EmptyBatch("batch has no rows")
    return weighted_loss_grad(p, x, y, np.full(n, 1.0 / n))


def per_sample_grads(p, x, y):
    """Per-sample gradients as an ``(n, n_params)`` array, plus the loss values."""
    x, y = _check_batch(p, x, y)
    value, factors = _backward(p, x, y)
    if p.kind in ("linear", "logistic"):
        return value, factors[:, None] * x
    hid, dlogits, dpre = factors
    n = x.shape[0]
    grads = np.concatenate(
        [
            (x[:, :, None] * dpre[:, None, :]).reshape(n, -1),
            dpre,
            (hid[:, :, None] * dlogits[:, None, :]).reshape(n, -1),
            dlogits,
        ],
        axis=1,
    )
    return value, grads


def grad_dispersion(p, x, y):
    """Per-sample losses and ``mean_j ||g_j - mean_k g_k||^2`` over the batch.

    Linear and logistic models deviate explicitly from the batch mean. For the
    MLP every block of a per-sample gradient is an outer product, so the
    squared deviations follow from row Gram matrices without materializing
    the ``(n, n_params)`` gradient array.
    """
    x, y = _check_batch(p, x, y)
    if p.kind in ("linear", "logistic"):
        value, grads = per_sample_grads(p, x, y)
        dev = grads - grads.mean(axis=0)
        return value, float(np.mean(np.einsum("ij,ij->i", dev, dev)))
    value, (hid, dlogits, dpre) = _backward(p, x, y)
    one = np.ones((x.shape[0], 1))
    gram = (x @ x.T + 1.0) * (dpre @ dpre.T) + (hid @ hid.T + 1.0) * (dlogits @ dlogits.T)
    n = x.shape[0]
    sq = float(np.trace(gram) / n - (one.T @ gram @ one).item() / n**2)
    return value, max(sq, 0.0)


def loss_grad(p, x, y):
    """Loss and exact gradient for a single sample ``(x, y)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch("loss_grad takes a single feature vector")
    value, grad = weighted_loss_grad(p, x[None, :], np.asarray([y]), np.ones(1))
    return SampleLoss(value, grad)


def batch_mean_loss(p, x, y):
    """Arithmetic mean of the per-sample losses."""
    return float(np.mean(losses(p, x, y)))


def predict(p, x):
    """Class predictions; logistic thresholds at 0.5, MLP takes the first argmax."""
    x = np.asarray(x, dtype=np.float64)
    if p.kind == "logistic":
        return (x @ p.theta >= 0.0).astype(np.int64)
    if p.kind == "mlp":
        return np.argmax(_mlp_forward(p, x)[2], axis=1)
    raise ValueError("predict is defined for classifiers only")
