"""Synthetic multi-domain tasks, MNIST IDX ingestion and holdout splits.

All randomness goes through ``numpy.random.Generator`` (PCG64) seeded from
``numpy.random.SeedSequence``, so a given ``(spec, seed)`` regenerates
bit-identical data on every platform numpy supports.
"""
import gzip
import math
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    EmptyPool,
    InvalidRho,
    SpecError,
    TruncatedFile,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
NUM_CLASSES = 10


def default_theta(dim):
    """Normalized all-ones ground-truth parameter."""
    return np.full(dim, 1.0 / math.sqrt(dim))


def _check_pi(pis):
    pis = np.asarray(pis, dtype=np.float64)
    if np.any(pis < 0) or abs(pis.sum() - 1.0) > 1e-12:
        raise SpecError(f"domain probabilities must be non-negative and sum to 1, got {pis.tolist()}")


@dataclass(frozen=True)
class LinearDomain:
    scale: float
    noise_var: float
    pi: float


@dataclass(frozen=True)
class LogisticDomain:
    scale: float
    flip_prob: float
    pi: float


@dataclass(frozen=True, eq=False)
class LinearTaskSpec:
    """Two-or-more-domain latent linear model ``y = theta_gt . x + eps``.

    Domain ``i`` draws ``x ~ N(0, scale_i I)`` and ``eps ~ N(0, noise_var_i)``.
    """

    dim: int
    domains: tuple
    samples_per_domain: int
    theta_gt: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        if self.theta_gt is None:
            object.__setattr__(self, "theta_gt", default_theta(self.dim))
        else:
            object.__setattr__(self, "theta_gt", np.asarray(self.theta_gt, dtype=np.float64))
        self.validate()

    def validate(self):
        if self.dim < 1 or self.samples_per_domain < 1:
            raise SpecError("dim and samples_per_domain must be positive")
        if not self.domains:
            raise SpecError("at least one domain is required")
        if self.theta_gt.shape != (self.dim,):
            raise SpecError(f"theta_gt must have length {self.dim}")
        for dom in self.domains:
            if dom.scale <= 0 or dom.noise_var < 0:
                raise SpecError(f"bad domain {dom}: scale must be > 0 and noise_var >= 0")
        _check_pi([d.pi for d in self.domains])

    @property
    def pi(self):
        return np.array([d.pi for d in self.domains])

    @property
    def noise_var(self):
        return np.array([d.noise_var for d in self.domains])


@dataclass(frozen=True, eq=False)
class LogisticTaskSpec:
    """Gaussian-feature logistic model with per-domain label flips."""

    dim: int
    domains: tuple
    samples_per_domain: int
    theta_gt: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        if self.theta_gt is None:
            object.__setattr__(self, "theta_gt", default_theta(self.dim))
        else:
            object.__setattr__(self, "theta_gt", np.asarray(self.theta_gt, dtype=np.float64))
        self.validate()

    def validate(self):
        if self.dim < 1 or self.samples_per_domain < 1:
            raise SpecError("dim and samples_per_domain must be positive")
        if not self.domains:
            raise SpecError("at least one domain is required")
        if self.theta_gt.shape != (self.dim,):
            raise SpecError(f"theta_gt must have length {self.dim}")
        for dom in self.domains:
            if dom.scale <= 0 or not 0.0 <= dom.flip_prob <= 1.0:
                raise SpecError(f"bad domain {dom}: scale must be > 0 and flip_prob in [0, 1]")
        _check_pi([d.pi for d in self.domains])

    @property
    def pi(self):
        return np.array([d.pi for d in self.domains])


@dataclass(frozen=True, eq=False)
class DomainDataset:
    """Rows of one domain plus a frozen train / holdout partition.

    ``train_indices`` and ``holdout_pool`` index into the rows of
    ``features``; they are disjoint and together cover every row.
    """

    domain_id: int
    features: np.ndarray
    labels: np.ndarray
    train_indices: np.ndarray = None
    holdout_pool: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape[0] != n:
            raise SpecError("features and labels disagree on row count")
        if self.train_indices is None:
            object.__setattr__(self, "train_indices", np.arange(n))
        if self.holdout_pool is None:
            object.__setattr__(self, "holdout_pool", np.zeros(0, dtype=np.int64))
        object.__setattr__(self, "train_indices", np.asarray(self.train_indices, dtype=np.int64))
        object.__setattr__(self, "holdout_pool", np.asarray(self.holdout_pool, dtype=np.int64))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def rows(self, idx):
        return self.features[idx], self.labels[idx]

    def pool(self, from_train):
        return self.train_indices if from_train else self.holdout_pool


def _domain_rngs(seed, k):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def gen_linear(spec, seed):
    """Draw ``samples_per_domain`` rows per domain from the linear task."""
    spec.validate()
    out = []
    for i, (dom, rng) in enumerate(zip(spec.domains, _domain_rngs(seed, len(spec.domains)))):
        x = rng.standard_normal((spec.samples_per_domain, spec.dim)) * math.sqrt(dom.scale)
        eps = rng.standard_normal(spec.samples_per_domain) * math.sqrt(dom.noise_var)
        out.append(DomainDataset(i, x, x @ spec.theta_gt + eps))
    return out


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z)))


def gen_logistic(spec, seed):
    """Draw rows with ``y ~ Bernoulli(sigmoid(theta_gt . x))`` then flip w.p. ``flip_prob``."""
    spec.validate()
    out = []
    for i, (dom, rng) in enumerate(zip(spec.domains, _domain_rngs(seed, len(spec.domains)))):
        n = spec.samples_per_domain
        x = rng.standard_normal((n, spec.dim)) * math.sqrt(dom.scale)
        y = (rng.random(n) < sigmoid(x @ spec.theta_gt)).astype(np.float64)
        flip = rng.random(n) < dom.flip_prob
        out.append(DomainDataset(i, x, np.where(flip, 1.0 - y, y)))
    return out


# --- IDX -------------------------------------------------------------------

def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, path):
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: missing IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header declares {ndim} dims but file is {len(raw)} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = math.prod(dims)
    if len(raw) - header < count:
        raise TruncatedFile(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx_images(path):
    return _parse_idx(_read_bytes(path), IDX_IMAGES_MAGIC, path)


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), IDX_LABELS_MAGIC, path)


def write_idx(path, array):
    """Write a uint8 array as IDX (3-D images or 1-D labels)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError("IDX writer supports 3-D image stacks and 1-D label vectors")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_mnist_idx(images_path, labels_path, domain_id=0):
    """Load an IDX image/label pair as one dataset; pixels scaled to ``[0, 1]``."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= NUM_CLASSES:
        raise ValueError(f"{labels_path}: label {labels.max()} outside 0..9")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return DomainDataset(domain_id, feats, labels.astype(np.int64))


def split_noisy_mnist(ds, flip_prob, seed):
    """Split rows 50/50 into a clean and a noisy domain.

    In the noisy half each label is, with probability ``flip_prob``, replaced
    by one of the other nine classes chosen uniformly.
    """
    if not 0.0 <= flip_prob <= 1.0:
        raise ValueError("flip_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    half = ds.n // 2
    clean_idx, noisy_idx = np.sort(perm[half:]), np.sort(perm[:half])
    noisy_labels = ds.labels[noisy_idx].copy()
    flip = rng.random(noisy_idx.size) < flip_prob
    shift = rng.integers(1, NUM_CLASSES, size=noisy_idx.size)
    noisy_labels[flip] = (noisy_labels[flip] + shift[flip]) % NUM_CLASSES
    clean = DomainDataset(0, ds.features[clean_idx], ds.labels[clean_idx].copy())
    noisy = DomainDataset(1, ds.features[noisy_idx], noisy_labels)
    return clean, noisy


def train_size(n, rho):
    # rounding guard so that e.g. 0.9 * 1000 does not ceil to 901
    return math.ceil(round(rho * n, 9))


def split(ds, rho, seed):
    """Uniform train / holdout partition with ``ceil(rho * n)`` training rows."""
    if not 0.0 < rho <= 1.0:
        raise InvalidRho(f"rho must lie in (0, 1], got {rho}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    k = train_size(ds.n, rho)
    return replace(ds, train_indices=np.sort(perm[:k]), holdout_pool=np.sort(perm[k:]))


def fixed_subset(ds, k, seed):
    """Reserve ``k`` uniformly chosen rows as a fixed estimation subset."""
    if not 1 <= k < ds.n:
        raise InvalidRho(f"fixed subset size must lie in [1, {ds.n}), got {k}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    return replace(ds, train_indices=np.sort(perm[k:]), holdout_pool=np.sort(perm[:k]))


def sample_batch(ds, from_train, count, rng):
    """Indices drawn uniformly with replacement from the train or holdout pool."""
    if count < 1:
        raise ValueError("count must be >= 1")
    pool = ds.pool(from_train)
    if pool.size == 0:
        raise EmptyPool(f"domain {ds.domain_id}: {'train' if from_train else 'holdout'} pool is empty")
    return pool[rng.integers(0, pool.size, size=count)]


# --- CSV -------------------------------------------------------------------

def write_datasets_csv(path, datasets, comments=()):
    """Serialize datasets as ``d`` on the first data row, then ``domain_id, x..., label`` rows."""
    dims = {ds.dim for ds in datasets}
    if len(dims) != 1:
        raise SpecError("all datasets must share the feature dimension")
    (d,) = dims
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(f"{d}\n")
        for ds in datasets:
            block = np.column_stack([np.full(ds.n, ds.domain_id), ds.features, ds.labels])
            np.savetxt(fh, block, delimiter=",", fmt=["%d"] + ["%.17g"] * (d + 1))
    os.replace(tmp, path)


def read_datasets_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    d = int(lines[0])
    body = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    if body.shape[1] != d + 2:
        raise SpecError(f"{path}: expected {d + 2} columns, found {body.shape[1]}")
    out = []
    for dom in np.unique(body[:, 0]).astype(int):
        rows = body[body[:, 0] == dom]
        out.append(DomainDataset(int(dom), rows[:, 1:-1].copy(), rows[:, -1].copy()))
    return out


def export_bundled_mnist(out_dir, test_fraction=0.2, seed=0):
    """Write the 5000-row MNIST subset shipped with ``mlxtend`` as IDX files.

    Produces ``train-images-idx3-ubyte``/``train-labels-idx1-ubyte`` and the
    matching ``t10k-*`` pair, stratified by class. Needs the ``mnist`` extra.
    Returns the name of the source used.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:
        raise ImportError("exporting the bundled MNIST subset needs mlxtend: pip install 'mixweights[mnist]'") from exc
    x, y = mnist_data()
    images = x.reshape(-1, 28, 28).astype(np.uint8)
    source = "mlxtend-mnist-5k"
    y = np.asarray(y, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(y.size, dtype=bool)
    for c in range(NUM_CLASSES):
        idx = np.flatnonzero(y == c)
        test_mask[rng.choice(idx, size=int(round(test_fraction * idx.size)), replace=False)] = True
    os.makedirs(out_dir, exist_ok=True)
    for prefix, mask in (("train", ~test_mask), ("t10k", test_mask)):
        order = rng.permutation(np.flatnonzero(mask))
        write_idx(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), images[order])
        write_idx(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), y[order])
    return source
