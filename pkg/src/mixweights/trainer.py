"""Mixed-domain SGD with pluggable loss-weight and sampling-weight schedules."""
import datetime
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as datamod
from . import models, weighting
from .errors import EmptyBatch, LossUnderflow, ShapeMismatch, SpecError
from .weighting import MixtureState, SchedulerConfig

STRATEGIES = (
    "vanilla",
    "va",
    "aitken_fixed",
    "aitken_fixed+va",
    "one_shot_fgls",
    "one_shot_fgls+va",
    "erma",
    "erma+va",
    "combined_single_weight",
)
HOLDOUT_MODES = ("split", "fixed_subset", "stream")


def _parts(strategy):
    loss_rule = strategy.split("+")[0]
    uses_va = strategy.endswith("+va") or strategy == "va"
    return loss_rule, uses_va


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 5e-5
    batch: int = 64
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    strategy: str = "vanilla"
    seed: int = 0
    eval_every: int = None
    holdout_mode: str = "split"
    rho: float = 0.9
    fixed_subset_size: int = 100

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SpecError(f"unknown strategy {self.strategy!r}")
        if self.holdout_mode not in HOLDOUT_MODES:
            raise SpecError(f"unknown holdout mode {self.holdout_mode!r}")
        if self.steps < 1 or self.lr <= 0 or self.batch < 1:
            raise SpecError("steps and batch must be >= 1 and lr > 0")
        if self.eval_every is not None and self.eval_every < 1:
            raise SpecError("eval_every must be >= 1")

    @property
    def log_every(self):
        return self.eval_every if self.eval_every is not None else max(1, self.steps // 100)

    def to_dict(self):
        out = asdict(self)
        out["eval_every"] = self.log_every
        return out


@dataclass
class RunTrace:
    """Per-step log of metrics, loss weights ``w`` and sampling fractions ``b``."""

    K: int
    metric_names: tuple
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    allocations: list = field(default_factory=list)
    final_params: models.Params = None

    @property
    def columns(self):
        return (
            ["step", *self.metric_names]
            + [f"w_{i + 1}" for i in range(self.K)]
            + [f"b_{i + 1}" for i in range(self.K)]
            + ["flags"]
        )

    def log(self, step, metrics, state, flags):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError("trace steps must be strictly increasing")
        values = [metrics[name] for name in self.metric_names]
        self.rows.append((step, *values, *state.w, *state.b, "|".join(sorted(flags))))

    def column(self, name):
        j = self.columns.index(name)
        return np.array([row[j] for row in self.rows])

    def last(self, name):
        return self.rows[-1][self.columns.index(name)]

    def to_csv(self, path):
        """Write the trace atomically; the ``# created:`` line is the only non-deterministic one."""
        tmp = f"{path}.tmp"
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        with open(tmp, "w", newline="") as fh:
            fh.write("# mixweights run trace\n")
            fh.write(f"# created: {stamp}\n")
            fh.write(f"# config: {json.dumps(self.meta, sort_keys=True)}\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                cells = [str(row[0])] + [_fmt(v) for v in row[1:-1]] + [row[-1]]
                fh.write(",".join(cells) + "\n")
        os.replace(tmp, path)


def _fmt(v):
    return format(float(v), ".12g")


def read_trace_csv(path):
    """Parse a trace CSV into ``(meta, columns, rows)`` with numeric cells as floats."""
    meta, columns, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# config: "):
                meta = json.loads(line[len("# config: "):])
            elif line.startswith("#") or not line:
                continue
            elif columns is None:
                columns = line.split(",")
            else:
                cells = line.split(",")
                rows.append([int(cells[0])] + [float(c) for c in cells[1:-1]] + [cells[-1]])
    return meta, columns, rows


def weighted_gradient(p, batches, state, loss_weights=None):
    """Mixed-batch gradient ``sum_i pi_i w_i mean_{z in B_i} grad l(theta, z)``.

    ``batches`` is one ``(x, y)`` pair per domain. With ``sum_i pi_i w_i = 1``
    this coincides with the explicitly normalized form.
    """
    w = state.w if loss_weights is None else loss_weights
    xs, ys, coef = [], [], []
    for i, (x, y) in enumerate(batches):
        n = len(y)
        if n == 0:
            raise EmptyBatch(f"domain {i}: empty batch")
        xs.append(x)
        ys.append(y)
        coef.append(np.full(n, state.pi[i] * w[i] / n))
    _, grad = models.weighted_loss_grad(p, np.vstack(xs), np.concatenate(ys), np.concatenate(coef))
    return grad


def sgd_step(p, g, lr):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != p.theta.shape:
        raise ShapeMismatch(f"gradient of shape {g.shape} for params of shape {p.theta.shape}")
    return p.with_theta(p.theta - lr * g)


class _Stream:
    """Shuffled per-domain index stream; reshuffles when exhausted."""

    def __init__(self, pool, rng):
        self.pool = pool
        self.rng = rng
        self.order = rng.permutation(pool)
        self.pos = 0

    def _ensure(self, count):
        if self.pos + count > self.order.size:
            rest = self.order[self.pos:]
            self.order = np.concatenate([rest, self.rng.permutation(self.pool)])
            self.pos = 0

    def peek(self, count):
        count = min(count, self.pool.size)
        self._ensure(count)
        return self.order[self.pos:self.pos + count]

    def take(self, count):
        self._ensure(count)
        out = self.order[self.pos:self.pos + count]
        self.pos += count
        return out


def _prepare(datasets, cfg, rng):
    if cfg.holdout_mode == "split":
        return [datamod.split(ds, cfg.rho, int(rng.integers(2**31))) for ds in datasets]
    if cfg.holdout_mode == "fixed_subset":
        return [datamod.fixed_subset(ds, cfg.fixed_subset_size, int(rng.integers(2**31))) for ds in datasets]
    return [datamod.DomainDataset(ds.domain_id, ds.features, ds.labels) for ds in datasets]


def train(datasets, kind, cfg, pi, evaluator, noise_var=None, init=None):
    """Run ``cfg.steps`` of mixed-domain SGD and return the :class:`RunTrace`.

    Args:
        datasets: one :class:`DomainDataset` per domain.
        kind: model kind (``linear``, ``logistic`` or ``mlp``).
        cfg: :class:`TrainConfig`.
        pi: population weights of the domains.
        evaluator: callable ``params -> {metric: value}``; the first key is the
            primary metric.
        noise_var: true label-noise variances, required by the ``aitken_fixed``
            strategies.
        init: optional starting :class:`Params`.
    """
    pi = np.asarray(pi, dtype=np.float64)
    k = len(datasets)
    if pi.size != k:
        raise SpecError("one population weight per domain is required")
    if cfg.batch < k:
        raise SpecError(f"batch {cfg.batch} smaller than the number of domains {k}")
    sched = cfg.scheduler
    loss_rule, uses_va = _parts(cfg.strategy)
    split_rng, batch_rng, est_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    sets = _prepare(datasets, cfg, split_rng)
    dim = sets[0].dim
    p = init if init is not None else models.init_params(kind, dim, cfg.seed)

    state = MixtureState.uniform(pi)
    if loss_rule == "aitken_fixed":
        if noise_var is None:
            raise SpecError("aitken_fixed needs the true noise variances")
        state = weighting.with_loss_weights(state, weighting.normalize_loss_weights(1.0 / np.asarray(noise_var), pi))
    b_min = sched.floor_fraction(k)
    counts = weighting._largest_remainder(np.full(k, cfg.batch / k), cfg.batch)
    state = weighting.with_allocation(state, counts)
    shadow_w = state.w.copy()  # ERMA weights for the combined single-weight strategy
    va_frac = state.b.copy()

    streams = [_Stream(ds.train_indices, batch_rng) for ds in sets] if cfg.holdout_mode == "stream" else None
    warmup = int(math.floor(sched.warmup_fraction * cfg.steps))
    holdout_size = [max(1, round((1.0 - cfg.rho) * sched.update_interval / cfg.steps * ds.n)) for ds in sets]

    def estimation_rows(for_loss):
        rows = []
        for i, ds in enumerate(sets):
            if streams is not None:
                idx = streams[i].peek(sched.estimation_batch)
            elif for_loss and cfg.holdout_mode == "fixed_subset":
                idx = ds.holdout_pool
            else:
                if for_loss and loss_rule == "one_shot_fgls":
                    pool, size = ds.holdout_pool, holdout_size[i]
                else:
                    pool = ds.holdout_pool if for_loss else ds.train_indices
                    size = sched.estimation_batch
                idx = pool if pool.size <= size else est_rng.choice(pool, size, replace=False)
            rows.append(ds.rows(idx))
        return rows

    trace = RunTrace(k, (), meta={"model": kind, **cfg.to_dict()})
    flags = set()

    def record(step):
        metrics = evaluator(p)
        if not trace.metric_names:
            trace.metric_names = tuple(metrics)
        trace.log(step, metrics, state, flags)
        flags.clear()

    record(0)
    for t in range(cfg.steps):
        batches = []
        for i, ds in enumerate(sets):
            c = int(counts[i])
            idx = streams[i].take(c) if streams is not None else datamod.sample_batch(ds, True, c, batch_rng)
            batches.append(ds.rows(idx))
        p = sgd_step(p, weighted_gradient(p, batches, state), cfg.lr)

        active = t >= warmup
        if active and loss_rule in ("one_shot_fgls", "erma", "combined_single_weight") and (
            t % sched.update_interval == sched.update_interval - 1
        ):
            need_var = loss_rule != "one_shot_fgls"
            stats = weighting.stats_from_rows(p, estimation_rows(True), need_grad_dispersion=False) if need_var else None
            if loss_rule == "one_shot_fgls":
                losses = np.array([models.batch_mean_loss(p, x, y) for x, y in estimation_rows(True)])
                try:
                    w_new = weighting.one_shot_fgls_step(state.w, losses, sched.gamma, pi)
                except LossUnderflow:
                    flags.add("underflow")
                    w_new = weighting.one_shot_fgls_step(
                        state.w, np.maximum(losses, weighting.LOSS_FLOOR), sched.gamma, pi)
                state = weighting.with_loss_weights(state, w_new)
            else:
                cur = state if loss_rule == "erma" else weighting.with_loss_weights(state, shadow_w)
                expo = weighting.erma_exponent(cur, stats, sched.gamma1, sched.gamma2)
                if np.any(np.abs(expo) > weighting.EXPONENT_CLIP):
                    flags.add("clamp")
                w_new = weighting.erma_step(cur, stats, sched.gamma1, sched.gamma2)
                if loss_rule == "erma":
                    state = weighting.with_loss_weights(state, w_new)
                else:
                    shadow_w = w_new
                    counts = _single_weight_counts(shadow_w, va_frac, cfg.batch, b_min)
                    state = weighting.with_allocation(state, counts)

        if active and (uses_va or loss_rule == "combined_single_weight") and (
            t % sched.va_interval == sched.va_interval - 1
        ):
            stats = weighting.stats_from_rows(p, estimation_rows(False), need_grad_dispersion=True)
            va_counts = weighting.va_allocate(pi, state.w, stats.grad_dispersion, cfg.batch, b_min)
            if loss_rule == "combined_single_weight":
                va_frac = va_counts / cfg.batch
                counts = _single_weight_counts(shadow_w, va_frac, cfg.batch, b_min)
            else:
                counts = va_counts
            if np.any(counts == weighting.floor_count(b_min, cfg.batch, k)):
                flags.add("floor")
            state = weighting.with_allocation(state, counts)
            trace.allocations.append((t + 1, stats, state.w.copy(), counts.copy()))

        if (t + 1) % cfg.log_every == 0 or t + 1 == cfg.steps:
            record(t + 1)
    trace.final_params = p
    return trace


def _single_weight_counts(erma_w, va_frac, batch, b_min):
    frac = weighting.combined_single_weight(erma_w, va_frac)
    k = frac.size
    m = weighting.floor_count(b_min, batch, k)
    cont = weighting._waterfill(frac, batch, m)
    return weighting._largest_remainder(cont, batch)
