"""Declarative experiment configs, figure presets, replicated runs and tidy CSV output.

A config is a TOML document::

    name = "fig1-top"
    seed = 0
    replicates = 5
    methods = ["vanilla", "va"]

    [task]          # kind = linear | logistic | mnist, plus task scalars
    [train]         # TrainConfig scalars shared by every method
    [scheduler]     # SchedulerConfig scalars shared by every method
    [overrides.va]  # optional per-method replacements of train/scheduler keys

Replicate ``r`` uses seed ``seed + r``; its data, training and auxiliary
(test set, label flips) streams are spawned from that one integer.
"""
import datetime
import glob
import json
import os
from dataclasses import MISSING, dataclass, field, fields, replace

import numpy as np
import tomli
import tomli_w

from . import data as datamod
from . import metrics, trainer
from .errors import ConfigError, GridMismatch
from .estimators import mean_stderr
from .trainer import STRATEGIES, TrainConfig
from .weighting import SchedulerConfig

TASK_KINDS = ("linear", "logistic", "mnist")
MNIST_ENV = "MIXWEIGHTS_MNIST_DIR"
FULL_DIM = 1000
LINEAR_METHODS = ["vanilla", "va", "aitken_fixed", "aitken_fixed+va", "one_shot_fgls", "one_shot_fgls+va"]
ERMA_METHODS = ["vanilla", "va", "erma", "erma+va"]
ABLATION_METHODS = ["vanilla", "erma+va", "combined_single_weight"]


@dataclass(frozen=True)
class TaskConfig:
    kind: str
    dim: int = 100
    samples_per_domain: int = 5000
    scales: tuple = (1.0, 1.0)
    noise_var: tuple = (1.0, 1.0)
    flip_prob: tuple = (0.0, 0.0)
    pi: tuple = (0.5, 0.5)
    test_samples_per_domain: int = 1000
    metric: str = ""
    mnist_dir: str = ""

    def metric_names(self):
        if self.kind == "linear":
            return ("l2",)
        if self.kind == "logistic":
            return ("accuracy", "cosine") if self.metric == "accuracy" else ("cosine", "accuracy")
        return ("accuracy", "clean_accuracy", "noisy_accuracy")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    task: TaskConfig
    methods: tuple
    train: TrainConfig
    overrides: dict = field(default_factory=dict)
    replicates: int = 5
    seed: int = 0
    out: str = ""

    def method_config(self, method, seed):
        """Effective TrainConfig for ``method`` at training seed ``seed``."""
        over = dict(self.overrides.get(method, {}))
        sched_keys = {f.name for f in fields(SchedulerConfig)}
        sched = replace(self.train.scheduler, **{k: v for k, v in over.items() if k in sched_keys})
        rest = {k: v for k, v in over.items() if k not in sched_keys}
        return replace(self.train, scheduler=sched, strategy=method, seed=int(seed), **rest)

    @property
    def primary_metric(self):
        return self.task.metric_names()[0]


# --- presets ----------------------------------------------------------------

def _linear_preset(name, scales, noise_var):
    steps = 700
    return ExperimentConfig(
        name=name,
        task=TaskConfig("linear", scales=scales, noise_var=noise_var),
        methods=tuple(LINEAR_METHODS),
        train=TrainConfig(
            steps=steps,
            lr=5e-5,
            batch=6,
            holdout_mode="fixed_subset",
            fixed_subset_size=100,
            scheduler=SchedulerConfig(
                gamma=1.0, update_interval=steps // 50, va_interval=steps // 50, estimation_batch=100
            ),
        ),
    )


def _logistic_preset(name, scales, methods=ERMA_METHODS, metric="cosine"):
    steps = 2000
    return ExperimentConfig(
        name=name,
        task=TaskConfig("logistic", scales=scales, flip_prob=(0.0, 0.2), metric=metric),
        methods=tuple(methods),
        train=TrainConfig(
            steps=steps,
            lr=1e-4,
            batch=32,
            holdout_mode="split",
            rho=0.9,
            scheduler=SchedulerConfig(
                gamma1=0.01, gamma2=0.05, update_interval=steps // 50, va_interval=steps // 50, estimation_batch=100
            ),
        ),
    )


def _mnist_preset():
    return ExperimentConfig(
        name="fig3",
        task=TaskConfig("mnist", dim=784, samples_per_domain=0, scales=(1.0, 1.0), flip_prob=(0.0, 0.2)),
        methods=tuple(ERMA_METHODS),
        train=TrainConfig(
            steps=500,
            lr=0.05,
            batch=64,
            holdout_mode="stream",
            scheduler=SchedulerConfig(
                gamma1=0.01, gamma2=0.05, update_interval=10, va_interval=10, estimation_batch=64, warmup_fraction=0.0
            ),
        ),
    )


PRESETS = {
    "fig1-top": lambda: _linear_preset("fig1-top", (100.0, 1.0), (1.0, 20.0)),
    "fig1-bottom": lambda: _linear_preset("fig1-bottom", (1.0, 100.0), (1.0, 20.0)),
    "fig2-top": lambda: _logistic_preset("fig2-top", (100.0, 100.0)),
    "fig2-bottom": lambda: _logistic_preset("fig2-bottom", (10.0, 100.0)),
    "fig3": _mnist_preset,
    "fig4-top": lambda: _linear_preset("fig4-top", (100.0, 1.0), (1.0, 1.0)),
    "fig4-bottom": lambda: _linear_preset("fig4-bottom", (1.0, 1.0), (1.0, 20.0)),
    "fig5-top": lambda: _logistic_preset("fig5-top", (100.0, 100.0), metric="accuracy"),
    "fig5-bottom": lambda: _logistic_preset("fig5-bottom", (10.0, 100.0), metric="accuracy"),
    "ablation": lambda: _logistic_preset("ablation", (10.0, 100.0), methods=ABLATION_METHODS),
}


def preset(name, full_scale=False):
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]()
    return at_full_scale(cfg) if full_scale else cfg


def at_full_scale(cfg):
    """Restore the full feature dimension for the synthetic tasks."""
    if cfg.task.kind == "mnist":
        return cfg
    return replace(cfg, task=replace(cfg.task, dim=FULL_DIM))


def dump_presets():
    """All presets as one TOML document, keyed by preset name."""
    return tomli_w.dumps({name: to_dict(PRESETS[name]()) for name in PRESETS})


# --- TOML <-> config --------------------------------------------------------

def _drop_none(d):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items() if v is not None and v != ""}


def to_dict(cfg):
    train = {f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig) if f.name not in ("scheduler", "strategy", "seed")}
    task = {f.name: getattr(cfg.task, f.name) for f in fields(TaskConfig)}
    out = {
        "name": cfg.name,
        "seed": cfg.seed,
        "replicates": cfg.replicates,
        "methods": list(cfg.methods),
        "task": _drop_none(task),
        "train": _drop_none(train),
        "scheduler": _drop_none({f.name: getattr(cfg.train.scheduler, f.name) for f in fields(SchedulerConfig)}),
    }
    if cfg.out:
        out["out"] = cfg.out
    if cfg.overrides:
        out["overrides"] = {m: dict(v) for m, v in cfg.overrides.items()}
    return out


def to_toml(cfg):
    return tomli_w.dumps(to_dict(cfg))


_FLOAT = (int, float)


def _coerce(key, value, proto):
    """Check ``value`` against the type of the default ``proto``."""
    if isinstance(proto, bool) or isinstance(value, bool):
        raise ConfigError(key, "booleans are not accepted here")
    if isinstance(proto, tuple):
        if not isinstance(value, list) or not all(isinstance(v, _FLOAT) and not isinstance(v, bool) for v in value):
            raise ConfigError(key, "expected a list of numbers")
        return tuple(float(v) for v in value)
    if isinstance(proto, str):
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value
    if isinstance(proto, int) and not isinstance(proto, bool):
        if not isinstance(value, int):
            raise ConfigError(key, "expected an integer")
        return value
    if isinstance(proto, float):
        if not isinstance(value, _FLOAT):
            raise ConfigError(key, "expected a number")
        return float(value)
    return value


def _field_proto(cls, name):
    default = {f.name: f.default for f in fields(cls)}[name]
    if default is MISSING:
        return ""
    if default is None:
        # the optional scalars: eval_every (count) and b_min (fraction)
        return 1 if name == "eval_every" else 1.0
    return default


def _table(raw, prefix, classes):
    """Coerce a TOML table whose keys must be fields of one of ``classes``."""
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a table")
    allowed = {}
    for cls, skip in classes:
        for f in fields(cls):
            if f.name not in skip:
                allowed.setdefault(f.name, cls)
    out = {}
    for k, v in raw.items():
        if k not in allowed:
            raise ConfigError(f"{prefix}.{k}", f"unknown key; expected one of {sorted(allowed)}")
        out[k] = _coerce(f"{prefix}.{k}", v, _field_proto(allowed[k], k))
    return out


_TRAIN_SKIP = ("scheduler", "strategy", "seed")
_TOP_KEYS = {"name", "seed", "replicates", "methods", "out", "task", "train", "scheduler", "overrides"}


def from_dict(doc):
    """Validate a parsed TOML document and build an :class:`ExperimentConfig`."""
    for k in doc:
        if k not in _TOP_KEYS:
            raise ConfigError(k, f"unknown top-level key; expected one of {sorted(_TOP_KEYS)}")
    for k in ("name", "task", "methods"):
        if k not in doc:
            raise ConfigError(k, "required key is missing")
    name = _coerce("name", doc["name"], "")
    seed = _coerce("seed", doc.get("seed", 0), 0)
    reps = _coerce("replicates", doc.get("replicates", 5), 0)
    if reps < 1:
        raise ConfigError("replicates", "must be >= 1")
    methods = doc["methods"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "expected a non-empty list of strategy names")
    for i, m in enumerate(methods):
        if m not in STRATEGIES:
            raise ConfigError(f"methods[{i}]", f"unknown method {m!r}; expected one of {list(STRATEGIES)}")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods", "duplicate method names")

    task_kw = _table(doc["task"], "task", [(TaskConfig, ())])
    if "kind" not in task_kw:
        raise ConfigError("task.kind", "required key is missing")
    if task_kw["kind"] not in TASK_KINDS:
        raise ConfigError("task.kind", f"expected one of {list(TASK_KINDS)}")
    task = TaskConfig(**task_kw)
    if task.metric not in ("", "cosine", "accuracy"):
        raise ConfigError("task.metric", "expected 'cosine' or 'accuracy'")
    k = len(task.pi)
    for key in ("scales", "noise_var", "flip_prob"):
        if len(getattr(task, key)) != k:
            raise ConfigError(f"task.{key}", f"expected {k} entries, one per domain")

    sched_kw = _table(doc.get("scheduler", {}), "scheduler", [(SchedulerConfig, ())])
    train_kw = _table(doc.get("train", {}), "train", [(TrainConfig, _TRAIN_SKIP)])
    try:
        sched = SchedulerConfig(**sched_kw)
    except ValueError as exc:
        raise ConfigError("scheduler", str(exc)) from None
    try:
        train = TrainConfig(scheduler=sched, **train_kw)
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None

    overrides = {}
    raw_over = doc.get("overrides", {})
    if not isinstance(raw_over, dict):
        raise ConfigError("overrides", "expected a table of per-method tables")
    for m, table in raw_over.items():
        if m not in methods:
            raise ConfigError(f"overrides.{m}", "override for a method that is not listed in methods")
        overrides[m] = _table(table, f"overrides.{m}", [(SchedulerConfig, ()), (TrainConfig, _TRAIN_SKIP)])
    cfg = ExperimentConfig(name, task, tuple(methods), train, overrides, reps, seed, doc.get("out", ""))
    for m in methods:
        try:
            cfg.method_config(m, 0)
        except ValueError as exc:
            raise ConfigError(f"overrides.{m}", str(exc)) from None
    return cfg


def load_config(path):
    with open(path, "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(os.path.basename(path), f"not valid TOML: {exc}") from None
    return from_dict(doc)


def resolve(spec, full_scale=False):
    """Load a config from a file path, or fall back to a preset name."""
    if os.path.exists(spec):
        cfg = load_config(spec)
        return at_full_scale(cfg) if full_scale else cfg
    return preset(spec, full_scale)


# --- replicate construction -------------------------------------------------

def replicate_seeds(seed, r):
    """``(data, train, aux)`` integer seeds for replicate ``r``."""
    state = np.random.SeedSequence(seed + r).generate_state(3)
    return tuple(int(s) for s in state)


def linear_spec(task):
    doms = [datamod.LinearDomain(c, s, p) for c, s, p in zip(task.scales, task.noise_var, task.pi)]
    return datamod.LinearTaskSpec(task.dim, doms, task.samples_per_domain)


def logistic_spec(task, samples=None):
    doms = [datamod.LogisticDomain(c, f, p) for c, f, p in zip(task.scales, task.flip_prob, task.pi)]
    return datamod.LogisticTaskSpec(task.dim, doms, samples or task.samples_per_domain)


def mnist_dir(task):
    path = task.mnist_dir or os.environ.get(MNIST_ENV, "")
    if not path:
        raise ConfigError("task.mnist_dir", f"no MNIST directory given and ${MNIST_ENV} is unset")
    return path


def _idx_file(directory, stem):
    for name in (stem, stem + ".gz"):
        full = os.path.join(directory, name)
        if os.path.exists(full):
            return full
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist_pair(directory):
    train = datamod.load_mnist_idx(
        _idx_file(directory, "train-images-idx3-ubyte"), _idx_file(directory, "train-labels-idx1-ubyte"))
    test = datamod.load_mnist_idx(
        _idx_file(directory, "t10k-images-idx3-ubyte"), _idx_file(directory, "t10k-labels-idx1-ubyte"))
    return train, test


@dataclass
class Replicate:
    datasets: list
    evaluator: object
    pi: np.ndarray
    noise_var: np.ndarray = None
    kind: str = "linear"


def build_replicate(cfg, r, mnist_cache=None):
    """Datasets and evaluator for replicate ``r``; all methods of a replicate share them."""
    task = cfg.task
    data_seed, _, aux_seed = replicate_seeds(cfg.seed, r)
    pi = np.asarray(task.pi, dtype=np.float64)
    names = task.metric_names()
    if task.kind == "linear":
        spec = linear_spec(task)
        theta = spec.theta_gt

        def evaluate(p):
            return {"l2": metrics.l2_distance(p.theta, theta)}

        return Replicate(datamod.gen_linear(spec, data_seed), evaluate, pi, spec.noise_var, "linear")

    if task.kind == "logistic":
        spec = logistic_spec(task)
        test = datamod.gen_logistic(logistic_spec(task, task.test_samples_per_domain), aux_seed)
        theta = spec.theta_gt

        def evaluate(p):
            cos = metrics.cosine_distance(p.theta, theta) if np.any(p.theta) else 1.0
            acc = float(sum(w * metrics.accuracy(p, ds.features, ds.labels) for w, ds in zip(pi, test)))
            vals = {"cosine": cos, "accuracy": acc}
            return {n: vals[n] for n in names}

        return Replicate(datamod.gen_logistic(spec, data_seed), evaluate, pi, None, "logistic")

    if mnist_cache is not None and "pair" in mnist_cache:
        train_full, test_full = mnist_cache["pair"]
    else:
        train_full, test_full = load_mnist_pair(mnist_dir(task))
        if mnist_cache is not None:
            mnist_cache["pair"] = (train_full, test_full)
    flip = task.flip_prob[1]
    clean, noisy = datamod.split_noisy_mnist(train_full, flip, data_seed)
    test = datamod.split_noisy_mnist(test_full, flip, aux_seed)

    def evaluate(p):
        accs = [metrics.accuracy(p, ds.features, ds.labels) for ds in test]
        return {"accuracy": float(pi @ accs), "clean_accuracy": accs[0], "noisy_accuracy": accs[1]}

    return Replicate([clean, noisy], evaluate, pi, None, "mlp")


# --- running ----------------------------------------------------------------

@dataclass
class RunResult:
    """Final values per method and series, one entry per replicate."""

    config: ExperimentConfig
    finals: dict
    out_dir: str
    traces: dict = field(default_factory=dict)

    def values(self, method, series):
        return np.asarray(self.finals[method][series])

    def summary(self, method, series):
        vals = self.values(method, series)
        if vals.size < 2:
            return float(vals.mean()), 0.0
        return mean_stderr(vals)


def trace_name(method, r):
    return f"trace_{method.replace('+', '-')}_r{r}.csv"


def _stamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def run(cfg, out_dir=None, keep_traces=False, progress=None):
    """Run every (method, replicate) pair; write trace CSVs and ``summary.csv``."""
    out_dir = out_dir or cfg.out or os.path.join("runs", cfg.name)
    os.makedirs(out_dir, exist_ok=True)
    finals = {m: {} for m in cfg.methods}
    traces = {}
    cache = {}
    cfg_dict = to_dict(cfg)
    for r in range(cfg.replicates):
        rep = build_replicate(cfg, r, cache)
        data_seed, train_seed, aux_seed = replicate_seeds(cfg.seed, r)
        for j, method in enumerate(cfg.methods):
            mcfg = cfg.method_config(method, train_seed)
            tr = trainer.train(rep.datasets, rep.kind, mcfg, rep.pi, rep.evaluator, noise_var=rep.noise_var)
            tr.meta = {
                "experiment": cfg.name,
                "method": method,
                "method_index": j,
                "replicate": r,
                "seeds": {"data": data_seed, "train": train_seed, "aux": aux_seed},
                "task": cfg_dict["task"],
                "train": tr.meta,
            }
            tr.to_csv(os.path.join(out_dir, trace_name(method, r)))
            for name in tr.columns[1:-1]:
                finals[method].setdefault(name, []).append(float(tr.last(name)))
            if keep_traces:
                traces[(method, r)] = tr
            if progress:
                progress(method, r, tr)
    result = RunResult(cfg, finals, out_dir, traces)
    write_summary(result, os.path.join(out_dir, "summary.csv"))
    return result


def write_summary(result, path):
    cfg = result.config
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write("# mixweights run summary\n")
        fh.write(f"# created: {_stamp()}\n")
        fh.write(f"# config: {json.dumps(to_dict(cfg), sort_keys=True)}\n")
        fh.write("method,series,mean,stderr,replicates\n")
        for method in cfg.methods:
            for series, vals in result.finals[method].items():
                vals = np.asarray(vals)
                mean = float(vals.mean())
                se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
                fh.write(f"{method},{series},{mean:.12g},{se:.12g},{vals.size}\n")
    os.replace(tmp, path)


def read_summary(path):
    out = {}
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    for ln in lines[1:]:
        method, series, mean, se, n = ln.split(",")
        out[(method, series)] = (float(mean), float(se), int(n))
    return out


# --- plot data --------------------------------------------------------------

def emit_plotdata(run_dir, figure, out_path=None):
    """Long-format ``method,step,series,value`` CSV averaged over replicates.

    Reads every trace CSV in ``run_dir`` whose experiment is ``figure``.
    All traces must share one step grid, otherwise GridMismatch is raised.
    """
    paths = sorted(glob.glob(os.path.join(run_dir, "trace_*.csv")))
    loaded = []
    for path in paths:
        meta, columns, rows = trainer.read_trace_csv(path)
        if meta.get("experiment") == figure:
            loaded.append((meta, columns, rows, path))
    if not loaded:
        raise FileNotFoundError(f"no traces for {figure!r} in {run_dir}")
    grid = [row[0] for row in loaded[0][2]]
    series = loaded[0][1][1:-1]
    by_method = {}
    for meta, columns, rows, path in loaded:
        if [row[0] for row in rows] != grid:
            raise GridMismatch(f"{os.path.basename(path)} logs a different step grid than {os.path.basename(loaded[0][3])}")
        if columns[1:-1] != series:
            raise GridMismatch(f"{os.path.basename(path)} has different series columns")
        key = (meta.get("method_index", 0), meta["method"])
        by_method.setdefault(key, []).append(np.array([row[1:-1] for row in rows], dtype=np.float64))
    out_path = out_path or os.path.join(run_dir, f"plotdata_{figure}.csv")
    tmp = f"{out_path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(f"# mixweights plot data for {figure}, mean over replicates\n")
        fh.write("method,step,series,value\n")
        for (_, method), arrays in sorted(by_method.items()):
            mean = np.mean(arrays, axis=0)
            for s, name in enumerate(series):
                for i, step in enumerate(grid):
                    fh.write(f"{method},{step},{name},{mean[i, s]:.12g}\n")
    os.replace(tmp, out_path)
    return out_path


# --- dataset materialization -------------------------------------------------

def generate(cfg, out_dir):
    """Write each replicate's synthetic datasets to CSV (or export MNIST IDX files)."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if cfg.task.kind == "mnist":
        datamod.export_bundled_mnist(out_dir)
        return sorted(glob.glob(os.path.join(out_dir, "*-ubyte")))
    for r in range(cfg.replicates):
        rep = build_replicate(cfg, r)
        path = os.path.join(out_dir, f"{cfg.name}_r{r}.csv")
        seeds = replicate_seeds(cfg.seed, r)
        datamod.write_datasets_csv(
            path, rep.datasets, comments=(f"experiment: {cfg.name}", f"replicate: {r}", f"data seed: {seeds[0]}"))
        written.append(path)
    return written


def with_replicates(cfg, n):
    return replace(cfg, replicates=int(n))


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))


def with_steps(cfg, steps):
    """Shorter (or longer) variant keeping the update cadence at ``steps // 50``."""
    sched = cfg.train.scheduler
    if cfg.task.kind != "mnist":
        sched = replace(sched, update_interval=max(1, steps // 50), va_interval=max(1, steps // 50))
    return replace(cfg, train=replace(cfg.train, steps=int(steps), scheduler=sched))
