import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import tomli

from mixweights import experiments, models, trainer
from mixweights.errors import ConfigError, GridMismatch

GOLDEN = Path(__file__).parent / "golden" / "presets.toml"


def small(name, steps=60, replicates=2, **task):
    cfg = experiments.with_replicates(experiments.with_steps(experiments.preset(name), steps), replicates)
    if task:
        cfg = replace(cfg, task=replace(cfg.task, **task))
    return cfg


def test_preset_dump_matches_golden():
    assert experiments.dump_presets() == GOLDEN.read_text()


def test_fig1_top_settings():
    cfg = experiments.preset("fig1-top", full_scale=True)
    assert cfg.task.dim == 1000
    assert cfg.task.scales == (100.0, 1.0) and cfg.task.noise_var == (1.0, 20.0) and cfg.task.pi == (0.5, 0.5)
    assert cfg.train.lr == 5e-5 and cfg.train.scheduler.gamma == 1.0
    assert cfg.methods == ("vanilla", "va", "aitken_fixed", "aitken_fixed+va", "one_shot_fgls", "one_shot_fgls+va")
    assert cfg.train.scheduler.warmup_fraction == 0.2
    assert experiments.preset("fig1-top").task.dim == 100


def test_fig2_bottom_settings():
    cfg = experiments.preset("fig2-bottom")
    assert cfg.task.kind == "logistic" and cfg.task.scales == (10.0, 100.0)
    assert cfg.task.flip_prob == (0.0, 0.2) and cfg.train.lr == 1e-4
    s = cfg.train.scheduler
    assert (s.gamma1, s.gamma2) == (0.01, 0.05)
    assert "erma" in cfg.methods and "vanilla" in cfg.methods


def test_other_preset_settings():
    pcs = {n: experiments.preset(n) for n in experiments.PRESETS}
    assert pcs["fig1-bottom"].task.scales == (1.0, 100.0)
    assert pcs["fig2-top"].task.scales == (100.0, 100.0)
    assert pcs["fig4-top"].task.noise_var == (1.0, 1.0) and pcs["fig4-bottom"].task.scales == (1.0, 1.0)
    mn = pcs["fig3"]
    assert mn.train.steps == 500 and mn.task.flip_prob[1] == 0.2 and mn.train.scheduler.warmup_fraction == 0.0
    assert models.HIDDEN == 100
    assert pcs["fig5-top"].primary_metric == "accuracy"
    assert "combined_single_weight" in pcs["ablation"].methods
    assert experiments.preset("fig3", full_scale=True).task.dim == 784
    with pytest.raises(ConfigError):
        experiments.preset("fig9")


@pytest.mark.parametrize("name", list(experiments.PRESETS))
def test_toml_round_trip(name):
    cfg = experiments.preset(name)
    assert experiments.from_dict(tomli.loads(experiments.to_toml(cfg))) == cfg


def _doc(**changes):
    doc = tomli.loads(experiments.to_toml(experiments.preset("fig2-top")))
    for dotted, value in changes.items():
        keys = dotted.split("__")
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return doc


@pytest.mark.parametrize(
    "changes, key",
    [
        ({"methods": ["vanilla", "ermaa"]}, "methods[1]"),
        ({"train__step": 10}, "train.step"),
        ({"scheduler__gamma": "one"}, "scheduler.gamma"),
        ({"task__kind": "vision"}, "task.kind"),
        ({"task__scales": [1.0]}, "task.scales"),
        ({"replicates": 0}, "replicates"),
        ({"colour": 1}, "colour"),
        ({"overrides": {"va": {"lr": "fast"}}}, "overrides.va.lr"),
        ({"overrides": {"erma+va": {"gamma1": 0.1}}}, "overrides.erma+va"),
        ({"train__batch": 1.5}, "train.batch"),
        ({"scheduler__gamma": 2.0}, "scheduler"),
    ],
)
def test_config_errors_name_the_key(changes, key):
    doc = _doc(**changes)
    if key == "overrides.erma+va":
        doc["methods"] = ["vanilla", "va"]
    with pytest.raises(ConfigError) as exc:
        experiments.from_dict(doc)
    assert exc.value.key == key
    assert key in str(exc.value)


def test_missing_required_keys():
    doc = _doc()
    del doc["name"]
    with pytest.raises(ConfigError) as exc:
        experiments.from_dict(doc)
    assert exc.value.key == "name"


def test_overrides_apply_per_method():
    doc = _doc(overrides={"erma": {"gamma1": 0.5, "lr": 0.01}})
    cfg = experiments.from_dict(doc)
    m = cfg.method_config("erma", 7)
    assert m.scheduler.gamma1 == 0.5 and m.lr == 0.01 and m.seed == 7 and m.strategy == "erma"
    assert cfg.method_config("va", 7).lr == 1e-4


def test_load_config_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(experiments.to_toml(experiments.preset("fig1-top")))
    assert experiments.resolve(str(path)) == experiments.preset("fig1-top")
    assert experiments.resolve(str(path), full_scale=True).task.dim == 1000
    bad = tmp_path / "bad.toml"
    bad.write_text("name = [")
    with pytest.raises(ConfigError):
        experiments.load_config(str(bad))


def test_replicate_seeds_distinct():
    seeds = [experiments.replicate_seeds(0, r) for r in range(5)]
    flat = [s for trio in seeds for s in trio]
    assert len(set(flat)) == len(flat)
    assert experiments.replicate_seeds(3, 2) == experiments.replicate_seeds(5, 0)


def test_run_writes_traces_and_summary(tmp_path):
    cfg = small("fig2-top", samples_per_domain=300, test_samples_per_domain=100)
    res = experiments.run(cfg, str(tmp_path), keep_traces=True)
    for m in cfg.methods:
        for r in range(2):
            assert (tmp_path / experiments.trace_name(m, r)).exists()
    summ = experiments.read_summary(tmp_path / "summary.csv")
    mean, se, n = summ[("erma", "cosine")]
    vals = res.values("erma", "cosine")
    assert n == 2 and mean == pytest.approx(vals.mean()) and se == pytest.approx(vals.std(ddof=1) / np.sqrt(2))
    meta, _, _ = trainer.read_trace_csv(tmp_path / experiments.trace_name("erma", 1))
    assert meta["experiment"] == "fig2-top" and meta["replicate"] == 1
    assert meta["train"]["lr"] == 1e-4 and meta["task"]["flip_prob"] == [0.0, 0.2]


def test_methods_share_datasets_within_replicate(tmp_path):
    cfg = small("fig1-top", samples_per_domain=300)
    a = experiments.build_replicate(cfg, 0)
    b = experiments.build_replicate(cfg, 0)
    c = experiments.build_replicate(cfg, 1)
    assert np.array_equal(a.datasets[0].features, b.datasets[0].features)
    assert not np.array_equal(a.datasets[0].features, c.datasets[0].features)


def test_emit_plotdata(tmp_path):
    cfg = small("fig2-bottom", samples_per_domain=300, test_samples_per_domain=100)
    experiments.run(cfg, str(tmp_path))
    path = experiments.emit_plotdata(str(tmp_path), "fig2-bottom")
    lines = Path(path).read_text().splitlines()
    assert lines[1] == "method,step,series,value"
    _, cols, rows0 = trainer.read_trace_csv(tmp_path / experiments.trace_name("va", 0))
    _, _, rows1 = trainer.read_trace_csv(tmp_path / experiments.trace_name("va", 1))
    series = cols[1:-1]
    assert len(lines) - 2 == len(cfg.methods) * len(series) * len(rows0)
    j = series.index("w_1")
    want = {f"va,{r0[0]},w_1,{(r0[1 + j] + r1[1 + j]) / 2:.12g}" for r0, r1 in zip(rows0, rows1)}
    assert want <= set(lines)


def test_emit_plotdata_single_trace_pass_through(tmp_path):
    cfg = replace(small("fig1-top", samples_per_domain=300, replicates=1), methods=("va",))
    experiments.run(cfg, str(tmp_path))
    out = experiments.emit_plotdata(str(tmp_path), "fig1-top", str(tmp_path / "p.csv"))
    _, cols, rows = trainer.read_trace_csv(tmp_path / experiments.trace_name("va", 0))
    got = [ln.split(",") for ln in Path(out).read_text().splitlines()[2:]]
    for s, name in enumerate(cols[1:-1]):
        vals = [float(v) for m, st, ser, v in got if ser == name]
        assert vals == [row[1 + s] for row in rows]


def test_emit_plotdata_grid_mismatch(tmp_path):
    cfg = replace(small("fig1-top", samples_per_domain=300, replicates=1), methods=("vanilla",))
    experiments.run(cfg, str(tmp_path))
    other = replace(cfg, methods=("va",), train=replace(cfg.train, eval_every=7))
    experiments.run(other, str(tmp_path))
    with pytest.raises(GridMismatch):
        experiments.emit_plotdata(str(tmp_path), "fig1-top")
    with pytest.raises(FileNotFoundError):
        experiments.emit_plotdata(str(tmp_path), "fig3")


def test_generate_csv(tmp_path):
    cfg = small("fig1-top", samples_per_domain=20, replicates=2)
    paths = experiments.generate(cfg, str(tmp_path))
    assert [os.path.basename(p) for p in paths] == ["fig1-top_r0.csv", "fig1-top_r1.csv"]
    from mixweights import data
    back = data.read_datasets_csv(paths[1])
    rep = experiments.build_replicate(cfg, 1)
    assert np.array_equal(back[0].features, rep.datasets[0].features)


def test_mnist_dir_resolution(monkeypatch, tmp_path):
    task = experiments.preset("fig3").task
    monkeypatch.delenv(experiments.MNIST_ENV, raising=False)
    with pytest.raises(ConfigError) as exc:
        experiments.mnist_dir(task)
    assert exc.value.key == "task.mnist_dir"
    monkeypatch.setenv(experiments.MNIST_ENV, str(tmp_path))
    assert experiments.mnist_dir(task) == str(tmp_path)
    assert experiments.mnist_dir(replace(task, mnist_dir="/x")) == "/x"


def test_mnist_replicate(mnist_dir):
    cfg = experiments.preset("fig3")
    cfg = replace(cfg, task=replace(cfg.task, mnist_dir=mnist_dir))
    rep = experiments.build_replicate(cfg, 0)
    clean, noisy = rep.datasets
    assert clean.dim == 784 and abs(clean.n - noisy.n) <= 1
    assert rep.kind == "mlp"
    vals = rep.evaluator(models.init_params("mlp", 784, seed=0))
    assert set(vals) == {"accuracy", "clean_accuracy", "noisy_accuracy"}
    assert 0.0 <= vals["accuracy"] <= 0.3
