import itertools

import numpy as np
import pytest

from mixweights import data, metrics, models, trainer, weighting
from mixweights.errors import EmptyBatch, ShapeMismatch, SpecError
from mixweights.trainer import TrainConfig
from mixweights.weighting import MixtureState, SchedulerConfig


def linear_task(n=400, dim=8, scales=(4.0, 1.0), noise=(1.0, 20.0), seed=0):
    spec = data.LinearTaskSpec(dim, [data.LinearDomain(c, s, 0.5) for c, s in zip(scales, noise)], n)
    return spec, data.gen_linear(spec, seed)


def l2_eval(spec):
    return lambda p: {"l2": metrics.l2_distance(p.theta, spec.theta_gt)}


def run(strategy, steps=200, batch=8, seed=0, holdout="split", **sched):
    spec, sets = linear_task()
    sc = SchedulerConfig(update_interval=20, va_interval=20, estimation_batch=30, **sched)
    cfg = TrainConfig(steps=steps, lr=1e-3, batch=batch, scheduler=sc, strategy=strategy, seed=seed,
                      eval_every=10, holdout_mode=holdout, fixed_subset_size=40)
    return spec, trainer.train(sets, "linear", cfg, spec.pi, l2_eval(spec), noise_var=spec.noise_var)


def test_sgd_step_examples():
    p = models.Params("linear", np.array([1.0, 1.0]), 2)
    assert np.array_equal(trainer.sgd_step(p, np.zeros(2), 0.5).theta, p.theta)
    assert np.array_equal(trainer.sgd_step(p, np.array([2.0, -2.0]), 0.5).theta, [0.0, 2.0])
    with pytest.raises(ShapeMismatch):
        trainer.sgd_step(p, np.zeros(3), 0.1)


def test_sgd_quadratic_contraction():
    p = models.Params("linear", np.zeros(1), 1)
    for _ in range(200):
        p = trainer.sgd_step(p, 2 * (p.theta - 3.0), 0.1)
    assert abs(p.theta[0] - 3.0) <= 1e-6
    assert abs(p.theta[0] - 3.0 * (1 - 0.8**200)) <= 1e-12


def test_weighted_gradient_single_domain_is_batch_mean(rng):
    x, y = rng.normal(size=(7, 3)), rng.normal(size=7)
    p = models.Params("linear", rng.normal(size=3), 3)
    st_ = MixtureState([1.0], [1.0], [1.0])
    np.testing.assert_allclose(trainer.weighted_gradient(p, [(x, y)], st_), models.mean_loss_grad(p, x, y)[1],
                               atol=1e-14)


def test_weighted_gradient_zero_at_truth():
    spec, sets = linear_task(noise=(0.0, 0.0))
    p = models.Params("linear", spec.theta_gt, spec.dim)
    g = trainer.weighted_gradient(p, [ds.rows(np.arange(5)) for ds in sets], MixtureState.uniform(spec.pi))
    assert np.max(np.abs(g)) <= 1e-12


def test_weighted_gradient_exhaustive_unbiased(rng):
    sets = [data.DomainDataset(i, rng.normal(size=(3, 4)), rng.normal(size=3)) for i in range(2)]
    p = models.Params("linear", rng.normal(size=4), 4)
    pi = np.array([0.5, 0.5])
    st_ = MixtureState(pi, weighting.normalize_loss_weights([3.0, 1.0], pi), [0.5, 0.5])
    avg = sum(trainer.weighted_gradient(p, [sets[0].rows([i]), sets[1].rows([j])], st_)
              for i, j in itertools.product(range(3), range(3))) / 9
    target = sum(pi[k] * st_.w[k] * models.mean_loss_grad(p, ds.features, ds.labels)[1] for k, ds in enumerate(sets))
    assert np.max(np.abs(avg - target)) <= 1e-12


def test_weighted_gradient_empty_batch():
    p = models.Params("linear", np.zeros(2), 2)
    with pytest.raises(EmptyBatch):
        trainer.weighted_gradient(p, [(np.zeros((0, 2)), np.zeros(0))], MixtureState([1.0], [1.0], [1.0]))


def test_train_config_validation():
    with pytest.raises(SpecError):
        TrainConfig(strategy="adam")
    with pytest.raises(SpecError):
        TrainConfig(steps=0)
    assert TrainConfig(steps=250).log_every == 2
    spec, sets = linear_task()
    with pytest.raises(SpecError):
        trainer.train(sets, "linear", TrainConfig(batch=1), spec.pi, l2_eval(spec))
    with pytest.raises(SpecError):
        trainer.train(sets, "linear", TrainConfig(strategy="aitken_fixed"), spec.pi, l2_eval(spec))


def test_vanilla_weights_stay_uniform():
    _, tr = run("vanilla")
    for i in (1, 2):
        assert np.all(tr.column(f"w_{i}") == 1.0)
        assert np.all(tr.column(f"b_{i}") == 0.5)
    assert tr.column("step")[0] == 0 and tr.column("step")[-1] == 200
    assert np.all(np.diff(tr.column("step")) > 0)


def test_aitken_fixed_weights():
    _, tr = run("aitken_fixed")
    expect = weighting.normalize_loss_weights([1.0, 1 / 20], [0.5, 0.5])
    assert np.allclose(tr.column("w_1"), expect[0]) and np.allclose(tr.column("w_2"), expect[1])


def test_combined_single_weight_keeps_uniform_loss_weights():
    _, tr = run("combined_single_weight")
    assert np.all(tr.column("w_1") == 1.0) and np.all(tr.column("w_2") == 1.0)
    assert np.any(tr.column("b_1") != 0.5)
    assert np.allclose(tr.column("b_1") + tr.column("b_2"), 1.0, atol=1e-12)


@pytest.mark.parametrize("strategy", trainer.STRATEGIES)
def test_invariants_every_logged_step(strategy):
    spec, tr = run(strategy, holdout="fixed_subset" if "fgls" in strategy else "split")
    w = np.stack([tr.column("w_1"), tr.column("w_2")], axis=1)
    b = np.stack([tr.column("b_1"), tr.column("b_2")], axis=1)
    assert np.all(np.abs(w @ spec.pi - 1.0) <= 1e-9)
    assert np.all(np.abs(b.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(w > 0) and np.all(b > 0)


def test_warmup_holds_weights():
    _, tr = run("one_shot_fgls", steps=200, warmup_fraction=0.5)
    steps = tr.column("step")
    w1 = tr.column("w_1")
    assert np.all(w1[steps < 100] == 1.0)
    assert np.any(w1[steps >= 120] != 1.0)


def test_determinism(tmp_path):
    for strategy in ("erma+va", "one_shot_fgls+va", "combined_single_weight"):
        _, a = run(strategy, seed=5)
        _, b = run(strategy, seed=5)
        a.to_csv(tmp_path / "a.csv")
        b.to_csv(tmp_path / "b.csv")
        strip = lambda path: [ln for ln in open(path) if not ln.startswith("# created:")]
        assert strip(tmp_path / "a.csv") == strip(tmp_path / "b.csv")
        assert np.array_equal(a.final_params.theta, b.final_params.theta)
    _, c = run("erma+va", seed=6)
    assert not np.array_equal(c.final_params.theta, a.final_params.theta)


def test_va_trace_self_consistent():
    _, tr = run("va")
    assert tr.allocations
    b_min = SchedulerConfig().floor_fraction(2)
    for step, stats, w, counts in tr.allocations:
        again = weighting.va_allocate([0.5, 0.5], w, stats.grad_dispersion, 8, b_min)
        assert np.array_equal(again, counts)
    alloc_steps = np.array([a[0] for a in tr.allocations])
    for row in range(len(tr.rows)):
        step = tr.column("step")[row]
        prior = np.flatnonzero(alloc_steps <= step)
        expect = tr.allocations[prior[-1]][3] / 8 if prior.size else np.array([0.5, 0.5])
        assert tr.column("b_1")[row] == expect[0] and tr.column("b_2")[row] == expect[1]


def test_trace_csv_round_trip(tmp_path):
    _, tr = run("erma")
    tr.meta["extra"] = {"a": 1}
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and lines[1].startswith("# created:")
    meta, cols, rows = trainer.read_trace_csv(path)
    assert meta["strategy"] == "erma" and meta["extra"] == {"a": 1} and meta["model"] == "linear"
    assert cols == tr.columns == ["step", "l2", "w_1", "w_2", "b_1", "b_2", "flags"]
    assert [r[0] for r in rows] == list(tr.column("step"))
    np.testing.assert_allclose([r[1] for r in rows], tr.column("l2"), rtol=1e-11)


def test_trace_rejects_non_increasing_steps():
    tr = trainer.RunTrace(1, ("m",))
    st_ = MixtureState([1.0], [1.0], [1.0])
    tr.log(3, {"m": 0.0}, st_, set())
    with pytest.raises(ValueError):
        tr.log(3, {"m": 0.0}, st_, set())


def test_stream_peek_then_take():
    s = trainer._Stream(np.arange(10), np.random.default_rng(0))
    seen = []
    for _ in range(7):
        ahead = s.peek(3).copy()
        got = s.take(3)
        assert np.array_equal(ahead, got)
        seen.extend(got.tolist())
    assert sorted(seen[:9]) == sorted(set(seen[:9]))


def test_larger_batch_does_not_hurt():
    # same lr and steps, fixed weights: bigger batches mean lower gradient variance
    spec, _ = linear_task(n=2000, dim=10, scales=(1.0, 1.0), noise=(1.0, 20.0))
    finals = {8: [], 128: []}
    for r in range(12):
        sets = data.gen_linear(spec, 100 + r)
        for batch in finals:
            cfg = TrainConfig(steps=300, lr=0.02, batch=batch, strategy="vanilla", seed=r)
            tr = trainer.train(sets, "linear", cfg, spec.pi, l2_eval(spec))
            finals[batch].append(tr.last("l2"))
    small, big = np.array(finals[8]), np.array(finals[128])
    noise = np.hypot(small.std(ddof=1), big.std(ddof=1)) / np.sqrt(small.size)
    assert big.mean() <= small.mean() + 2 * noise
    assert big.mean() < small.mean()


def test_mlp_stream_training_reduces_loss():
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(10, 6)) * 3
    def domain(i, n):
        y = rng.integers(0, 10, size=n)
        return data.DomainDataset(i, centers[y] + rng.normal(size=(n, 6)), y)
    sets = [domain(0, 300), domain(1, 300)]
    test_x = np.vstack([s.features for s in sets])
    test_y = np.concatenate([s.labels for s in sets])
    ev = lambda p: {"accuracy": metrics.accuracy(p, test_x, test_y)}
    sc = SchedulerConfig(update_interval=10, va_interval=10, estimation_batch=16, warmup_fraction=0.0)
    cfg = TrainConfig(steps=100, lr=0.05, batch=16, scheduler=sc, strategy="erma+va", holdout_mode="stream")
    tr = trainer.train(sets, "mlp", cfg, [0.5, 0.5], ev)
    assert tr.last("accuracy") > tr.column("accuracy")[0] + 0.3
