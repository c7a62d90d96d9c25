from dataclasses import replace

import numpy as np
import pytest

from scilm.data import SyntheticSpec, make_synthetic_longtail
from scilm.errors import NumericalError
from scilm.model import ModelConfig, init_params
from scilm.sampler import make_rng
from scilm.train import (
    GRADCHECK_CONFIG,
    Adam,
    Sgd,
    gradcheck,
    train,
    train_baseline_dem,
)


@pytest.fixture(scope="module")
def conv_ds():
    return make_synthetic_longtail(SyntheticSpec(k_seen=10, t_unseen=2, p=16, q=8, head_count=100, tail_count=5,
                                                 attr_link=1, test_per_class=5, seed=3))


def test_zero_iterations_is_init(small_ds):
    cfg = ModelConfig(q=small_ds.q, p=small_ds.p, h=5, iterations=0)
    sen, shared, report = train(small_ds, cfg, make_rng(4))
    sen0, shared0 = init_params(cfg, make_rng(4))
    for a, b in zip([*sen.as_dict().values(), *shared.as_dict().values()],
                    [*sen0.as_dict().values(), *shared0.as_dict().values()]):
        np.testing.assert_array_equal(a, b)
    assert report.losses == [] and report.iterations == 0


def test_training_is_deterministic(small_ds):
    cfg = ModelConfig(q=small_ds.q, p=small_ds.p, h=5, iterations=30)
    r1 = train(small_ds, cfg, make_rng(9))
    r2 = train(small_ds, cfg, make_rng(9))
    for a, b in zip(r1[0].as_dict().values(), r2[0].as_dict().values()):
        np.testing.assert_array_equal(a, b)
    assert [lb.total for lb in r1[2].losses] == [lb.total for lb in r2[2].losses]
    r3 = train(small_ds, cfg, make_rng(10))
    assert not np.array_equal(r1[0].W1, r3[0].W1)


def test_converges_on_small_longtail(conv_ds):
    cfg = ModelConfig(q=8, p=16, h=12, iterations=500)
    _, _, report = train(conv_ds, cfg, make_rng(0))
    start = report.losses[0].total
    end = np.mean([lb.total for lb in report.losses[-10:]])
    assert end < 0.5 * start
    assert all(r == 10 * cfg.n for r in report.rows_per_step)
    assert set(report.timings) == {"sample", "forward", "backward", "update"}


def test_adam_first_step_is_lr():
    x = {"x": np.array([3.0])}
    opt = Adam(0.01)
    opt.step(x, {"x": 2 * x["x"]})
    assert x["x"][0] == pytest.approx(3.0 - 0.01, abs=1e-8)
    y = {"y": np.array([1.0, -2.0])}
    Adam(0.1).step(y, {"y": np.zeros(2)})
    np.testing.assert_array_equal(y["y"], [1.0, -2.0])


def test_sgd_step():
    x = {"x": np.array([1.0, 2.0])}
    Sgd(0.5).step(x, {"x": np.array([2.0, -2.0])})
    np.testing.assert_array_equal(x["x"], [0.0, 3.0])


def test_sgd_training_runs(small_ds):
    cfg = ModelConfig(q=small_ds.q, p=small_ds.p, h=5, iterations=20, optimizer="sgd", lr=1e-3)
    _, _, report = train(small_ds, cfg, make_rng(1))
    assert report.iterations == 20


def test_dem_baseline(small_ds):
    cfg = ModelConfig(q=small_ds.q, p=small_ds.p, h=5, n=4, iterations=40)
    sen1, rep1 = train_baseline_dem(small_ds, cfg, make_rng(2))
    sen2, rep2 = train_baseline_dem(small_ds, cfg, make_rng(2))
    np.testing.assert_array_equal(sen1.W2, sen2.W2)
    assert rep1.rows_per_step == [len(small_ds.seen_classes) * 4] * 40
    assert rep1.losses[-1].total < rep1.losses[0].total


def test_nan_input_aborts_with_iteration(small_ds):
    from scilm.data import Dataset

    bad = Dataset(**{f: getattr(small_ds, f) for f in (
        "features", "labels", "attributes", "seen_classes", "unseen_classes",
        "train_idx", "test_seen_idx", "test_unseen_idx")})
    bad.features = bad.features.copy()
    bad.features[bad.train_idx] = np.nan
    cfg = ModelConfig(q=small_ds.q, p=small_ds.p, h=5, iterations=3)
    with pytest.raises(NumericalError, match="iteration 0"):
        train(bad, cfg, make_rng(0))


def test_gradcheck_passes_and_detects_corruption():
    for variant in "abc":
        report = gradcheck(replace(GRADCHECK_CONFIG, variant=variant), make_rng(5))
        assert report.max_rel_error < 1e-4
        assert sorted(report.per_parameter) == sorted(["W1", "b1", "W2", "b2", "Ws", "bs"])

    def corrupt(grads):
        grads = dict(grads)
        grads["W1"] = grads["W1"].copy()
        grads["W1"][0, 0] += 0.5 * (abs(grads["W1"][0, 0]) + 1e-3)
        return grads

    bad = gradcheck(GRADCHECK_CONFIG, make_rng(5), corrupt=corrupt)
    assert bad.max_rel_error > 1e-2
    assert bad.per_parameter["W1"] > 1e-2


def test_loss_curve_file(small_ds, tmp_path):
    cfg = ModelConfig(q=small_ds.q, p=small_ds.p, h=5, iterations=5)
    _, _, report = train(small_ds, cfg, make_rng(0))
    path = tmp_path / "curve.csv"
    report.write_loss_curve(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,l1,l2,l3,reg,total"
    assert len(lines) == 6
    assert float(lines[-1].split(",")[-1]) == report.losses[-1].total


def test_on_step_callback(small_ds):
    seen = []
    cfg = ModelConfig(q=small_ds.q, p=small_ds.p, h=5, iterations=4)
    train(small_ds, cfg, make_rng(0), on_step=lambda it, lb: seen.append(it))
    assert seen == [0, 1, 2, 3]
