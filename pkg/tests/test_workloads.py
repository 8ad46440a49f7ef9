import numpy as np
import pytest

from neurocore.snn.layers import mnist_convnet
from neurocore.workloads import (FederationConfig, Trainer, TrainConfig, fedavg, iid_shards, label_shards,
                                 run_continual, run_federated, run_training, split_classes, synthetic_digits)
from neurocore.workloads.data import read_idx, write_idx

MODEL = mnist_convnet(3, channels=(4, 8, 8), population=2)
CFG = TrainConfig(epochs=1, batch_size=8, lr=0.05)


@pytest.fixture(scope="module")
def ds():
    return synthetic_digits(48, seed=1)


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def test_training_is_deterministic(ds):
    a = run_training(MODEL, ds, config=CFG)
    b = run_training(MODEL, ds, config=CFG)
    assert _same(a.trainer.weights, b.trainer.weights)
    assert a.history.loss == b.history.loss
    assert 0 <= a.test_accuracy <= 1


def test_zero_learning_rate_leaves_weights(ds):
    cfg = TrainConfig(epochs=2, batch_size=8, lr=0.0, schedule="constant")
    tr = Trainer(MODEL, cfg)
    w0 = tr.weights
    x = ds.scale(ds.x_train)
    h = tr.fit_epochs(x, ds.y_train)
    assert _same(w0, tr.weights)
    assert h.loss[0] == pytest.approx(h.loss[1])


def test_split_schedule_matches_one_long_run(ds):
    x = ds.scale(ds.x_train)
    one = Trainer(MODEL, CFG)
    one.fit_epochs(x, ds.y_train, 2)
    two = Trainer(MODEL, CFG)
    two.fit_epochs(x, ds.y_train, 1, start_epoch=0, total_epochs=2)
    two.fit_epochs(x, ds.y_train, 1, start_epoch=1, total_epochs=2)
    assert _same(one.weights, two.weights)


def test_core_sim_deployment_trains_like_golden(ds):
    small = synthetic_digits(8, seed=4)
    cfg = TrainConfig(epochs=1, batch_size=4, lr=0.05)
    g = run_training(MODEL, small, config=cfg)
    c = run_training(MODEL, small, config=cfg, deployment="core-sim")
    assert _same(g.trainer.weights, c.trainer.weights)
    assert c.trainer.sim_cycles > 0 and g.trainer.sim_cycles == 0


def test_single_worker_federation_is_plain_training(ds):
    rounds = 2
    res = run_federated(MODEL, ds, [np.arange(len(ds.y_train))], FederationConfig(workers=1, rounds=rounds),
                        config=CFG)
    tr = Trainer(MODEL, CFG)
    tr.fit_epochs(ds.scale(ds.x_train), ds.y_train, rounds)
    assert _same(res.weights, tr.weights)
    # the local-only baseline of a lone worker is the same model
    assert _same(res.worker_weights[0], tr.weights)
    assert len(res.federated) == rounds and res.eval_rounds == [0, 1]


def test_federation_checks(ds):
    with pytest.raises(ValueError):
        run_federated(MODEL, ds, [np.arange(4)], FederationConfig(workers=2, rounds=1), config=CFG)
    with pytest.raises(ValueError):
        FederationConfig(workers=0)
    with pytest.raises(ValueError):
        FederationConfig(aggregation="median")


def test_fedavg():
    rng = np.random.default_rng(0)
    sets = [[rng.normal(size=(3, 2)).astype(np.float32)] for _ in range(4)]
    avg = fedavg(sets, [5, 5, 5, 5])
    np.testing.assert_allclose(avg[0], np.mean([s[0] for s in sets], axis=0), rtol=1e-6)
    one = fedavg(sets, [0, 0, 7, 0])
    np.testing.assert_array_equal(one[0], sets[2][0])
    with pytest.raises(ValueError):
        fedavg(sets, [0, 0, 0, 0])


def test_continual_without_finetuning(ds):
    old, new = split_classes(ds)
    cfg = TrainConfig(epochs=1, batch_size=8, lr=0.05)
    res = run_continual(MODEL, old, new, cfg, pretrain_epochs=1, finetune_epochs=0)
    assert (res.before, res.old_before, res.new_before) == (res.after, res.old_after, res.new_after)
    assert set(np.unique(old.y_train)) <= {0, 1, 2, 3, 4}
    assert res.pretrain.epochs and not res.finetune.epochs


def test_shards():
    y = np.repeat(np.arange(10), 30)
    shards = label_shards(y, 5, 2, per_worker=40)
    assert all(len(s) == 40 and len(np.unique(y[s])) <= 2 for s in shards)
    owned = set(np.concatenate([np.unique(y[s]) for s in shards]))
    assert owned == set(range(10))
    parts = iid_shards(103, 4)
    assert sorted(np.concatenate(parts).tolist()) == list(range(103))
    assert all(abs(len(p) - 103 / 4) < 1 for p in parts)


def test_idx_roundtrip(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_idx(tmp_path / "a-idx3-ubyte", arr)
    np.testing.assert_array_equal(read_idx(tmp_path / "a-idx3-ubyte"), arr)
    (tmp_path / "bad").write_bytes(b"\x01\x02\x03\x04")
    with pytest.raises(ValueError):
        read_idx(tmp_path / "bad")


def test_dataset_subset_is_stratified():
    ds = synthetic_digits(400, seed=2)
    sub = ds.subset(100, 20, seed=3)
    assert len(sub.y_train) == 100 and len(sub.y_test) == 20
    full = np.bincount(ds.y_train, minlength=10) / len(ds.y_train)
    part = np.bincount(sub.y_train, minlength=10) / 100
    assert np.abs(full - part).max() < 0.03
    assert sub.x_train.dtype == np.uint8 and sub.x_train.shape[1:] == (1, 28, 28)
