import json

import numpy as np
import pytest
from sklearn.base import clone

from cases import three_layer_run
from neurocore import perf
from neurocore.cli import main
from neurocore.estimator import SNNClassifier, SpikeEncoder
from neurocore.workloads import synthetic_digits
from neurocore.workloads.data import MNIST_FILES, write_idx


@pytest.fixture(scope="module")
def digits():
    ds = synthetic_digits(40, seed=5)
    return ds.scale(ds.x_train), ds.y_train, ds.scale(ds.x_test)


def test_classifier_fit_predict(digits):
    X, y, Xt = digits
    clf = SNNClassifier(channels=(4, 8, 8), population=2, epochs=1, batch_size=8)
    assert clf.fit(X, y) is clf
    pred = clf.predict(Xt)
    assert set(pred) <= set(clf.classes_)
    proba = clf.predict_proba(Xt)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert np.array_equal(clf.classes_[proba.argmax(axis=1)], pred)
    # flat inputs are reshaped to square images
    np.testing.assert_array_equal(clf.predict(Xt.reshape(len(Xt), -1)), pred)
    assert 0 <= clf.score(X, y) <= 1
    assert len(clf.history_) == 1


def test_classifier_params_and_partial_fit(digits):
    X, y, _ = digits
    clf = SNNClassifier(channels=(4, 8, 8), population=2, batch_size=8, lr=0.01)
    twin = clone(clf)
    assert twin.get_params() == clf.get_params()
    with pytest.raises(ValueError):
        clf.partial_fit(X, y)
    clf.partial_fit(X, y, classes=np.arange(10))
    clf.partial_fit(X, y)
    assert len(clf.history_) == 2
    with pytest.raises(ValueError):
        clf.predict(X[:, 0, :5, :5].reshape(len(X), -1))
    with pytest.raises(ValueError):
        clf.partial_fit(X[:2], np.array([11, 12]))


def test_unfitted_classifier_refuses(digits):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        SNNClassifier().predict(digits[2])


def test_spike_encoder(digits):
    X = digits[0][:3]
    enc = SpikeEncoder(timesteps=5).fit(X)
    s = enc.transform(X)
    assert s.shape == (3, 5, 1, 28, 28)
    assert set(np.unique(s)) <= {0, 1}
    p = SpikeEncoder(timesteps=5, encoding="poisson", seed=2)
    np.testing.assert_array_equal(p.fit_transform(X), p.transform(X))


def test_cli_simulate_and_report(tmp_path, capsys):
    run = tmp_path / "sim"
    assert main(["simulate", "--preset", "three-layer", "--run-dir", str(run), "--emit-figure-data"]) == 0
    rep = json.loads((run / "perf.json").read_text())
    # timing does not depend on spike values, so random weights and inputs give the fixture's P
    runner, res = three_layer_run()
    assert rep["P"] == perf.perf_report(res.sim, runner.mapping).P == 15863
    assert (run / "counters.csv").exists() and (run / "figure_data" / "perf_summary.csv").exists()
    assert main(["report", str(run)]) == 0
    again = json.loads((run / "report.json").read_text())
    assert again["P"] == rep["P"] and again["util"] == pytest.approx(rep["util"])
    # replay the saved streams
    assert main(["simulate", "--streams", str(run / "streams"), "--run-dir", str(tmp_path / "replay")]) == 0
    assert json.loads((tmp_path / "replay" / "perf.json").read_text())["P"] == rep["P"]
    assert "P=" in capsys.readouterr().out


def _idx_dir(path):
    ds = synthetic_digits(60, seed=9)
    path.mkdir()
    write_idx(path / MNIST_FILES["train_images"], ds.x_train[:, 0])
    write_idx(path / MNIST_FILES["train_labels"], ds.y_train)
    write_idx(path / MNIST_FILES["test_images"], ds.x_test[:, 0])
    write_idx(path / MNIST_FILES["test_labels"], ds.y_test)
    return path


def test_cli_training_commands(tmp_path):
    data = str(_idx_dir(tmp_path / "idx"))
    small = ["--data", data, "--n-train", "40", "--n-test", "10", "--batch-size", "8", "--timesteps", "2"]
    assert main(["train", "--run-dir", str(tmp_path / "t"), "--epochs", "1", *small]) == 0
    out = json.loads((tmp_path / "t" / "train.json").read_text())
    assert len(out["history"]["epochs"]) == 1 and (tmp_path / "t" / "weights.npz").exists()
    assert main(["federated", "--run-dir", str(tmp_path / "f"), "--workers", "2", "--rounds", "1",
                 "--per-worker", "10", *small]) == 0
    fed = json.loads((tmp_path / "f" / "federated.json").read_text())
    assert len(fed["federated"]) == 1 and len(fed["workers"]) == 2
    assert main(["continual", "--run-dir", str(tmp_path / "c"), "--epochs", "1", "--finetune-epochs", "0",
                 *small]) == 0
    cont = json.loads((tmp_path / "c" / "continual.json").read_text())
    assert cont["before"] == cont["after"]
    assert main(["train", "--data", str(tmp_path / "missing"), "--run-dir", str(tmp_path / "x")]) == 2

