"""Training drivers: plain, continual and federated, on either deployment.

``golden`` runs the reference math directly; ``core-sim`` compiles every
batch size once and replays each batch through the simulated chip. Both
produce the same binary16 weight gradients, so with the same seed they
produce the same weights after every step.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..numerics import to_half_exact
from ..snn.network import SGD, SpikingNetwork, init_weights
from .data import Dataset

DEPLOYMENTS = ("golden", "core-sim")


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 16
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: str = "cosine"  # or "constant"
    seed: int = 0
    deployment: str = "golden"
    cores: Optional[int] = None
    init_gain: float = 1.5
    input_gain: float = 2.0
    logit_scale: float = 8.0

    def __post_init__(self):
        if self.deployment not in DEPLOYMENTS:
            raise ValueError(f"deployment must be one of {DEPLOYMENTS}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError("schedule must be 'cosine' or 'constant'")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class History:
    epochs: list = field(default_factory=list)

    def add(self, **row):
        self.epochs.append(row)

    @property
    def loss(self):
        return [r["loss"] for r in self.epochs]

    @property
    def accuracy(self):
        return [r["test_accuracy"] for r in self.epochs]

    def to_dict(self):
        return {"epochs": list(self.epochs)}


class Trainer:
    """Owns a network, its optimiser state and the chosen deployment."""

    def __init__(self, model, config: Optional[TrainConfig] = None, weights=None):
        self.model = model
        self.config = config or TrainConfig()
        c = self.config
        if weights is None:
            weights = init_weights(model, np.random.default_rng(c.seed), gain=c.init_gain)
        self.net = SpikingNetwork(model, weights, logit_scale=c.logit_scale, input_gain=c.input_gain)
        self.opt = SGD(lr=c.lr, momentum=c.momentum, weight_decay=c.weight_decay)
        self._runners = {}
        self.step_count = 0
        self.sim_cycles = 0

    # ------------------------------------------------------------ inputs
    def encode(self, x, rng=None):
        return self.net.encode(x, rng)

    def _device_input(self, x, rng):
        if self.model.input.encoding == "direct":
            return to_half_exact(np.clip(np.asarray(x, dtype=np.float64), 0.0, None) * self.net.input_gain)
        return self.net.encode(x, rng)

    def _runner(self, n):
        from ..deploy import CoreSimRunner

        r = self._runners.get(n)
        if r is None:
            r = CoreSimRunner.for_model(self.model, n, cores=self.config.cores, logit_scale=self.net.logit_scale)
            self._runners[n] = r
        return r

    # ------------------------------------------------------------ steps
    def gradients(self, x, y, rng=None):
        """Batch-summed binary16 weight gradients and the batch loss."""
        if self.config.deployment == "golden":
            return self.net.compute_gradients(self.net.encode(x, rng), y)[::-1]
        res = self._runner(len(y)).run_batch(self.net.master, self._device_input(x, rng), labels=y)
        self.sim_cycles += res.sim.cycles
        return res.grads, res.loss

    def step(self, x, y, lr=None, rng=None) -> float:
        if lr is not None:
            self.opt.lr = lr
        grads, loss = self.gradients(x, y, rng)
        self.net.apply_gradients(grads, len(y), self.opt)
        self.step_count += 1
        return float(loss)

    def fit_epochs(self, x, y, epochs=None, eval_set=None, history=None, log=None, start_epoch=0,
                   total_epochs=None) -> History:
        """SGD over ``epochs`` passes; inputs are images scaled to [0, 1].

        ``start_epoch``/``total_epochs`` place these passes inside a longer
        schedule, so split calls reproduce one long call exactly.
        """
        c = self.config
        epochs = c.epochs if epochs is None else epochs
        total_epochs = start_epoch + epochs if total_epochs is None else total_epochs
        history = history or History()
        n = len(y)
        per_epoch = math.ceil(n / c.batch_size) if n else 0
        total = max(1, total_epochs * per_epoch)
        k = start_epoch * per_epoch
        t0 = time.time()
        for ep in range(start_epoch, start_epoch + epochs):
            rng = np.random.default_rng((c.seed, ep))
            perm = rng.permutation(n)
            losses = []
            for b in range(0, n, c.batch_size):
                idx = perm[b:b + c.batch_size]
                lr = c.lr if c.schedule == "constant" else c.lr * 0.5 * (1 + math.cos(math.pi * k / total))
                losses.append(self.step(x[idx], y[idx], lr, rng))
                k += 1
            row = {"epoch": ep, "loss": float(np.mean(losses)) if losses else float("nan"),
                   "seconds": round(time.time() - t0, 3)}
            if eval_set is not None:
                row["test_accuracy"] = self.accuracy(*eval_set)
            history.add(**row)
            if log:
                log(row)
        return history

    def predict(self, x, batch=256):
        return self.net.predict(self.net.encode(x), batch)

    def accuracy(self, x, y) -> float:
        if len(y) == 0:
            return float("nan")
        return float(np.mean(self.predict(x) == np.asarray(y)))

    @property
    def weights(self):
        return [w.copy() for w in self.net.master]

    def set_weights(self, weights):
        for dst, src in zip(self.net.master, weights):
            dst[...] = src


@dataclass
class TrainResult:
    history: History
    test_accuracy: float
    trainer: Trainer
    seconds: float

    def to_dict(self):
        return {"history": self.history.to_dict(), "test_accuracy": self.test_accuracy, "seconds": self.seconds,
                "config": asdict(self.trainer.config), "sim_cycles": self.trainer.sim_cycles}


def run_training(model, dataset: Dataset, epochs=None, deployment=None, config=None, log=None) -> TrainResult:
    """Train on ``dataset`` and record per-epoch loss and test accuracy."""
    config = config or TrainConfig()
    over = {k: v for k, v in (("epochs", epochs), ("deployment", deployment)) if v is not None}
    if over:
        config = TrainConfig.from_dict({**asdict(config), **over})
    t0 = time.time()
    tr = Trainer(model, config)
    xtr, xte = dataset.scale(dataset.x_train), dataset.scale(dataset.x_test)
    hist = tr.fit_epochs(xtr, dataset.y_train, eval_set=(xte, dataset.y_test), log=log)
    acc = hist.accuracy[-1] if hist.epochs else tr.accuracy(xte, dataset.y_test)
    return TrainResult(hist, acc, tr, time.time() - t0)


# ---------------------------------------------------------------- continual


@dataclass
class ContinualResult:
    before: float
    after: float
    old_before: float
    old_after: float
    new_before: float
    new_after: float
    pretrain: History
    finetune: History

    def to_dict(self):
        d = asdict(self)
        d["pretrain"] = self.pretrain.to_dict()
        d["finetune"] = self.finetune.to_dict()
        return d


def split_classes(dataset: Dataset, old=(0, 1, 2, 3, 4), new=(5, 6, 7, 8, 9)):
    return dataset.filter_labels(old), dataset.filter_labels(new)


def run_continual(model, old_data: Dataset, new_data: Dataset, config=None, pretrain_epochs=None,
                  finetune_epochs=1, weights=None, replay=0.2, log=None) -> ContinualResult:
    """Pre-train on ``old_data`` (unless weights are given), then fine-tune on ``new_data``.

    Accuracies are measured on the union of both test sets. ``replay`` mixes
    that fraction of the old training set into the fine-tuning data.
    """
    config = config or TrainConfig()
    tr = Trainer(model, config, weights)
    xo, yo = old_data.scale(old_data.x_train), old_data.y_train
    pre = History()
    if weights is None:
        tr.fit_epochs(xo, yo, pretrain_epochs, history=pre, log=log)
    xte = np.concatenate([old_data.scale(old_data.x_test), new_data.scale(new_data.x_test)])
    yte = np.concatenate([old_data.y_test, new_data.y_test])
    n_old = len(old_data.y_test)

    def accs():
        p = tr.predict(xte)
        hit = p == yte
        return float(hit.mean()), float(hit[:n_old].mean()), float(hit[n_old:].mean())

    b, ob, nb = accs()
    xn, yn = new_data.scale(new_data.x_train), new_data.y_train
    if replay > 0 and len(yo):
        k = int(round(replay * len(yo)))
        pick = np.random.default_rng(config.seed).permutation(len(yo))[:k]
        xn, yn = np.concatenate([xn, xo[pick]]), np.concatenate([yn, yo[pick]])
    tr.opt = SGD(lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    fine = tr.fit_epochs(xn, yn, finetune_epochs, log=log)
    a, oa, na = accs() if finetune_epochs else (b, ob, nb)
    return ContinualResult(b, a, ob, oa, nb, na, pre, fine)


# ---------------------------------------------------------------- federated


@dataclass
class FederationConfig:
    workers: int = 5
    cores_per_worker: int = 4
    rounds: int = 20
    local_epochs: int = 1
    aggregation: str = "weighted-average"

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.aggregation != "weighted-average":
            raise ValueError("only sample-weighted averaging is supported")


def fedavg(weight_sets, counts) -> list:
    """Sample-count weighted mean, summed in worker order (float64 then f32)."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("total sample count must be positive")
    share = counts / counts.sum()
    out = []
    for layer in zip(*weight_sets):
        acc = np.zeros(layer[0].shape, dtype=np.float64)
        for s, w in zip(share, layer):
            acc += s * np.asarray(w, dtype=np.float64)
        out.append(acc.astype(np.float32))
    return out


@dataclass
class FederatedResult:
    federated: list  # global-test accuracy of the averaged model per round
    workers: list  # per worker, global-test accuracy of its local-only model per evaluated round
    weights: list
    eval_rounds: list = field(default_factory=list)
    worker_weights: list = field(default_factory=list)

    @property
    def final(self):
        return self.federated[-1] if self.federated else float("nan")

    @property
    def worker_final(self):
        return [w[-1] for w in self.workers]

    def to_dict(self):
        return {"federated": self.federated, "workers": self.workers, "eval_rounds": self.eval_rounds}


def run_federated(model, dataset: Dataset, partitions, fed: Optional[FederationConfig] = None, config=None,
                  log=None, eval_every=1, baseline=True) -> FederatedResult:
    """FedAvg over worker partitions of ``dataset.x_train``.

    Each round every worker starts from the broadcast weights and trains
    ``local_epochs`` on its own partition; the server averages the results
    weighted by sample count. Workers keep their optimiser state and
    learning-rate schedule across rounds.

    The worker baselines are models each trained on its own partition only,
    for the same number of epochs, with no averaging; their global-test
    accuracy is measured every ``eval_every`` rounds and after the last one.
    """
    fed = fed or FederationConfig(workers=len(partitions))
    config = config or TrainConfig()
    if len(partitions) != fed.workers:
        raise ValueError("one partition per worker is required")
    x = dataset.scale(dataset.x_train)
    xte = dataset.scale(dataset.x_test)
    y = dataset.y_train
    base = Trainer(model, TrainConfig.from_dict({**asdict(config), "cores": fed.cores_per_worker}))
    glob = base.weights

    def make(k):
        cfg = TrainConfig.from_dict({**asdict(config), "seed": config.seed + k, "cores": fed.cores_per_worker})
        return Trainer(model, cfg, glob)

    workers = [make(k) for k in range(fed.workers)]
    solo = [make(k) for k in range(fed.workers)] if baseline else []
    total = fed.rounds * fed.local_epochs
    fed_acc, solo_acc, evals = [], [[] for _ in solo], []
    for r in range(fed.rounds):
        local, counts = [], []
        for w, part in zip(workers, partitions):
            w.set_weights(glob)
            w.fit_epochs(x[part], y[part], fed.local_epochs, start_epoch=r * fed.local_epochs, total_epochs=total)
            local.append(w.weights)
            counts.append(len(part))
        glob = fedavg(local, counts) if fed.workers > 1 else local[0]
        base.set_weights(glob)
        for w, part in zip(solo, partitions):
            w.fit_epochs(x[part], y[part], fed.local_epochs, start_epoch=r * fed.local_epochs, total_epochs=total)
        fed_acc.append(base.accuracy(xte, dataset.y_test))
        row = {"round": r, "federated": fed_acc[-1]}
        if solo and ((r + 1) % max(1, eval_every) == 0 or r == fed.rounds - 1):
            evals.append(r)
            for k, w in enumerate(solo):
                solo_acc[k].append(w.accuracy(xte, dataset.y_test))
            row["workers"] = [a[-1] for a in solo_acc]
        if log:
            log(row)
    return FederatedResult(fed_acc, solo_acc, glob, evals, [w.weights for w in solo])
