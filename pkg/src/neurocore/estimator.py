"""scikit-learn wrappers around the spiking-network trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .snn.layers import NeuronConfig, mnist_convnet
from .snn.network import encode_images, rate_logits
from .workloads.train import Trainer, TrainConfig


def _as_images(X, shape=None):
    """Accept (N, C, H, W), (N, H, W) or flat (N, H*W) arrays scaled to [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 4:
        return X
    if X.ndim == 3:
        return X[:, None]
    if X.ndim == 2:
        if shape is None:
            side = int(round(np.sqrt(X.shape[1])))
            if side * side != X.shape[1]:
                raise ValueError("flat inputs need a square image size or an explicit image_shape")
            shape = (1, side, side)
        return X.reshape((X.shape[0],) + tuple(shape))
    raise ValueError(f"cannot interpret input of shape {X.shape} as images")


class SpikeEncoder(TransformerMixin, BaseEstimator):
    """Encode images into (N, T, C, H, W) binary spike trains."""

    def __init__(self, timesteps=4, encoding="direct", gain=2.0, alpha=0.5, threshold=1.0, seed=0):
        self.timesteps = timesteps
        self.encoding = encoding
        self.gain = gain
        self.alpha = alpha
        self.threshold = threshold
        self.seed = seed

    def fit(self, X, y=None):
        self.n_features_in_ = int(np.prod(np.asarray(X).shape[1:]))
        return self

    def transform(self, X):
        nc = NeuronConfig(alpha=self.alpha, th_f=self.threshold)
        return encode_images(_as_images(X), self.timesteps, self.encoding, nc, np.random.default_rng(self.seed),
                             self.gain)


class SNNClassifier(ClassifierMixin, BaseEstimator):
    """Spiking conv-net classifier trained with surrogate-gradient BPTT.

    Inputs are images in [0, 1]; 28x28 single-channel digits by default.
    ``deployment='core-sim'`` computes every gradient on the simulated chip.
    """

    def __init__(self, channels=(8, 16, 16), timesteps=4, population=4, epochs=3, batch_size=16, lr=0.03,
                 momentum=0.9, schedule="cosine", alpha=0.5, deployment="golden", cores=None, seed=0,
                 image_shape=(1, 28, 28)):
        self.channels = channels
        self.timesteps = timesteps
        self.population = population
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.schedule = schedule
        self.alpha = alpha
        self.deployment = deployment
        self.cores = cores
        self.seed = seed
        self.image_shape = image_shape

    def _config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
                           schedule=self.schedule, seed=self.seed, deployment=self.deployment, cores=self.cores)

    def _build(self, classes):
        if tuple(self.image_shape) != (1, 28, 28):
            raise ValueError("the bundled network expects 1x28x28 images")
        self.classes_ = np.asarray(classes)
        if len(self.classes_) > 10:
            raise ValueError("at most 10 classes are supported")
        model = mnist_convnet(self.timesteps, tuple(self.channels), NeuronConfig(alpha=self.alpha), self.seed,
                              self.population)
        self.trainer_ = Trainer(model, self._config())
        self.history_ = []

    def _encode_labels(self, y):
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= len(self.classes_)) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValueError("y contains labels not seen in fit")
        return idx.astype(np.int64)

    def fit(self, X, y):
        X = _as_images(X, self.image_shape)
        y = np.asarray(y)
        self._build(np.unique(y))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        hist = self.trainer_.fit_epochs(X, self._encode_labels(y), self.epochs)
        self.history_ = hist.epochs
        return self

    def partial_fit(self, X, y, classes=None):
        """One pass over (X, y) at the configured base learning rate."""
        X = _as_images(X, self.image_shape)
        y = np.asarray(y)
        if not hasattr(self, "trainer_"):
            if classes is None:
                raise ValueError("classes must be given on the first partial_fit call")
            self._build(np.unique(classes))
            self.n_features_in_ = int(np.prod(X.shape[1:]))
            self._pf_epoch = 0
        tr = self.trainer_
        saved = tr.config.schedule
        tr.config.schedule = "constant"
        hist = tr.fit_epochs(X, self._encode_labels(y), 1, start_epoch=self._pf_epoch)
        tr.config.schedule = saved
        self._pf_epoch += 1
        self.history_ = self.history_ + hist.epochs
        return self

    def decision_function(self, X):
        check_is_fitted(self, "trainer_")
        X = _as_images(X, self.image_shape)
        net = self.trainer_.net
        out = []
        for i in range(0, len(X), 256):
            logits = rate_logits(net.forward(net.encode(X[i:i + 256]))[1], net.model.num_classes, net.logit_scale)
            out.append(logits[:, : len(self.classes_)])
        return np.concatenate(out) if out else np.zeros((0, len(self.classes_)))

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "trainer_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
