"""Locally trained 1-D convolutional feature extractor.

A small dilated-convolution classifier is fitted on labeled simulated
windows; the penultimate fully connected layer is the feature vector used
by the Frechet distance.  Windows are standardized per item, so features
depend on morphology rather than absolute amplitude.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .autodiff import Tape
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import ParameterStore, adam_step
from .rng import make_rng

_DILATIONS = (1, 4, 16)


class SignalFeatureExtractor(BaseEstimator, TransformerMixin):
    """Conv classifier whose penultimate layer output is the feature vector.

    fit(X, y) trains on windows X (n, L) with integer or string labels y
    and verifies holdout accuracy against ``accuracy_floor``; transform(X)
    returns (n, feature_dim) features; predict(X) returns labels.
    """

    def __init__(
        self,
        channels: int = 12,
        feature_dim: int = 16,
        kernel: int = 9,
        epochs: int = 60,
        batch_size: int = 32,
        lr: float = 1e-3,
        holdout_fraction: float = 0.2,
        accuracy_floor: float = 0.9,
        seed: int = 0,
    ):
        self.channels = channels
        self.feature_dim = feature_dim
        self.kernel = kernel
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.holdout_fraction = holdout_fraction
        self.accuracy_floor = accuracy_floor
        self.seed = seed

    # -- internals ----------------------------------------------------------

    def _init_store(self, n_classes: int) -> ParameterStore:
        store = ParameterStore()
        ch, fd, k = self.channels, self.feature_dim, self.kernel

        def add(name, shape, fan_in, zero=False):
            rng = make_rng(self.seed, f"feat-init/{name}")
            store.add(name, np.zeros(shape) if zero else rng.standard_normal(shape) / math.sqrt(fan_in))

        add("conv1.w", (ch, 1, k), k)
        add("conv1.b", (ch, 1), 1, zero=True)
        add("conv2.w", (ch, ch, k), ch * k)
        add("conv2.b", (ch, 1), 1, zero=True)
        add("conv3.w", (ch, ch, k), ch * k)
        add("conv3.b", (ch, 1), 1, zero=True)
        add("fc1.w", (ch, fd), ch)
        add("fc1.b", (fd,), 1, zero=True)
        add("fc2.w", (fd, n_classes), fd)
        add("fc2.b", (n_classes,), 1, zero=True)
        return store

    @staticmethod
    def _standardize(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        mu = X.mean(axis=1, keepdims=True)
        sd = X.std(axis=1, keepdims=True)
        return (X - mu) / (sd + 1e-8)

    def _forward(self, tape: Tape, X: np.ndarray, bound: dict):
        h = tape.constant(self._standardize(X)[:, None, :])
        for i, dil in enumerate(_DILATIONS, start=1):
            h = tape.tanh(tape.conv1d_dilated(h, bound[f"conv{i}.w"], bound[f"conv{i}.b"], dilation=dil))
        pooled = tape.mean_lastaxis(h)
        feats = tape.tanh(tape.linear(pooled, bound["fc1.w"], bound["fc1.b"]))
        logits = tape.linear(feats, bound["fc2.w"], bound["fc2.b"])
        return feats, logits

    def _batched_eval(self, X: np.ndarray, want_features: bool) -> np.ndarray:
        tape = Tape()
        outs = []
        for start in range(0, len(X), 256):
            tape.reset()
            bound = {name: tape.constant(val) for name, val in self.store_.params.items()}
            feats, logits = self._forward(tape, X[start:start + 256], bound)
            outs.append(np.array((feats if want_features else logits).data))
        tape.reset()
        return np.concatenate(outs, axis=0)

    # -- estimator API -----------------------------------------------------------

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2:
            raise ValueError(f"X must be (n_windows, length), got {X.shape}")
        if len(X) != len(y):
            raise ValueError(f"X and y disagree on n: {len(X)} vs {len(y)}")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes to fit the feature extractor")
        class_index = {c: i for i, c in enumerate(self.classes_)}
        targets = np.zeros((len(y), len(self.classes_)))
        for i, label in enumerate(y):
            targets[i, class_index[label]] = 1.0

        rng = make_rng(self.seed, "feat-train")
        order = rng.permutation(len(X))
        n_holdout = max(1, int(round(self.holdout_fraction * len(X))))
        hold, train = order[:n_holdout], order[n_holdout:]
        if len(train) == 0:
            raise ValueError("not enough samples to split off a holdout set")

        self.store_ = self._init_store(len(self.classes_))
        tape = Tape()
        history = []
        best_acc = 0.0
        for epoch in range(self.epochs):
            perm = rng.permutation(len(train))
            losses = []
            for start in range(0, len(perm), self.batch_size):
                idx = train[perm[start:start + self.batch_size]]
                tape.reset()
                bound = {name: tape.leaf(val) for name, val in self.store_.params.items()}
                _, logits = self._forward(tape, X[idx], bound)
                loss = tape.mse(logits, tape.constant(targets[idx]))
                tape.backward(loss)
                grads = {name: np.array(t.grad) for name, t in bound.items()}
                adam_step(self.store_, grads, lr=self.lr)
                losses.append(float(loss.data))
            acc = self._accuracy(X[hold], y[hold])
            history.append((float(np.mean(losses)), acc))
            best_acc = max(best_acc, acc)
            if acc >= self.accuracy_floor and epoch >= 2:
                break
        tape.reset()
        self.history_ = history
        self.holdout_accuracy_ = history[-1][1]
        if self.holdout_accuracy_ < self.accuracy_floor:
            raise RuntimeError(
                f"feature extractor reached {self.holdout_accuracy_:.3f} holdout accuracy "
                f"(best {best_acc:.3f}) after {len(history)} epochs, below the "
                f"{self.accuracy_floor:.2f} floor; last losses: "
                f"{[round(l, 4) for l, _ in history[-3:]]}"
            )
        return self

    def _accuracy(self, X: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(X) == y))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self._batched_eval(X, want_features=True)

    def predict(self, X) -> np.ndarray:
        logits = self._batched_eval(np.asarray(X, dtype=np.float64), want_features=False)
        return self.classes_[np.argmax(logits, axis=1)]

    def score(self, X, y) -> float:
        return self._accuracy(np.asarray(X, dtype=np.float64), np.asarray(y))

    # -- persistence ----------------------------------------------------------------

    def save(self, path) -> str:
        extra = {
            "hyperparameters": {
                "channels": self.channels,
                "feature_dim": self.feature_dim,
                "kernel": self.kernel,
            },
            "classes": [str(c) for c in self.classes_],
        }
        return save_checkpoint(path, "feature-extractor", self.store_.params, extra=extra)

    @classmethod
    def load(cls, path) -> "SignalFeatureExtractor":
        ckpt = load_checkpoint(path)
        if ckpt.kind != "feature-extractor":
            raise ValueError(f"checkpoint at {path} is a {ckpt.kind!r}, not a feature extractor")
        hp = ckpt.header["hyperparameters"]
        est = cls(channels=hp["channels"], feature_dim=hp["feature_dim"], kernel=hp["kernel"])
        est.store_ = ckpt.to_store()
        est.classes_ = np.array(ckpt.header["classes"])
        return est
