"""Probabilistic classifiers backing the denoiser.

Two built-ins: a multinomial logistic regression trained by full-batch
gradient descent on L2-regularized cross-entropy, and a k-nearest-neighbors
model with add-one smoothed vote fractions. Both expose row-stochastic
predict_proba. Any object with fit-compatible construction and a
predict_proba(features) method can be plugged in instead (e.g. an external
SVM).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ClassifierError(ValueError):
    """Bad classifier configuration or training input."""


@dataclass(frozen=True)
class ClassifierSpec:
    """Classifier kind plus hyperparameters.

    logistic_regression: l2 (ridge strength), iterations, learning_rate.
    knn: k (neighbor count, Euclidean distance).
    """

    kind: str = "logistic_regression"
    l2: float = 1e-3
    iterations: int = 500
    learning_rate: float = 0.1
    k: int = 5

    def __post_init__(self):
        if self.kind not in ("logistic_regression", "knn"):
            raise ClassifierError(f"unknown classifier kind {self.kind!r}")
        if self.l2 < 0:
            raise ClassifierError(f"l2 must be >= 0, got {self.l2}")
        if self.iterations < 1:
            raise ClassifierError(f"iterations must be >= 1, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ClassifierError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.k < 1:
            raise ClassifierError(f"k must be >= 1, got {self.k}")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


class LogisticRegressionModel:
    """Weights, bias, and the per-iteration training-loss trace."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, loss_trace):
        self.weights = weights
        self.bias = bias
        self.loss_trace = list(loss_trace)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def predict_proba(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[1] != self.weights.shape[0]:
            raise ClassifierError(
                f"feature dimension {features.shape[1:]} does not match "
                f"training dimension {self.weights.shape[0]}"
            )
        return _softmax(features @ self.weights + self.bias)


class KnnModel:
    """Stored training set; votes of the k nearest points, add-one smoothed."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, k: int, n_classes: int):
        self._features = features
        self._labels = labels
        self.k = k
        self.n_classes = n_classes
        self._train_sq = (features**2).sum(axis=1)

    def predict_proba(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[1] != self._features.shape[1]:
            raise ClassifierError(
                f"feature dimension {features.shape[1:]} does not match "
                f"training dimension {self._features.shape[1]}"
            )
        # squared Euclidean distances; ordering ties break by training index
        # via the stable sort
        sq = (
            (features**2).sum(axis=1)[:, None]
            + self._train_sq[None, :]
            - 2.0 * features @ self._features.T
        )
        order = np.argsort(sq, axis=1, kind="stable")[:, : self.k]
        votes = np.zeros((features.shape[0], self.n_classes), dtype=float)
        neighbor_labels = self._labels[order]
        for c in range(self.n_classes):
            votes[:, c] = (neighbor_labels == c).sum(axis=1)
        return (votes + 1.0) / (self.k + self.n_classes)


def _validate_training_input(features, labels):
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if features.ndim != 2:
        raise ClassifierError(f"features must be 2-D, got shape {features.shape}")
    if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
        raise ClassifierError("labels must be one class index per feature row")
    if not np.isfinite(features).all():
        raise ClassifierError("features contain non-finite values")
    if labels.size == 0:
        raise ClassifierError("empty training set")
    if labels.min() < 0:
        raise ClassifierError("labels must be nonnegative class indices")
    n_classes = int(labels.max()) + 1
    if n_classes < 2:
        raise ClassifierError("training set must contain at least two classes")
    counts = np.bincount(labels, minlength=n_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ClassifierError(f"class {int(empty[0])} has zero samples")
    return features, labels, n_classes


def _fit_logistic_regression(spec, features, labels, n_classes):
    n, d = features.shape
    weights = np.zeros((d, n_classes))
    bias = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    trace = []
    for _ in range(spec.iterations):
        logits = features @ weights + bias
        log_probs = _log_softmax(logits)
        loss = -log_probs[np.arange(n), labels].mean() + 0.5 * spec.l2 * float(
            (weights**2).sum()
        )
        trace.append(loss)
        residual = (np.exp(log_probs) - onehot) / n
        weights -= spec.learning_rate * (features.T @ residual + spec.l2 * weights)
        bias -= spec.learning_rate * residual.sum(axis=0)
    return LogisticRegressionModel(weights, bias, trace)


def fit(spec: ClassifierSpec, features, labels):
    """Train a classifier per spec; returns a model with predict_proba."""
    features, labels, n_classes = _validate_training_input(features, labels)
    if spec.kind == "logistic_regression":
        return _fit_logistic_regression(spec, features, labels, n_classes)
    if spec.k > features.shape[0]:
        raise ClassifierError(
            f"k={spec.k} exceeds training-set size {features.shape[0]}"
        )
    return KnnModel(features, labels, spec.k, n_classes)


def predict_proba(model, features) -> np.ndarray:
    """Row-stochastic class probabilities for each feature row."""
    return model.predict_proba(features)
