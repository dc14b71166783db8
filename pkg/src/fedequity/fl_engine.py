"""Minimal federated averaging engine over multinomial logistic regression.

Model parameters live in one flat float64 vector: the per-class weight
rows first, then the per-class biases, so the dimension is
``num_classes * (num_features + 1)``. All losses are softmax
cross-entropy. Local training is plain mini-batch SGD; the server adds
the learning-rate-scaled mean of the client deltas to the global
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "LocalUpdate",
    "TrainConfig",
    "sample_loss",
    "local_loss",
    "global_loss",
    "sample_gradient",
    "local_train",
    "aggregate",
    "evaluate",
]


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus its layout."""

    vector: np.ndarray
    num_classes: int
    num_features: int

    def __post_init__(self):
        expected = self.num_classes * (self.num_features + 1)
        if self.vector.ndim != 1 or self.vector.size != expected:
            raise ValueError(
                f"parameter vector must have {expected} entries, got shape "
                f"{self.vector.shape}"
            )
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("parameter vector contains non-finite entries")

    @classmethod
    def zeros(cls, num_classes: int, num_features: int) -> "ModelParams":
        return cls(
            vector=np.zeros(num_classes * (num_features + 1)),
            num_classes=num_classes,
            num_features=num_features,
        )

    @property
    def weights(self) -> np.ndarray:
        """(num_classes, num_features) view of the weight rows."""
        split = self.num_classes * self.num_features
        return self.vector[:split].reshape(self.num_classes, self.num_features)

    @property
    def biases(self) -> np.ndarray:
        return self.vector[self.num_classes * self.num_features :]


@dataclass(frozen=True)
class LocalUpdate:
    """One client's contribution: local minus global parameters."""

    client_id: int
    delta: np.ndarray
    sample_count: int
    local_loss: float


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD and server aggregation knobs.

    ``local_lr`` may be zero (produces a zero update, useful as a
    control). ``poison_scale`` multiplies the negated delta of clients
    marked with the update-negation attack.
    """

    local_epochs: int = 1
    batch_size: int = 8
    local_lr: float = 0.1
    global_lr: float = 1.0
    seed: int = 0
    poison_scale: float = 1.0

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.local_lr < 0:
            raise ValueError("local_lr must be >= 0")
        if self.global_lr <= 0:
            raise ValueError("global_lr must be positive")
        if self.poison_scale <= 0:
            raise ValueError("poison_scale must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _split(vector: np.ndarray, num_classes: int, num_features: int):
    cut = num_classes * num_features
    return vector[:cut].reshape(num_classes, num_features), vector[cut:]


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_sample(params: ModelParams, x: np.ndarray, y: int) -> None:
    if x.shape != (params.num_features,):
        raise ValueError(
            f"feature vector has shape {x.shape}, expected ({params.num_features},)"
        )
    if not 0 <= int(y) < params.num_classes:
        raise ValueError(f"label {y} outside [0, {params.num_classes})")


def sample_loss(params: ModelParams, x: np.ndarray, y: int) -> float:
    """Cross-entropy of the softmax linear model on one sample."""
    x = np.asarray(x, dtype=float)
    _check_sample(params, x, y)
    weights, biases = _split(params.vector, params.num_classes, params.num_features)
    scores = (weights @ x + biases)[None, :]
    return float(-_log_softmax(scores)[0, int(y)])


def _batch_losses(
    vector: np.ndarray,
    num_classes: int,
    num_features: int,
    features: np.ndarray,
    labels: np.ndarray,
) -> np.ndarray:
    weights, biases = _split(vector, num_classes, num_features)
    scores = features @ weights.T + biases
    return -_log_softmax(scores)[np.arange(len(labels)), labels]


def local_loss(params: ModelParams, dataset) -> float:
    """Mean sample loss over one client's dataset."""
    if len(dataset.labels) == 0:
        raise ValueError("cannot compute the loss of an empty dataset")
    losses = _batch_losses(
        params.vector,
        params.num_classes,
        params.num_features,
        dataset.features,
        dataset.labels,
    )
    return float(losses.mean())


def global_loss(params: ModelParams, datasets) -> float:
    """Sample-weighted pooled mean loss over all clients' data."""
    total_loss = 0.0
    total_count = 0
    for ds in datasets:
        n = len(ds.labels)
        if n == 0:
            continue
        losses = _batch_losses(
            params.vector,
            params.num_classes,
            params.num_features,
            ds.features,
            ds.labels,
        )
        total_loss += float(losses.sum())
        total_count += n
    if total_count == 0:
        raise ValueError("all datasets are empty")
    return total_loss / total_count


def sample_gradient(params: ModelParams, x: np.ndarray, y: int) -> np.ndarray:
    """Analytic gradient of ``sample_loss`` w.r.t. the flat vector.

    For softmax cross-entropy the residual is ``p - onehot(y)``; the
    weight-row gradients are its outer product with the features and
    the bias gradients are the residual itself.
    """
    x = np.asarray(x, dtype=float)
    _check_sample(params, x, y)
    weights, biases = _split(params.vector, params.num_classes, params.num_features)
    scores = (weights @ x + biases)[None, :]
    residual = np.exp(_log_softmax(scores))[0]
    residual[int(y)] -= 1.0
    return np.concatenate([np.outer(residual, x).ravel(), residual])


def _batch_gradient(
    vector: np.ndarray,
    num_classes: int,
    num_features: int,
    features: np.ndarray,
    labels: np.ndarray,
) -> np.ndarray:
    weights, biases = _split(vector, num_classes, num_features)
    scores = features @ weights.T + biases
    residual = np.exp(_log_softmax(scores))
    residual[np.arange(len(labels)), labels] -= 1.0
    n = len(labels)
    grad_w = residual.T @ features / n
    grad_b = residual.mean(axis=0)
    return np.concatenate([grad_w.ravel(), grad_b])


def local_train(global_params: ModelParams, dataset, cfg: TrainConfig, seed) -> LocalUpdate:
    """Run local mini-batch SGD from the global parameters.

    The sample order is reshuffled each epoch from the given seed; the
    last partial batch is kept. Clients flagged for the update-negation
    attack return their delta negated and scaled by ``poison_scale``.
    Deterministic given (params, dataset, cfg, seed).
    """
    features = dataset.features
    labels = dataset.labels
    n = len(labels)
    if n == 0:
        raise ValueError(f"client {dataset.client_id} has no training samples")

    rng = np.random.default_rng(seed)
    vector = global_params.vector.copy()
    num_classes = global_params.num_classes
    num_features = global_params.num_features
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grad = _batch_gradient(
                vector, num_classes, num_features, features[idx], labels[idx]
            )
            vector -= cfg.local_lr * grad

    if not np.all(np.isfinite(vector)):
        raise ValueError(f"local training diverged on client {dataset.client_id}")

    delta = vector - global_params.vector
    if getattr(dataset, "poisoned", False) and getattr(dataset, "poison_mode", None) == "update_negate":
        delta = -cfg.poison_scale * delta

    losses = _batch_losses(vector, num_classes, num_features, features, labels)
    return LocalUpdate(
        client_id=dataset.client_id,
        delta=delta,
        sample_count=n,
        local_loss=float(losses.mean()),
    )


def aggregate(
    global_params: ModelParams,
    updates: list[LocalUpdate],
    global_lr: float = 1.0,
    sample_weighted: bool = False,
) -> ModelParams:
    """New global parameters: old plus the scaled mean of the deltas.

    The default is the unweighted mean over clients;
    ``sample_weighted=True`` weights each delta by its sample count.
    """
    if not updates:
        raise ValueError("no local updates to aggregate")
    deltas = np.stack([u.delta for u in updates])
    if deltas.shape[1] != global_params.vector.size:
        raise ValueError("update dimension does not match the global model")
    if sample_weighted:
        counts = np.array([u.sample_count for u in updates], dtype=float)
        mean_delta = counts @ deltas / counts.sum()
    else:
        mean_delta = deltas.mean(axis=0)
    return ModelParams(
        vector=global_params.vector + global_lr * mean_delta,
        num_classes=global_params.num_classes,
        num_features=global_params.num_features,
    )


def evaluate(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Accuracy (argmax, ties to the lowest class index) and mean loss."""
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    weights, biases = _split(params.vector, params.num_classes, params.num_features)
    scores = features @ weights.T + biases
    predictions = np.argmax(scores, axis=1)
    accuracy = float(np.mean(predictions == labels))
    log_probs = _log_softmax(scores)
    loss = float(-log_probs[np.arange(len(labels)), labels].mean())
    return accuracy, loss
