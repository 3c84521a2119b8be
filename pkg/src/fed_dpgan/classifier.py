"""Residual-MLP diagnosis classifier with local and centralized training."""

import logging
from dataclasses import dataclass

import numpy as np

from fed_dpgan.data import N_CLASSES, ClientShard, LabeledDataset
from fed_dpgan.errors import DataError, ParameterError, StructuralError
from fed_dpgan.nn import (
    Batch,
    LayerSpec,
    ModelSpec,
    ParameterVector,
    backward,
    forward,
    predict,
    sgd_step,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassifierConfig:
    spec: ModelSpec
    alpha: float = 0.01
    local_epochs: int = 5
    batch: int = 10
    classes: int = N_CLASSES

    def __post_init__(self):
        if self.spec.output_width != self.classes:
            raise StructuralError(
                f"classifier emits {self.spec.output_width} logits for {self.classes} classes"
            )
        if not any(layer.residual for layer in self.spec.layers):
            raise StructuralError("the classifier needs at least one residual layer")
        if self.local_epochs < 1 or self.batch < 1:
            raise ParameterError("local epochs and batch size must be >= 1")
        if self.alpha < 0:
            raise ParameterError(f"learning rate must be non-negative, got {self.alpha}")


def default_classifier_spec(
    d: int,
    width: int = 64,
    depth: int = 4,
    residual_layers: tuple[int, ...] = (2, 3),
    classes: int = N_CLASSES,
    seed: int = 0,
) -> ModelSpec:
    """``depth`` relu hidden layers of ``width``; 1-based ``residual_layers`` skip."""
    layers = [LayerSpec(d, width, "relu")]
    for index in range(2, depth + 1):
        layers.append(LayerSpec(width, width, "relu", residual=index in residual_layers))
    layers.append(LayerSpec(width, classes, "identity"))
    return ModelSpec(layers=tuple(layers), seed=seed)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.size != n:
        raise StructuralError(f"{n} logit rows but {labels.size} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError(f"labels must lie in 0..{k - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def loss_and_gradient(
    spec: ModelSpec, params: ParameterVector, inputs: np.ndarray, labels: np.ndarray
) -> tuple[float, ParameterVector]:
    trace = forward(spec, params, Batch(inputs))
    loss, d_logits = softmax_cross_entropy(trace.outputs, labels)
    return loss, backward(spec, params, trace, d_logits)


def train_epochs(
    params: ParameterVector,
    dataset: LabeledDataset,
    cfg: ClassifierConfig,
    rng: np.random.Generator,
    epochs: int,
) -> tuple[ParameterVector, list[float]]:
    """Mini-batch SGD over ``epochs`` reshuffled passes; returns per-step losses."""
    n = len(dataset)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            loss, grad = loss_and_gradient(
                cfg.spec, params, dataset.samples[idx], dataset.labels[idx]
            )
            params = sgd_step(params, grad, cfg.alpha)
            losses.append(loss)
    return params, losses


def local_train(
    params: ParameterVector,
    shard: ClientShard,
    cfg: ClassifierConfig,
    rng: np.random.Generator,
) -> ParameterVector:
    if shard.n_k == 0:
        raise DataError(f"client {shard.client_id} has an empty shard")
    return train_epochs(params, shard.dataset, cfg, rng, cfg.local_epochs)[0]


def train_centralized(
    params: ParameterVector,
    dataset: LabeledDataset,
    cfg: ClassifierConfig,
    rng: np.random.Generator,
    epochs: int,
) -> tuple[ParameterVector, list[float]]:
    """Pooled-data baseline: the same SGD loop over the whole training set."""
    return train_epochs(params, dataset, cfg, rng, epochs)


def evaluate_accuracy(params: ParameterVector, spec: ModelSpec, test: LabeledDataset) -> float:
    """Share of argmax hits; ties go to the lowest class id."""
    if len(test) == 0:
        raise DataError("cannot evaluate on an empty test set")
    predicted = np.argmax(predict(spec, params, test.samples), axis=1)
    return float(np.mean(predicted == test.labels))


def evaluate_loss(params: ParameterVector, spec: ModelSpec, test: LabeledDataset) -> float:
    logits = predict(spec, params, test.samples)
    return softmax_cross_entropy(logits, test.labels)[0]
