"""Downstream classifier: a two-hidden-layer ReLU MLP trained with
mini-batch SGD + classical momentum on softmax cross-entropy.

Everything is plain numpy in float64 so training runs are deterministic
bit-for-bit for a fixed seed on one platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "MLPParams",
    "TrainConfig",
    "TrainingDiverged",
    "init_mlp",
    "forward",
    "predict_proba",
    "cross_entropy_loss",
    "train",
    "evaluate",
    "grad_check",
    "params_to_blob",
    "params_from_blob",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class MLPParams:
    """Weights and biases of the classifier; activation is ReLU."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        d_in, h1 = self.w1.shape
        h1b, h2 = self.w2.shape
        h2b, k = self.w3.shape
        if (h1, h2) != (h1b, h2b) or self.b1.shape != (h1,) or self.b2.shape != (h2,) or self.b3.shape != (k,):
            raise ValueError("inconsistent layer shapes")
        for arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters must be finite")

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w3.shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return (self.w1.shape[1], self.w2.shape[1])

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.5
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def init_mlp(d_in: int, hidden: tuple[int, int], num_classes: int, seed: int) -> MLPParams:
    """Scaled-uniform weight init (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    if min(d_in, hidden[0], hidden[1], num_classes) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return MLPParams(
        w1=layer(d_in, hidden[0]),
        b1=np.zeros(hidden[0]),
        w2=layer(hidden[0], hidden[1]),
        b2=np.zeros(hidden[1]),
        w3=layer(hidden[1], num_classes),
        b3=np.zeros(num_classes),
    )


def _forward_raw(arrays, x: np.ndarray):
    w1, b1, w2, b2, w3, b3 = arrays
    z1 = x @ w1 + b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ w2 + b2
    h2 = np.maximum(z2, 0.0)
    logits = h2 @ w3 + b3
    return z1, h1, z2, h2, logits


def _forward_parts(params: MLPParams, x: np.ndarray):
    return _forward_raw(params.arrays(), x)


def forward(params: MLPParams, batch: np.ndarray) -> np.ndarray:
    """Logits for a batch of rows."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ValueError(f"expected {params.d_in} input columns, got shape {x.shape}")
    return _forward_parts(params, x)[4]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(params: MLPParams, batch: np.ndarray) -> np.ndarray:
    """Softmax class probabilities; rows sum to 1."""
    return _softmax(forward(params, batch))


def cross_entropy_loss(params: MLPParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy over the given rows."""
    logits = forward(params, features)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(labels.size), labels].mean())


def _gradients_raw(arrays, x: np.ndarray, labels: np.ndarray):
    """Analytic gradients of the mean cross-entropy; returns (grads, loss)."""
    w2, w3 = arrays[2], arrays[4]
    n = x.shape[0]
    z1, h1, z2, h2, logits = _forward_raw(arrays, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())

    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    dw3 = h2.T @ delta
    db3 = delta.sum(axis=0)
    d_h2 = delta @ w3.T
    d_z2 = d_h2 * (z2 > 0)
    dw2 = h1.T @ d_z2
    db2 = d_z2.sum(axis=0)
    d_h1 = d_z2 @ w2.T
    d_z1 = d_h1 * (z1 > 0)
    dw1 = x.T @ d_z1
    db1 = d_z1.sum(axis=0)
    return (dw1, db1, dw2, db2, dw3, db3), loss


def _gradients(params: MLPParams, x: np.ndarray, labels: np.ndarray):
    return _gradients_raw(params.arrays(), x, labels)


def train(
    params: MLPParams, features: np.ndarray, labels: np.ndarray, cfg: TrainConfig
) -> MLPParams:
    """Run shuffled mini-batch SGD with classical momentum.

    Velocity update per batch: ``v <- momentum * v - lr * grad`` then
    ``w <- w + v``.  The input params are not mutated.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != y.shape[0]:
        raise ValueError("features and labels must have equal row counts")
    if y.size and y.max() >= params.num_classes:
        raise ValueError("label value exceeds num_classes")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")

    weights = [a.copy() for a in params.arrays()]
    velocity = [np.zeros_like(a) for a in weights]
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads, loss = _gradients_raw(weights, x[batch], y[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch offset {start} "
                    f"(lr={cfg.learning_rate}, momentum={cfg.momentum})"
                )
            for i, g in enumerate(grads):
                velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * g
                weights[i] = weights[i] + velocity[i]
    return MLPParams(*weights)


def evaluate(params: MLPParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax logit matches the label (argmax ties
    resolve toward the smaller class index)."""
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    predictions = np.argmax(forward(params, features), axis=1)
    return float(np.mean(predictions == y))


def grad_check(
    params: MLPParams,
    batch: np.ndarray,
    labels: np.ndarray,
    eps: float,
    max_checked: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter, or a seeded random subset of ``max_checked``
    for larger nets.  Central differences are only meaningful away from
    ReLU kinks: an instance with a pre-activation within ``eps`` of zero
    (e.g. zero biases plus a fully dead hidden row) measures the average
    of two one-sided slopes and will disagree with the subgradient.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    grads, _ = _gradients(params, x, y)
    flat_grad = np.concatenate([g.ravel() for g in grads])
    flat_params = np.concatenate([a.ravel() for a in params.arrays()])

    total = flat_params.size
    if total > max_checked:
        idx = np.random.default_rng(seed).choice(total, size=max_checked, replace=False)
    else:
        idx = np.arange(total)

    shapes = [a.shape for a in params.arrays()]
    sizes = [a.size for a in params.arrays()]

    def loss_at(theta: np.ndarray) -> float:
        arrays = []
        offset = 0
        for shape, size in zip(shapes, sizes):
            arrays.append(theta[offset : offset + size].reshape(shape))
            offset += size
        return cross_entropy_loss(MLPParams(*arrays), x, y)

    worst = 0.0
    for i in idx:
        theta = flat_params.copy()
        theta[i] = flat_params[i] + eps
        up = loss_at(theta)
        theta[i] = flat_params[i] - eps
        down = loss_at(theta)
        numeric = (up - down) / (2.0 * eps)
        analytic = flat_grad[i]
        denom = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def params_to_blob(params: MLPParams) -> tuple[str, bytes]:
    """Serialize to a JSON shape header plus a flat float64 blob."""
    header = json.dumps(
        {
            "d_in": params.d_in,
            "hidden": list(params.hidden_sizes),
            "num_classes": params.num_classes,
        }
    )
    blob = np.concatenate([a.ravel() for a in params.arrays()]).astype("<f8").tobytes()
    return header, blob


def params_from_blob(header: str, blob: bytes) -> MLPParams:
    meta = json.loads(header)
    d_in, (h1, h2), k = meta["d_in"], meta["hidden"], meta["num_classes"]
    flat = np.frombuffer(blob, dtype="<f8")
    shapes = [(d_in, h1), (h1,), (h1, h2), (h2,), (h2, k), (k,)]
    arrays = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    if offset != flat.size:
        raise ValueError("blob size inconsistent with header shapes")
    return MLPParams(*arrays)


def clone_config(cfg: TrainConfig, **changes) -> TrainConfig:
    """Convenience wrapper over dataclasses.replace."""
    return replace(cfg, **changes)
