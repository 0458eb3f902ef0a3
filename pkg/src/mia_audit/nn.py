"""Minimal feed-forward classifier with from-scratch backpropagation.

Hidden layers use tanh (keeps finite-difference gradient checks
well-conditioned); the output layer is identity, with softmax applied inside
the loss. Training is plain SGD with momentum, L2 weight decay added to the
gradient, an optional per-step cosine learning-rate schedule annealing to
zero, and an optional differentially-private step (per-example clipping plus
Gaussian noise).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .seeding import derive_rng, derive_seed


@dataclass(frozen=True)
class DPConfig:
    """Per-example clipping norm and Gaussian noise multiplier."""

    clip_norm: float
    noise_multiplier: float

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be nonnegative")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 60
    cosine_schedule: bool = True
    seed: int = 0
    dp: DPConfig | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass(frozen=True)
class MLPClassifier:
    """Parameter set: weights[i] has shape (layer_sizes[i+1], layer_sizes[i])."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))
        sizes = self.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("parameter count does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ValueError(f"weight {i} has shape {w.shape}, expected {(sizes[i + 1], sizes[i])}")
            if b.shape != (sizes[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected {(sizes[i + 1],)}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i} has non-finite parameters")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list in the fixed order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "MLPClassifier":
        weights = tuple(params[2 * i] for i in range(len(self.weights)))
        biases = tuple(params[2 * i + 1] for i in range(len(self.biases)))
        return MLPClassifier(self.layer_sizes, weights, biases, self.activation)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MLPClassifier":
        return cls(
            layer_sizes=tuple(payload["layer_sizes"]),
            weights=tuple(np.array(w) for w in payload["weights"]),
            biases=tuple(np.array(b) for b in payload["biases"]),
            activation=payload.get("activation", "tanh"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MLPClassifier":
        return cls.from_dict(json.loads(text))


def init_classifier(layer_sizes, seed: int) -> MLPClassifier:
    """Weights ~ N(0, 1/fan_in), biases zero; deterministic per seed."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError(f"need at least 2 layer sizes, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = derive_rng(seed, "init", *sizes)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPClassifier(sizes, tuple(weights), tuple(biases))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _forward_cached(model: MLPClassifier, x: np.ndarray) -> list[np.ndarray]:
    """Activations per layer, a[0] = input, a[-1] = logits."""
    acts = [x]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def _as_batch(model: MLPClassifier, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"input of shape {x.shape} does not match input dim {model.input_dim}")
    return x, single


def forward(model: MLPClassifier, x: np.ndarray) -> np.ndarray:
    """Logits for one feature vector or a (n, d) batch."""
    batch, single = _as_batch(model, x)
    logits = _forward_cached(model, batch)[-1]
    return logits[0] if single else logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], computed in log-sum-exp form."""
    z = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < z.shape[-1]):
        raise ValueError(f"label {label} out of range for {z.shape[-1]} classes")
    return float(-_log_softmax(z)[..., label])


def per_sample_loss(model: MLPClassifier, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-entropy of each sample under the model, shape (n,)."""
    batch, single = _as_batch(model, x)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    logp = _log_softmax(_forward_cached(model, batch)[-1])
    out = -logp[np.arange(len(y)), y]
    return out[0] if single else out


def _output_delta(model, acts, y, loss: str) -> tuple[np.ndarray, float]:
    """Gradient of the mean loss w.r.t. logits, and the mean loss itself."""
    logits = acts[-1]
    n = logits.shape[0]
    if loss == "ce":
        logp = _log_softmax(logits)
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        mean_loss = float(-logp[np.arange(n), y].mean())
    elif loss == "bce":
        if model.output_dim != 1:
            raise ValueError("bce loss requires a single output unit")
        z = logits[:, 0]
        t = np.asarray(y, dtype=np.float64)
        # softplus(z) - t*z, stable for large |z|
        mean_loss = float((np.maximum(z, 0.0) - t * z + np.log1p(np.exp(-np.abs(z)))).mean())
        delta = (sigmoid(z) - t)[:, None]
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return delta, mean_loss


def backward(model: MLPClassifier, x: np.ndarray, y: np.ndarray, loss: str = "ce"):
    """Mean-over-batch gradients of the loss w.r.t. every parameter.

    Returns (gradients, mean_loss) with gradients in parameters() order.
    """
    batch, _ = _as_batch(model, np.atleast_2d(x))
    y = np.atleast_1d(np.asarray(y))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    if len(y) != batch.shape[0]:
        raise ValueError(f"{len(y)} labels for {batch.shape[0]} samples")
    acts = _forward_cached(model, batch)
    delta, mean_loss = _output_delta(model, acts, y, loss)
    delta = delta / batch.shape[0]
    grads: list[np.ndarray] = []
    for l in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))            # bias
        grads.append(delta.T @ acts[l])            # weight
        if l > 0:
            delta = (delta @ model.weights[l]) * (1.0 - acts[l] ** 2)
    grads.reverse()
    return grads, mean_loss


def per_example_gradients(model: MLPClassifier, x: np.ndarray, y: np.ndarray, loss: str = "ce"):
    """Per-example gradients stacked on a leading batch axis, plus the mean loss."""
    batch, _ = _as_batch(model, np.atleast_2d(x))
    y = np.atleast_1d(np.asarray(y))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    acts = _forward_cached(model, batch)
    delta, mean_loss = _output_delta(model, acts, y, loss)
    grads: list[np.ndarray] = []
    for l in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.copy())                               # bias, (n, out)
        grads.append(np.einsum("no,ni->noi", delta, acts[l]))    # weight, (n, out, in)
        if l > 0:
            delta = (delta @ model.weights[l]) * (1.0 - acts[l] ** 2)
    grads.reverse()
    return grads, mean_loss


def grad_sq_norms(model: MLPClassifier, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared L2 norm of each sample's full cross-entropy gradient.

    Uses ||outer(d, a)||_F^2 = |d|^2 |a|^2 per layer, so nothing is
    materialized per example.
    """
    batch, _ = _as_batch(model, np.atleast_2d(x))
    y = np.atleast_1d(np.asarray(y))
    acts = _forward_cached(model, batch)
    delta, _ = _output_delta(model, acts, y, "ce")
    norms = np.zeros(batch.shape[0])
    for l in range(len(model.weights) - 1, -1, -1):
        d2 = (delta**2).sum(axis=1)
        norms += d2 * (acts[l] ** 2).sum(axis=1) + d2
        if l > 0:
            delta = (delta @ model.weights[l]) * (1.0 - acts[l] ** 2)
    return norms


def schedule_lr(config: TrainingConfig, step: int, total_steps: int) -> float:
    """Per-step learning rate: cosine from learning_rate down to 0, or constant."""
    if not config.cosine_schedule:
        return config.learning_rate
    if total_steps <= 0:
        return config.learning_rate
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def zero_velocity(model: MLPClassifier) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in model.parameters()]


def sgd_step(model, gradients, config: TrainingConfig, velocity=None, step: int = 0, total_steps: int = 1):
    """One momentum-SGD update; returns (updated model, updated velocity).

    Effective gradient is g + weight_decay * theta; velocity accumulates it
    with the momentum factor and the scheduled learning rate scales the step.
    """
    params = model.parameters()
    if len(gradients) != len(params):
        raise ValueError(f"{len(gradients)} gradients for {len(params)} parameters")
    for g, p in zip(gradients, params):
        if np.shape(g) != p.shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter shape {p.shape}")
    if velocity is None:
        velocity = zero_velocity(model)
    lr = schedule_lr(config, step, total_steps)
    new_params = []
    new_velocity = []
    for p, g, v in zip(params, gradients, velocity):
        eff = g + config.weight_decay * p
        v_next = config.momentum * v + eff
        new_params.append(p - lr * v_next)
        new_velocity.append(v_next)
    return model.with_parameters(new_params), new_velocity


def clip_per_example(per_grads: list[np.ndarray], clip_norm: float) -> list[np.ndarray]:
    """Rescale each example's flattened gradient to norm at most clip_norm."""
    n = per_grads[0].shape[0]
    sq = np.zeros(n)
    for g in per_grads:
        sq += (g.reshape(n, -1) ** 2).sum(axis=1)
    norms = np.sqrt(sq)
    scale = np.where(norms > clip_norm, np.divide(clip_norm, norms, out=np.ones(n), where=norms > 0), 1.0)
    return [g * scale.reshape((n,) + (1,) * (g.ndim - 1)) for g in per_grads]


def dp_sgd_step(model, per_grads, config: TrainingConfig, rng: np.random.Generator,
                velocity=None, step: int = 0, total_steps: int = 1):
    """Clip per-example gradients, average, add Gaussian noise, then update.

    Noise has per-coordinate standard deviation noise_multiplier * clip_norm /
    batch_size. With noise_multiplier 0 and no clipping active this reduces
    exactly to sgd_step on the mean gradient (no rng draw is made).
    """
    if config.dp is None:
        raise ValueError("dp_sgd_step requires a TrainingConfig with dp set")
    if per_grads[0].shape[0] == 0:
        raise ValueError("empty batch")
    n = per_grads[0].shape[0]
    clipped = clip_per_example(per_grads, config.dp.clip_norm)
    mean = [g.mean(axis=0) for g in clipped]
    if config.dp.noise_multiplier > 0:
        std = config.dp.noise_multiplier * config.dp.clip_norm / n
        mean = [g + rng.normal(0.0, std, size=g.shape) for g in mean]
    return sgd_step(model, mean, config, velocity, step, total_steps)


def train(x: np.ndarray, y: np.ndarray, config: TrainingConfig, layer_sizes,
          loss: str = "ce", return_loss_history: bool = False):
    """Train an MLP over seeded shuffled batches; pure function of (data, config).

    Runs epochs * ceil(n / batch_size) update steps (the last batch of an
    epoch may be short). Initialization, batch order, and DP noise each use
    rng streams derived from config.seed, so results are bit-reproducible.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training slice must be a nonempty (n, d) matrix")
    if len(y) != x.shape[0]:
        raise ValueError(f"{len(y)} labels for {x.shape[0]} samples")
    model = init_classifier(layer_sizes, derive_seed(config.seed, "model-init"))
    n = x.shape[0]
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    shuffle_rng = derive_rng(config.seed, "batch-order")
    noise_rng = derive_rng(config.seed, "dp-noise") if config.dp is not None else None
    velocity = zero_velocity(model)
    history: list[float] = []
    step = 0
    for _ in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            bx, by = x[idx], y[idx]
            if config.dp is not None:
                per_grads, batch_loss = per_example_gradients(model, bx, by, loss)
                model, velocity = dp_sgd_step(model, per_grads, config, noise_rng,
                                              velocity, step, total_steps)
            else:
                grads, batch_loss = backward(model, bx, by, loss)
                model, velocity = sgd_step(model, grads, config, velocity, step, total_steps)
            epoch_loss += batch_loss * len(idx)
            step += 1
        history.append(epoch_loss / n)
    if return_loss_history:
        return model, history
    return model


def accuracy(model: MLPClassifier, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of samples whose argmax logit matches the label (ties -> lowest index)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    if x.shape[0] == 0:
        raise ValueError("empty slice")
    preds = np.argmax(forward(model, x), axis=1)
    return float(np.mean(preds == y))
