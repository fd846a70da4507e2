"""Sigmoid MLP frame classifier with exact backprop down to the inputs.

Losses and gradients are sums over the batch, not means, so the input
gradient returned by :func:`backward` is literally the derivative of the
summed cross-entropy of a minibatch.
"""
from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax

PROB_FLOOR = 1e-30
EVAL_CHUNK = 8192


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (256, 256, 256, 256)
    n_classes: int = 2
    seed: int = 0
    activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.activation != "sigmoid":
            raise TrainingError("only sigmoid hidden units are supported")
        if self.input_dim <= 0 or self.n_classes <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise TrainingError("all layer sizes must be positive")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.n_classes]


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise TrainingError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise TrainingError(f"layer {i}: bias shape {b.shape} vs weights {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise TrainingError(f"layer {i}: shape chain broken")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.008
    halve_threshold: float = 0.5
    stop_threshold: float = 0.1
    batch_size: int = 256
    max_epochs: int = 20
    validation_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.stop_threshold <= self.halve_threshold:
            raise TrainingError("need 0 < stop_threshold <= halve_threshold")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise TrainingError("batch_size and max_epochs must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise TrainingError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    val_accuracy: list[float]
    learning_rates: list[float]
    train_loss: list[float]
    initial_val_accuracy: float
    stop_reason: str
    wall_time: float = field(default=0.0, compare=False)

    @property
    def epochs(self) -> int:
        return len(self.val_accuracy)


def init_model(cfg: MlpConfig) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    weights, biases = [], []
    dims = cfg.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def _check_input(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise TrainingError(f"expected input of shape (n, {model.input_dim}), got {x.shape}")
    return x


def _activations(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    acts = [x]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        acts.append(expit(acts[-1] @ w + b))
    logits = acts[-1] @ model.weights[-1] + model.biases[-1]
    return acts, log_softmax(logits, axis=1)


def forward(model: MlpModel, batch) -> np.ndarray:
    """Posterior matrix, one softmax row per input row."""
    x = _check_input(model, batch)
    _, logp = _activations(model, x)
    return np.exp(logp)


def log_posteriors(model: MlpModel, batch) -> np.ndarray:
    x = _check_input(model, batch)
    chunks = [_activations(model, x[i:i + EVAL_CHUNK])[1] for i in range(0, len(x), EVAL_CHUNK)]
    return np.vstack(chunks)


def _check_labels(model: MlpModel, labels, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise TrainingError("one label per input row required")
    if n and (labels.min() < 0 or labels.max() >= model.n_classes):
        raise TrainingError(f"labels must lie in [0, {model.n_classes})")
    return labels


def cross_entropy(model: MlpModel, batch, labels) -> float:
    """Summed cross-entropy of the batch."""
    logp = log_posteriors(model, batch)
    labels = _check_labels(model, labels, logp.shape[0])
    picked = logp[np.arange(labels.shape[0]), labels]
    return float(-np.sum(np.maximum(picked, np.log(PROB_FLOOR))))


def _backprop(model: MlpModel, x: np.ndarray, labels: np.ndarray, need_params: bool):
    acts, logp = _activations(model, x)
    rows = np.arange(x.shape[0])
    loss = float(-np.sum(np.maximum(logp[rows, labels], np.log(PROB_FLOOR))))
    delta = np.exp(logp)
    delta[rows, labels] -= 1.0
    grads = []
    for layer in range(model.n_layers - 1, -1, -1):
        a = acts[layer]
        if need_params:
            grads.append((a.T @ delta, delta.sum(axis=0)))
        delta = delta @ model.weights[layer].T
        if layer:
            delta *= a * (1.0 - a)
    return (grads[::-1] if need_params else None), delta, loss


def backward(model: MlpModel, batch, labels, need_params: bool = True):
    """Gradients of the summed cross-entropy.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is a list of
    ``(dW, db)`` pairs aligned with the layers (``None`` when
    ``need_params`` is false) and ``input_grad`` has the batch's shape.
    """
    x = _check_input(model, batch)
    labels = _check_labels(model, labels, x.shape[0])
    grads, dx, _ = _backprop(model, x, labels, need_params)
    return grads, dx


def input_gradient(model: MlpModel, batch, labels) -> np.ndarray:
    return backward(model, batch, labels, need_params=False)[1]


def predict(model: MlpModel, batch) -> np.ndarray:
    return np.argmax(log_posteriors(model, batch), axis=1)


def frame_accuracy(model: MlpModel, x, y) -> float:
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise TrainingError("no frames to score")
    return 100.0 * float(np.mean(predict(model, x) == y))


def frame_error_rate(model: MlpModel, data) -> float:
    """Percentage of frames whose argmax class differs from the label."""
    x, y = data
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise TrainingError("no frames to score")
    return 100.0 * float(np.mean(predict(model, x) != y))


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([seed, 0]).permutation(n)
    n_val = int(round(fraction * n))
    if fraction > 0:
        n_val = max(n_val, 1)
    return perm[n_val:], perm[:n_val]


def train_sgd(model: MlpModel, train, cfg: TrainConfig) -> tuple[MlpModel, TrainReport]:
    """Minibatch SGD with validation-driven learning-rate halving.

    The lr stays at ``initial_lr`` while each epoch improves validation
    frame accuracy by at least ``halve_threshold`` points; from the first
    epoch that does not, it is halved before every following epoch.
    Training stops once an epoch improves by less than ``stop_threshold``
    points or after ``max_epochs``. When ``validation_fraction`` is 0 the
    training data itself is monitored.
    """
    t0 = time.perf_counter()
    x, y = train
    x = _check_input(model, x)
    y = _check_labels(model, y, x.shape[0])
    if x.shape[0] == 0:
        raise TrainingError("empty training data")
    tr_idx, val_idx = split_validation(x.shape[0], cfg.validation_fraction, cfg.seed)
    if val_idx.size == 0:
        val_idx = tr_idx
    if cfg.batch_size > tr_idx.size:
        raise TrainingError(f"batch_size {cfg.batch_size} exceeds training size {tr_idx.size}")
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    model = model.copy()
    rng = np.random.default_rng([cfg.seed, 1])
    lr = cfg.initial_lr
    halving = False
    prev_acc = frame_accuracy(model, x_val, y_val)
    initial_acc = prev_acc
    accs, lrs, losses = [], [], []
    stop_reason = "max_epochs"
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(x_tr.shape[0])
        loss = 0.0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            grads, _, batch_loss = _backprop(model, xb, yb, True)
            loss += batch_loss
            for layer, (dw, db) in enumerate(grads):
                model.weights[layer] -= lr * dw
                model.biases[layer] -= lr * db
        loss /= x_tr.shape[0]
        acc = frame_accuracy(model, x_val, y_val)
        accs.append(acc)
        lrs.append(lr)
        losses.append(loss)
        gain = acc - prev_acc
        prev_acc = acc
        if not np.all(np.isfinite(model.weights[0])):
            raise TrainingError("training diverged (non-finite weights)")
        if epoch + 1 == cfg.max_epochs:
            break
        if gain < cfg.stop_threshold:
            stop_reason = "converged"
            break
        if gain < cfg.halve_threshold:
            halving = True
        if halving:
            lr *= 0.5
    report = TrainReport(accs, lrs, losses, initial_acc, stop_reason,
                         wall_time=time.perf_counter() - t0)
    return model, report


# --- persistence -----------------------------------------------------------

_MODEL_MAGIC = b"CWM1"


def save_model(path, model: MlpModel) -> None:
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", model.n_layers))
        for w, b in zip(model.weights, model.biases):
            fh.write(struct.pack("<II", *w.shape))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _MODEL_MAGIC:
        raise TrainingError(f"{path}: bad magic {raw[:4]!r}")
    (n_layers,) = struct.unpack_from("<I", raw, 4)
    pos = 8
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", raw, pos)
        pos += 8
        w = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=pos)
        pos += 4 * rows * cols
        b = np.frombuffer(raw, dtype="<f4", count=cols, offset=pos)
        pos += 4 * cols
        weights.append(w.reshape(rows, cols).astype(np.float64))
        biases.append(b.astype(np.float64))
    return MlpModel(weights, biases)


def write_report_csv(path, report: TrainReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "val_accuracy"])
        for i, (lr, acc) in enumerate(zip(report.learning_rates, report.val_accuracy), 1):
            w.writerow([i, repr(lr), f"{acc:.4f}"])
