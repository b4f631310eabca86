"""From-scratch fully connected stress classifier: 8 -> 10 -> 10 -> 5.

Hidden layers use ReLU, the output layer softmax; training is plain
mini-batch gradient descent on sparse categorical cross-entropy with a
fixed learning rate. Inputs are min-max scaled with bounds taken from
the training split and stored inside the parameter container, so a saved
model predicts on raw feature values.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .physio import LabeledDataset, SleepSample, StressState, rows_to_arrays

LAYER_SIZES = (8, 10, 10, 5)
PROB_FLOOR = 1e-12

CHECKPOINT_VERSION = 1
HISTORY_HEADER = "step,loss,accuracy"


class TrainingError(RuntimeError):
    """Training diverged; carries the step at which loss became non-finite."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"loss became non-finite at step {step}")


@dataclass
class NetworkParams:
    """Weights, biases and the input scaling bounds of the network."""

    W1: np.ndarray  # (8, 10)
    b1: np.ndarray  # (10,)
    W2: np.ndarray  # (10, 10)
    b2: np.ndarray  # (10,)
    W3: np.ndarray  # (10, 5)
    b3: np.ndarray  # (5,)
    x_min: np.ndarray  # (8,)
    x_span: np.ndarray  # (8,)
    seed: int = 0

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            *(a.copy() for a in (self.W1, self.b1, self.W2, self.b2, self.W3, self.b3)),
            self.x_min.copy(),
            self.x_span.copy(),
            self.seed,
        )

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2, self.W3, self.b3)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.5
    max_steps: int = 20_000
    seed: int = 0
    log_every: int = 250
    # stop early once the training split reaches this accuracy
    target_accuracy: float = 0.99

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass(frozen=True)
class LogPoint:
    step: int
    loss: float
    accuracy: float


def init_params(seed: int, x_min: np.ndarray, x_span: np.ndarray) -> NetworkParams:
    """Uniform(-r, r) initialization with r = sqrt(6 / (fan_in + fan_out))."""
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(LAYER_SIZES, LAYER_SIZES[1:]):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(
        weights[0], biases[0], weights[1], biases[1], weights[2], biases[2],
        x_min.astype(float), x_span.astype(float), seed,
    )


def scaling_from_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature min and span of the training matrix; zero spans become 1."""
    x_min = x.min(axis=0)
    x_span = x.max(axis=0) - x_min
    x_span = np.where(x_span == 0.0, 1.0, x_span)
    return x_min, x_span


def scale_features(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    return (x - params.x_min) / params.x_span


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: NetworkParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and softmax probabilities for raw feature rows.

    Accepts a single sample (8,) or a batch (n, 8); probabilities are
    strictly positive and sum to 1 per row.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a0 = scale_features(params, np.atleast_2d(x))
    if not np.isfinite(a0).all():
        raise FloatingPointError("non-finite input features")
    z1 = a0 @ params.W1 + params.b1
    a1 = relu(z1)
    z2 = a1 @ params.W2 + params.b2
    a2 = relu(z2)
    z3 = a2 @ params.W3 + params.b3
    if not np.isfinite(z3).all():
        raise FloatingPointError("non-finite activations")
    probs = softmax(z3)
    if single:
        return z3[0], probs[0]
    return z3, probs


def loss(probs: np.ndarray, labels: np.ndarray | int) -> float:
    """Mean sparse categorical cross-entropy, -ln p[label] per row."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    picked = probs[np.arange(len(labels)), labels]
    if (picked < PROB_FLOOR).any():
        warnings.warn("probability at label clamped to 1e-12", RuntimeWarning)
        picked = np.maximum(picked, PROB_FLOOR)
    return float(-np.log(picked).mean())


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2, self.W3, self.b3)


def grad(params: NetworkParams, x: np.ndarray, labels: np.ndarray) -> Gradients:
    """Backpropagation gradients of the mean batch loss."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    n = len(labels)
    if n == 0:
        raise ValueError("batch must be non-empty")
    a0 = scale_features(params, x)
    z1 = a0 @ params.W1 + params.b1
    a1 = relu(z1)
    z2 = a1 @ params.W2 + params.b2
    a2 = relu(z2)
    z3 = a2 @ params.W3 + params.b3
    probs = softmax(z3)

    dz3 = probs.copy()
    dz3[np.arange(n), labels] -= 1.0
    dz3 /= n
    dW3 = a2.T @ dz3
    db3 = dz3.sum(axis=0)
    da2 = dz3 @ params.W3.T
    dz2 = da2 * (z2 > 0)
    dW2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ params.W2.T
    dz1 = da1 * (z1 > 0)
    dW1 = a0.T @ dz1
    db1 = dz1.sum(axis=0)
    return Gradients(dW1, db1, dW2, db2, dW3, db3)


def train(
    dataset: LabeledDataset, config: TrainConfig = TrainConfig()
) -> tuple[NetworkParams, list[LogPoint]]:
    """Train on the dataset's training split; deterministic under the seed.

    Shuffles each epoch, descends with the fixed learning rate and logs
    full-split loss/accuracy every ``log_every`` steps. Stops early once
    the training accuracy reaches the configured target.
    """
    x_train, y_train = rows_to_arrays(dataset.train_rows)
    if len(y_train) == 0:
        raise ValueError("training split is empty")
    x_min, x_span = scaling_from_rows(x_train)
    params = init_params(config.seed, x_min, x_span)
    rng = np.random.default_rng(config.seed + 1)
    history: list[LogPoint] = []
    step = 0

    def log_point() -> LogPoint:
        _, probs = forward(params, x_train)
        point = LogPoint(
            step=step,
            loss=loss(probs, y_train),
            accuracy=float((probs.argmax(axis=1) == y_train).mean()),
        )
        history.append(point)
        return point

    while step < config.max_steps:
        order = rng.permutation(len(y_train))
        for start in range(0, len(y_train), config.batch_size):
            if step >= config.max_steps:
                break
            idx = order[start : start + config.batch_size]
            g = grad(params, x_train[idx], y_train[idx])
            for p_arr, g_arr in zip(params.arrays(), g.arrays()):
                p_arr -= config.learning_rate * g_arr
            step += 1
            if not all(np.isfinite(a).all() for a in params.arrays()):
                raise TrainingError(step)
            if step % config.log_every == 0 or step == config.max_steps:
                point = log_point()
                if not np.isfinite(point.loss):
                    raise TrainingError(step)
                if point.accuracy >= config.target_accuracy:
                    return params, history
    if not history or history[-1].step != step:
        log_point()
    return params, history


@dataclass(frozen=True)
class EvalReport:
    """Confusion matrix plus the derived per-class and macro metrics.

    Counts are one-vs-rest per class; ``accuracy`` is the trace of the
    confusion matrix over the row total. Classes absent from both truth
    and predictions score precision and recall 1 and are flagged.
    """

    confusion: np.ndarray  # (5, 5), rows = truth, columns = prediction
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    mean_loss: float
    flagged_classes: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "mean_loss": self.mean_loss,
            "flagged_classes": list(self.flagged_classes),
        }


def metrics_from_confusion(confusion: np.ndarray, mean_loss: float = float("nan")) -> EvalReport:
    """Derive precision, recall, accuracy and F1 from a 5x5 confusion matrix."""
    confusion = np.asarray(confusion, dtype=int)
    total = int(confusion.sum())
    tp = np.diag(confusion).astype(int)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    tn = total - tp - fp - fn
    precision = np.zeros(5)
    recall = np.zeros(5)
    flagged: list[int] = []
    for c in range(5):
        if tp[c] + fp[c] + fn[c] == 0:
            # class absent from both truth and predictions
            precision[c] = 1.0
            recall[c] = 1.0
            flagged.append(c)
            continue
        precision[c] = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        recall[c] = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
    f1 = np.array([f1_score(p, r) for p, r in zip(precision, recall)])
    accuracy = tp.sum() / total if total else 0.0
    return EvalReport(
        confusion=confusion,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(accuracy),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        mean_loss=mean_loss,
        flagged_classes=tuple(flagged),
    )


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate(
    params: NetworkParams, rows: Sequence[tuple[SleepSample, StressState]]
) -> EvalReport:
    """Argmax predictions over the rows summarized as an EvalReport."""
    if not rows:
        raise ValueError("evaluation split is empty")
    x, y = rows_to_arrays(rows)
    _, probs = forward(params, x)
    predictions = probs.argmax(axis=1)
    confusion = np.zeros((5, 5), dtype=int)
    for truth, pred in zip(y, predictions):
        confusion[truth, pred] += 1
    return metrics_from_confusion(confusion, mean_loss=loss(probs, y))


def predict(params: NetworkParams, sample: SleepSample) -> tuple[StressState, float]:
    """Predicted state and its softmax confidence in percent.

    Ties resolve to the lowest class index (argmax behaviour).
    """
    _, probs = forward(params, sample.as_array())
    best = int(probs.argmax())
    return StressState(best), float(probs[best] * 100.0)


def save_params(params: NetworkParams, path: str) -> None:
    """Versioned textual checkpoint: shapes, scaling bounds, seed, arrays."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(LAYER_SIZES),
        "seed": params.seed,
        "x_min": params.x_min.tolist(),
        "x_span": params.x_span.tolist(),
        "arrays": {
            name: getattr(params, name).tolist()
            for name in ("W1", "b1", "W2", "b2", "W3", "b3")
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_params(path: str) -> NetworkParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    if tuple(payload["layer_sizes"]) != LAYER_SIZES:
        raise ValueError("checkpoint layer sizes do not match this network")
    arrays = {k: np.array(v, dtype=float) for k, v in payload["arrays"].items()}
    expected = {
        "W1": (8, 10), "b1": (10,), "W2": (10, 10),
        "b2": (10,), "W3": (10, 5), "b3": (5,),
    }
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ValueError(f"checkpoint array {name} has shape {arrays[name].shape}")
    return NetworkParams(
        arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"],
        arrays["W3"], arrays["b3"],
        np.array(payload["x_min"], dtype=float),
        np.array(payload["x_span"], dtype=float),
        int(payload["seed"]),
    )


def write_history(history: Sequence[LogPoint], path: str) -> None:
    """Loss/accuracy trace as CSV: step,loss,accuracy."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for point in history:
            fh.write(f"{point.step},{point.loss},{point.accuracy}\n")
