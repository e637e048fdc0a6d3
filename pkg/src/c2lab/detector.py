"""Fully connected softmax classifier with exact input gradients.

Implemented directly on numpy float64 so that training is bit-deterministic
under a fixed seed and the analytic input gradient can be checked against
central finite differences.  Architecture: `input -> ReLU stack -> 2-way
softmax`, inverted dropout after each hidden activation during training,
Adam on categorical cross-entropy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .features import NormalizationParams

FULL_WIDTHS = (2048, 1024, 512)
DESK_WIDTHS = (128, 64, 32)

FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ModelFormatError(ValueError):
    """Model file is unreadable or inconsistent with its declared shapes."""


@dataclass(frozen=True)
class ModelConfig:
    layer_widths: tuple[int, ...] = FULL_WIDTHS
    dropout_rate: float = 0.2
    input_width: int = 86
    output_width: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class Model:
    config: ModelConfig
    weights: list[np.ndarray]  # weights[l] has shape (fan_in, fan_out)
    biases: list[np.ndarray]
    norm_params: NormalizationParams | None = None
    train_meta: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_model(config: ModelConfig) -> Model:
    """Glorot-uniform weights from the seeded generator, zero biases."""
    rng = np.random.default_rng(config.seed)
    widths = [config.input_width, *config.layer_widths, config.output_width]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Model(config=config, weights=weights, biases=biases)


def _forward(model: Model, X: np.ndarray, dropout_rng=None):
    """Returns (pre-activations z per layer, activations a per layer, masks)."""
    rate = model.config.dropout_rate
    a = X
    zs, acts, masks = [], [X], []
    last = model.n_layers - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        zs.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
            if dropout_rng is not None and rate > 0.0:
                mask = (dropout_rng.random(a.shape) >= rate) / (1.0 - rate)
                a = a * mask
                masks.append(mask)
            else:
                masks.append(None)
            acts.append(a)
        else:
            acts.append(z)
    return zs, acts, masks


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predict_proba(model: Model, X: np.ndarray) -> np.ndarray:
    """Class probabilities, dropout off; accepts (d,) or (n, d)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.config.input_width:
        raise ValueError(
            f"input width {X.shape[1]} does not match model width {model.config.input_width}"
        )
    _, acts, _ = _forward(model, X)
    probs = _softmax(acts[-1])
    return probs[0] if single else probs


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    return predict_proba(model, x)


def cross_entropy_loss(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    """Mean categorical cross-entropy of the softmax outputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _, acts, _ = _forward(model, X)
    logp = _log_softmax(acts[-1])
    return float(-logp[np.arange(len(y)), y].mean())


def per_sample_loss(model: Model, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    _, acts, _ = _forward(model, X)
    logp = _log_softmax(acts[-1])
    return -logp[np.arange(len(y)), y]


def input_gradients(model: Model, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact d(loss)/d(input) per sample via backprop, dropout off."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    zs, acts, _ = _forward(model, X)
    probs = _softmax(acts[-1])
    delta = probs.copy()
    delta[np.arange(len(y)), y] -= 1.0
    for l in range(model.n_layers - 1, 0, -1):
        delta = (delta @ model.weights[l].T) * (zs[l - 1] > 0.0)
    return delta @ model.weights[0].T


def input_gradient(model: Model, x: np.ndarray, y: int) -> np.ndarray:
    return input_gradients(model, x[None, :], np.array([y]))[0]


def train(model: Model, X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> Model:
    """Mini-batch Adam on cross-entropy; mutates and returns the model.

    Shuffling and dropout masks come from one generator seeded with
    `cfg.shuffle_seed`, so identical data and seeds give identical weights.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("training data must be non-empty")
    if X.shape[1] != model.config.input_width:
        raise ValueError("training data width does not match the model")

    rng = np.random.default_rng(cfg.shuffle_seed)
    n = len(X)
    params = model.weights + model.biases
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    t = 0
    epoch_losses: list[float] = []
    n_layers = model.n_layers

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            zs, acts, masks = _forward(model, xb, dropout_rng=rng)
            logp = _log_softmax(acts[-1])
            loss = float(-logp[np.arange(len(yb)), yb].mean())
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, bi, loss)
            batch_losses.append(loss)

            delta = _softmax(acts[-1])
            delta[np.arange(len(yb)), yb] -= 1.0
            delta /= len(yb)
            grads_w = [None] * n_layers
            grads_b = [None] * n_layers
            for l in range(n_layers - 1, -1, -1):
                grads_w[l] = acts[l].T @ delta
                grads_b[l] = delta.sum(axis=0)
                if l > 0:
                    delta = (delta @ model.weights[l].T)
                    if masks[l - 1] is not None:
                        delta = delta * masks[l - 1]
                    delta = delta * (zs[l - 1] > 0.0)

            t += 1
            grads = grads_w + grads_b
            bc1 = 1.0 - cfg.beta1**t
            bc2 = 1.0 - cfg.beta2**t
            for p, g, m_s, v_s in zip(params, grads, m_state, v_state):
                m_s *= cfg.beta1
                m_s += (1.0 - cfg.beta1) * g
                v_s *= cfg.beta2
                v_s += (1.0 - cfg.beta2) * np.square(g)
                p -= cfg.learning_rate * (m_s / bc1) / (np.sqrt(v_s / bc2) + cfg.eps)
        epoch_losses.append(float(np.mean(batch_losses)))

    model.train_meta.update({
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "shuffle_seed": cfg.shuffle_seed,
        "final_loss": epoch_losses[-1],
        "epoch_losses": epoch_losses,
    })
    return model


# ---------------------------------------------------------------------------
# Serialization: one JSON document holding config, normalization, and layers
# (weight rows are per input neuron).

def save_model(model: Model, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": {
            "layer_widths": list(model.config.layer_widths),
            "dropout_rate": model.config.dropout_rate,
            "input_width": model.config.input_width,
            "output_width": model.config.output_width,
            "seed": model.config.seed,
        },
        "norm_params": None if model.norm_params is None
        else {"f_max": [float(v) for v in model.norm_params.f_max]},
        "train_meta": model.train_meta,
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> Model:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model format version")
    try:
        cfg = ModelConfig(
            layer_widths=tuple(doc["config"]["layer_widths"]),
            dropout_rate=doc["config"]["dropout_rate"],
            input_width=doc["config"]["input_width"],
            output_width=doc["config"]["output_width"],
            seed=doc["config"]["seed"],
        )
        layers = doc["layers"]
        weights = [np.array(layer["weights"], dtype=np.float64) for layer in layers]
        biases = [np.array(layer["bias"], dtype=np.float64) for layer in layers]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model document: {exc}") from exc

    widths = [cfg.input_width, *cfg.layer_widths, cfg.output_width]
    expected = list(zip(widths[:-1], widths[1:]))
    got = [w.shape for w in weights]
    if got != expected or any(b.shape != (w.shape[1],) for w, b in zip(weights, biases)):
        raise ModelFormatError(
            f"{path}: layer shapes {got} do not chain {widths[0]} -> {widths[-1]}"
        )
    norm = doc.get("norm_params")
    params = NormalizationParams(f_max=np.array(norm["f_max"])) if norm else None
    return Model(config=cfg, weights=weights, biases=biases,
                 norm_params=params, train_meta=doc.get("train_meta", {}))
