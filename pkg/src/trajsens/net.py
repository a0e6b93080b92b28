"""From-scratch feedforward network for sensitivity approximation.

Plain numpy: affine layers with a hidden activation, identity output,
backpropagation, and minibatch SGD with optional momentum.  Training runs on
min-max normalized features; the fitted ranges travel with the model so raw
(x0, v, t) queries normalize on the way in and de-normalize on the way out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, DimensionError, ParseError, TrainingError

_EPS_NORM = 1e-8


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0.0).astype(float)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def _sigmoid_grad(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "tanh": (np.tanh, _tanh_grad),
}

LOSSES = ("mae", "mse")
INITS = ("nguyen-widrow", "uniform-he")


@dataclass
class Mlp:
    """Layered feedforward network; hidden activation between layers, identity output."""

    weights: list[np.ndarray]  # each (out, in)
    biases: list[np.ndarray]
    activation: str
    normalization: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise DimensionError("network needs matching weight and bias lists")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        width = self.weights[0].shape[1]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i} is not an affine map")
            if w.shape[1] != width:
                raise DimensionError(f"layer {i} input width {w.shape[1]} breaks the chain")
            width = w.shape[0]

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[0]

    def predict(self, x0, v, t: float) -> np.ndarray:
        """Sensitivity query on raw (anchor, vector, time); handles normalization."""
        x0 = np.asarray(x0, dtype=float)
        v = np.asarray(v, dtype=float)
        raw = np.concatenate([x0, v, [float(t)]])
        return self.predict_raw(raw)

    def predict_raw(self, raw: np.ndarray) -> np.ndarray:
        """Raw-feature query; accepts one (2n+1,) row or a (B, 2n+1) batch."""
        raw = np.asarray(raw, dtype=float)
        single = raw.ndim == 1
        rows = raw[None, :] if single else raw
        if rows.shape[1] != self.in_width:
            raise DimensionError(
                f"model expects input width {self.in_width}, got {rows.shape[1]}"
            )
        if self.normalization is not None:
            lo = np.asarray(self.normalization["input_min"])
            span = np.asarray(self.normalization["input_span"])
            rows = (rows - lo) / span
        out = forward(self, rows)
        if self.normalization is not None:
            lo = np.asarray(self.normalization["output_min"])
            span = np.asarray(self.normalization["output_span"])
            out = out * span + lo
        return out[0] if single else out


def make_mlp(
    in_width: int,
    hidden: list[int],
    out_width: int,
    activation: str = "relu",
    init: str = "nguyen-widrow",
    seed: int = 0,
) -> Mlp:
    """Initialized network with the given hidden widths."""
    if init not in INITS:
        raise ConfigError(f"unknown init {init!r}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    widths = [in_width] + list(hidden) + [out_width]
    weights, biases = [], []
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        fan_in, fan_out = widths[layer], widths[layer + 1]
        if init == "nguyen-widrow" and layer < n_layers - 1:
            # scaled random directions with magnitude 0.7 * H^(1/in)
            beta = 0.7 * fan_out ** (1.0 / fan_in)
            w = rng.uniform(-0.5, 0.5, size=(fan_out, fan_in))
            norms = np.linalg.norm(w, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            w = beta * w / norms
            b = rng.uniform(-beta, beta, size=fan_out)
        else:
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
        weights.append(w)
        biases.append(b)
    return Mlp(weights=weights, biases=biases, activation=activation)


def forward(m: Mlp, x) -> np.ndarray:
    """Affine-then-activation composition; identity on the output layer."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != m.in_width:
        raise DimensionError(f"model expects input width {m.in_width}, got {a.shape[1]}")
    act = ACTIVATIONS[m.activation][0]
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        a = a @ w.T + b
        if i < last:
            a = act(a)
    return a[0] if single else a


def _loss_and_grad(pred: np.ndarray, target: np.ndarray, loss: str):
    scale = pred.shape[0] * pred.shape[1]
    err = pred - target
    if loss == "mae":
        return np.abs(err).sum() / scale, np.sign(err) / scale
    if loss == "mse":
        return (err ** 2).sum() / scale, 2.0 * err / scale
    raise ConfigError(f"unknown loss {loss!r}")


def gradient(m: Mlp, x: np.ndarray, y: np.ndarray, loss: str = "mae"):
    """Exact backpropagation gradients of the batch loss.

    Returns (weight grads, bias grads, loss value) with grads shaped like the
    parameters.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 0:
        raise ConfigError("gradient needs a nonempty batch")
    act, act_grad = ACTIVATIONS[m.activation]
    last = len(m.weights) - 1

    pre = []  # pre-activation per layer
    post = [x]  # layer inputs
    a = x
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = act(z) if i < last else z
        if i < last:
            post.append(a)

    value, delta = _loss_and_grad(a, y, loss)
    d_weights = [None] * len(m.weights)
    d_biases = [None] * len(m.biases)
    for i in range(last, -1, -1):
        d_weights[i] = delta.T @ post[i]
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ m.weights[i]) * act_grad(pre[i - 1])
    return d_weights, d_biases, value


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.05
    seed: int = 0
    loss: str = "mae"
    init: str = "nguyen-widrow"
    momentum: float = 0.0
    lr_decay: float = 1.0  # per-epoch multiplier (fixed schedule, 1.0 = constant)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs and batch size must be >= 1, learning rate > 0")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError("lr decay must be in (0, 1]")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}")


def train(m: Mlp, train_set: Dataset, cfg: TrainConfig) -> tuple[Mlp, list[float]]:
    """Minibatch SGD on normalized features; returns the model and the
    per-epoch mean training loss."""
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    x = train_set.normalized_inputs()
    y = train_set.normalized_targets()
    if x.shape[1] != m.in_width or y.shape[1] != m.out_width:
        raise DimensionError(
            f"dataset features ({x.shape[1]} -> {y.shape[1]}) do not fit the "
            f"network ({m.in_width} -> {m.out_width})"
        )
    rng = np.random.default_rng(cfg.seed)
    vel_w = [np.zeros_like(w) for w in m.weights]
    vel_b = [np.zeros_like(b) for b in m.biases]
    history: list[float] = []
    count = x.shape[0]
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        perm = rng.permutation(count)
        total = 0.0
        # runaway updates overflow on purpose here; the guard below turns
        # them into a TrainingError
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, count, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                dw, db, value = gradient(m, x[idx], y[idx], cfg.loss)
                total += value * idx.size
                if not np.isfinite(value):
                    break
                for i in range(len(m.weights)):
                    vel_w[i] = cfg.momentum * vel_w[i] - lr * dw[i]
                    vel_b[i] = cfg.momentum * vel_b[i] - lr * db[i]
                    m.weights[i] += vel_w[i]
                    m.biases[i] += vel_b[i]
        lr *= cfg.lr_decay
        mean_loss = total / count
        if not np.isfinite(mean_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        history.append(float(mean_loss))
    m.normalization = train_set.normalization
    m.meta = {"system": train_set.system, "kind": train_set.kind, "h": train_set.h}
    return m, history


def evaluate(m: Mlp, test_set: Dataset) -> dict:
    """De-normalized error metrics: mse, rmse, and mean relative error."""
    if len(test_set) == 0:
        raise ConfigError("test set is empty")
    pred_n = forward(m, test_set.normalized_inputs())
    pred = test_set.denormalize_outputs(pred_n)
    err = pred - test_set.y
    per_record_mse = np.mean(err ** 2, axis=1)
    mse = float(np.mean(per_record_mse))
    norms = np.linalg.norm(test_set.y, axis=1)
    rel = np.linalg.norm(err, axis=1) / np.maximum(norms, _EPS_NORM)
    return {"mse": mse, "rmse": float(np.sqrt(mse)), "mre": float(np.mean(rel))}


# --------------------------------------------------------------------------
# serialization (same JSON schema as controller files, plus extras)
# --------------------------------------------------------------------------


def save_model(m: Mlp, path) -> None:
    doc = {
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(m.weights, m.biases)
        ],
        "activation": m.activation,
        "normalization": m.normalization,
        "meta": m.meta,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_model(path) -> Mlp:
    try:
        doc = json.loads(Path(path).read_text())
        layers = doc["layers"]
        weights = [np.asarray(layer["weights"], dtype=float) for layer in layers]
        biases = [np.asarray(layer["bias"], dtype=float) for layer in layers]
        activation = doc["activation"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from exc
    return Mlp(
        weights=weights,
        biases=biases,
        activation=activation,
        normalization=doc.get("normalization"),
        meta=doc.get("meta") or {},
    )
