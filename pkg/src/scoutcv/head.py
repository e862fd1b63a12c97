"""Trainable dense classification head.

Linear layers with relu and inverted dropout, softmax output, clamped
cross-entropy, hand-derived backprop, and SGD-momentum / Adam optimizers.
Everything runs in float64 and is fully deterministic under the configured
seeds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from scoutcv.dataset import NUM_CLASSES, QualityClass
from scoutcv.errors import ModelFormatError, TrainingDiverged

PROB_CLAMP = 1e-12
MAX_HIDDEN_LAYERS = 8

MODEL_MAGIC = b"HEAD"
MODEL_VERSION = 1


@dataclass(frozen=True)
class HiddenLayer:
    width: int
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ValueError("layer width must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class HeadConfig:
    input_dim: int
    hidden_layers: tuple[HiddenLayer, ...] = ()
    output_classes: int = NUM_CLASSES
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(self.hidden_layers) > MAX_HIDDEN_LAYERS:
            raise ValueError(f"at most {MAX_HIDDEN_LAYERS} hidden layers supported")

    @staticmethod
    def uniform(
        input_dim: int,
        widths: Sequence[int] = (),
        dropout: float = 0.0,
        init_seed: int = 0,
    ) -> "HeadConfig":
        """Config with the same dropout rate on every hidden layer."""
        layers = tuple(HiddenLayer(width=w, dropout_rate=dropout) for w in widths)
        return HeadConfig(input_dim=input_dim, hidden_layers=layers, init_seed=init_seed)

    def layer_dims(self) -> list[tuple[int, int]]:
        """(out, in) shape of every weight matrix, final layer last."""
        dims = []
        prev = self.input_dim
        for layer in self.hidden_layers:
            dims.append((layer.width, prev))
            prev = layer.width
        dims.append((self.output_classes, prev))
        return dims


@dataclass
class HeadModel:
    """Parameters of a head; immutable by convention once trained."""

    config: HeadConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "HeadModel":
        return HeadModel(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str  # "sgd_momentum" or "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("adam betas must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: OptimizerSpec = OptimizerSpec(kind="adam")
    loss: str = "categorical_cross_entropy"
    shuffle_seed: int = 0
    dropout_seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.loss != "categorical_cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)


def init_head(config: HeadConfig) -> HeadModel:
    """He fan-in init for relu layers, Glorot uniform for the output, zero biases."""
    rng = np.random.default_rng(config.init_seed)
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    dims = config.layer_dims()
    for i, (out, inp) in enumerate(dims):
        if i < len(dims) - 1:
            w = rng.standard_normal((out, inp)) * np.sqrt(2.0 / inp)
        else:
            limit = np.sqrt(6.0 / (inp + out))
            w = rng.uniform(-limit, limit, size=(out, inp))
        weights.append(w)
        biases.append(np.zeros(out, dtype=np.float64))
    return HeadModel(config=config, weights=weights, biases=biases)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(
    model: HeadModel,
    batch: np.ndarray,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict | None]:
    """Run a batch through the head.

    Returns (probabilities, cache); the cache is only materialized in train
    mode and feeds ``backward``. Inverted dropout scales kept units by
    1/(1-rate), so eval mode needs no rescaling.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.config.input_dim:
        raise ValueError(
            f"batch width {x.shape[1]} does not match input_dim {model.config.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input batch")
    layer_caches = []
    a = x
    for i, layer in enumerate(model.config.hidden_layers):
        z = a @ model.weights[i].T + model.biases[i]
        h = np.maximum(z, 0.0)
        mask = None
        if train_mode and layer.dropout_rate > 0.0:
            if dropout_rng is None:
                raise ValueError("train-mode forward with dropout needs an rng")
            keep = dropout_rng.random(h.shape) >= layer.dropout_rate
            mask = keep / (1.0 - layer.dropout_rate)
            h = h * mask
        if train_mode:
            layer_caches.append((a, z, mask))
        a = h
    logits = a @ model.weights[-1].T + model.biases[-1]
    probs = _softmax(logits)
    if not train_mode:
        return probs, None
    return probs, {"layers": layer_caches, "last_input": a, "probs": probs}


def loss_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -ln p[label] with p clamped to PROB_CLAMP before the log."""
    p = probs[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)]
    return float(-np.log(np.maximum(p, PROB_CLAMP)).mean())


def backward(
    model: HeadModel, cache: dict, labels: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Analytic gradients of the cross-entropy for every parameter.

    Uses the exact softmax cross-entropy identity (probabilities minus the
    one-hot labels); the loss clamp only guards the reported value, it does
    not flatten the training signal. Dropout masks from the forward pass
    gate the hidden paths exactly.
    """
    labels = np.asarray(labels, dtype=np.int64)
    probs = cache["probs"]
    b = probs.shape[0]
    delta = probs.copy()
    delta[np.arange(b), labels] -= 1.0
    delta /= b
    grads_w: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(model.biases)
    grads_w[-1] = delta.T @ cache["last_input"]
    grads_b[-1] = delta.sum(axis=0)
    da = delta @ model.weights[-1]
    for i in range(len(model.config.hidden_layers) - 1, -1, -1):
        a_prev, z, mask = cache["layers"][i]
        if mask is not None:
            da = da * mask
        dz = da * (z > 0.0)
        grads_w[i] = dz.T @ a_prev
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ model.weights[i]
    return grads_w, grads_b


class OptimizerState:
    """Per-parameter state; SGD keeps velocities, Adam keeps both moments."""

    def __init__(self, spec: OptimizerSpec, model: HeadModel) -> None:
        self.spec = spec
        self.step_count = 0
        shapes = [w for w in model.weights] + [b for b in model.biases]
        self.v = [np.zeros_like(p) for p in shapes]
        if spec.kind == "adam":
            self.m = [np.zeros_like(p) for p in shapes]


def optimizer_step(
    state: OptimizerState,
    model: HeadModel,
    grads_w: list[np.ndarray],
    grads_b: list[np.ndarray],
    learning_rate: float,
) -> None:
    """Apply one update in place; the caller owns the model exclusively."""
    params = model.weights + model.biases
    grads = grads_w + grads_b
    spec = state.spec
    state.step_count += 1
    if spec.kind == "sgd_momentum":
        for p, g, v in zip(params, grads, state.v):
            v *= spec.momentum
            v += g
            p -= learning_rate * v
        return
    t = state.step_count
    bc1 = 1.0 - spec.beta1**t
    bc2 = 1.0 - spec.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= spec.beta1
        m += (1.0 - spec.beta1) * g
        v *= spec.beta2
        v += (1.0 - spec.beta2) * g * g
        p -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + spec.epsilon)


def train(
    model: HeadModel,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
) -> tuple[HeadModel, TrainHistory]:
    """Train a copy of ``model``; the input model is left untouched.

    Per-epoch shuffling is driven by ``shuffle_seed`` and dropout masks by
    ``dropout_seed``, so identical inputs give bit-identical results. A
    non-finite loss aborts with the failing epoch and step.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n < cfg.batch_size:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds sample count {n}")
    model = model.copy()
    state = OptimizerState(cfg.optimizer, model)
    shuffle_rng = np.random.default_rng(cfg.shuffle_seed)
    dropout_rng = np.random.default_rng(cfg.dropout_seed)
    history = TrainHistory()
    # divergence is detected explicitly through the loss, so numpy's own
    # overflow warnings on that path are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(n)
            total_loss = 0.0
            total_correct = 0
            for step, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                probs, cache = forward(model, x[idx], train_mode=True, dropout_rng=dropout_rng)
                loss = loss_cross_entropy(probs, y[idx])
                if not np.isfinite(loss):
                    raise TrainingDiverged(epoch=epoch, step=step)
                grads_w, grads_b = backward(model, cache, y[idx])
                optimizer_step(state, model, grads_w, grads_b, cfg.learning_rate)
                total_loss += loss * len(idx)
                total_correct += int((probs.argmax(axis=1) == y[idx]).sum())
            history.epoch_loss.append(total_loss / n)
            history.epoch_accuracy.append(total_correct / n)
    return model, history


def predict(model: HeadModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode prediction.

    Returns (classes, probabilities); ties at the argmax resolve to the
    lowest class code, which never over-promotes a prospect.
    """
    probs, _ = forward(model, features)
    classes = probs.argmax(axis=1)
    return classes, probs


def predict_one(model: HeadModel, feature: np.ndarray) -> tuple[QualityClass, np.ndarray]:
    classes, probs = predict(model, np.asarray(feature)[None, :])
    return QualityClass(int(classes[0])), probs[0]


# ---------------------------------------------------------------------------
# serialization


def save_model(model: HeadModel, path: str | Path) -> None:
    """Write the self-describing binary model format."""
    cfg = model.config
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<II", MODEL_VERSION, cfg.input_dim)
    out += struct.pack("<I", len(cfg.hidden_layers))
    for layer in cfg.hidden_layers:
        out += struct.pack("<IBd", layer.width, 0, layer.dropout_rate)
    out += struct.pack("<Iq", cfg.output_classes, cfg.init_seed)
    for w, b in zip(model.weights, model.biases):
        out += np.ascontiguousarray(w, dtype="<f8").tobytes()
        out += np.ascontiguousarray(b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_model(path: str | Path) -> HeadModel:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a head model file")
    pos = 4
    version, input_dim = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    (n_hidden,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if n_hidden > MAX_HIDDEN_LAYERS:
        raise ModelFormatError(f"{path}: implausible hidden layer count {n_hidden}")
    layers = []
    for _ in range(n_hidden):
        width, act, rate = struct.unpack_from("<IBd", data, pos)
        pos += 13
        if act != 0:
            raise ModelFormatError(f"{path}: unknown activation code {act}")
        layers.append(HiddenLayer(width=width, dropout_rate=rate))
    output_classes, init_seed = struct.unpack_from("<Iq", data, pos)
    pos += 12
    config = HeadConfig(
        input_dim=input_dim,
        hidden_layers=tuple(layers),
        output_classes=output_classes,
        init_seed=init_seed,
    )
    weights = []
    biases = []
    for out_dim, in_dim in config.layer_dims():
        need = out_dim * in_dim * 8
        if pos + need + out_dim * 8 > len(data):
            raise ModelFormatError(f"{path}: truncated parameter payload")
        weights.append(
            np.frombuffer(data, dtype="<f8", count=out_dim * in_dim, offset=pos)
            .reshape(out_dim, in_dim)
            .copy()
        )
        pos += need
        biases.append(np.frombuffer(data, dtype="<f8", count=out_dim, offset=pos).copy())
        pos += out_dim * 8
    if pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - pos} trailing bytes")
    model = HeadModel(config=config, weights=weights, biases=biases)
    for w in model.weights + model.biases:
        if not np.all(np.isfinite(w)):
            raise ModelFormatError(f"{path}: non-finite parameters")
    return model
