"""A 1D convolutional classifier built directly on numpy arrays.

Architecture: conv(1→C1, k=5, pad 2) → ReLU → maxpool/2 → conv(C1→C2) →
ReLU → maxpool/2 → flatten → dense(hidden) → ReLU → dropout → dense(K).
The first dense layer's input width is inferred by pushing a probe input
through the convolutional stack rather than hard-coding the arithmetic.

All gradients are hand-derived chain rule; training uses bias-corrected
Adam and a reduce-on-plateau learning-rate schedule.  Every path is
deterministic given its seed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    IncompatibleArtifactError,
    LabelOutOfRangeError,
    LengthTooShortError,
    NonFiniteLossError,
    ShapeMismatchError,
    SingleClassError,
)

CHECKPOINT_MAGIC = b"OPC1"
CHECKPOINT_VERSION = 1
MIN_INPUT_DIM = 4  # two halvings must leave at least one position


@dataclass
class Conv1dLayer:
    weights: np.ndarray  # (out_channels, in_channels, kernel_size)
    bias: np.ndarray  # (out_channels,)
    stride: int = 1
    padding: int = 0

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_features, in_features)
    bias: np.ndarray  # (out_features,)


def _conv_cols(x: np.ndarray, layer: Conv1dLayer) -> np.ndarray:
    """Sliding windows of the padded input: (B, C_in, kernel, L_out)."""
    b, c, length = x.shape
    p, s, k = layer.padding, layer.stride, layer.kernel_size
    xp = np.pad(x, ((0, 0), (0, 0), (p, p))) if p else x
    l_out = (length + 2 * p - k) // s + 1
    if l_out < 1:
        raise ShapeMismatchError(f"kernel {k} does not fit input length {length} with padding {p}")
    return np.stack([xp[:, :, j : j + s * l_out : s] for j in range(k)], axis=2)


def _conv_forward_batch(x: np.ndarray, layer: Conv1dLayer):
    if x.shape[1] != layer.in_channels:
        raise ShapeMismatchError(f"input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    cols = _conv_cols(x, layer)
    out = np.einsum("ock,bckt->bot", layer.weights, cols, optimize=True)
    out += layer.bias[None, :, None]
    return out, cols


def _conv_backward_batch(d_out: np.ndarray, cols: np.ndarray, layer: Conv1dLayer, length: int):
    d_weights = np.einsum("bot,bckt->ock", d_out, cols, optimize=True)
    d_bias = d_out.sum(axis=(0, 2))
    d_cols = np.einsum("ock,bot->bckt", layer.weights, d_out, optimize=True)
    p, s = layer.padding, layer.stride
    l_out = d_out.shape[2]
    d_xp = np.zeros((d_out.shape[0], layer.in_channels, length + 2 * p))
    for j in range(layer.kernel_size):
        d_xp[:, :, j : j + s * l_out : s] += d_cols[:, :, j, :]
    d_x = d_xp[:, :, p : p + length] if p else d_xp
    return d_x, d_weights, d_bias


def conv1d_forward(x: np.ndarray, layer: Conv1dLayer) -> np.ndarray:
    """Cross-correlation of one (C_in, L) input with zero padding."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"expected (channels, length) input, got shape {x.shape}")
    out, _ = _conv_forward_batch(x[None], layer)
    return out[0]


def _pool_forward_batch(x: np.ndarray):
    # Non-overlapping windows of 2, stride 2; a trailing odd element is
    # dropped.  Argmax keeps the earlier index on ties.
    half = x.shape[2] // 2
    windows = x[:, :, : 2 * half].reshape(x.shape[0], x.shape[1], half, 2)
    idx = np.argmax(windows, axis=3)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return out, idx


def _pool_backward_batch(d_out: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    b, c, half = d_out.shape
    d_windows = np.zeros((b, c, half, 2))
    np.put_along_axis(d_windows, idx[..., None], d_out[..., None], axis=3)
    d_x = np.zeros((b, c, length))
    d_x[:, :, : 2 * half] = d_windows.reshape(b, c, 2 * half)
    return d_x


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Halve one (C, L) input; returns pooled values and argmax indices.

    Indices are absolute positions into the input's length axis, recorded
    for gradient routing.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"expected (channels, length) input, got shape {x.shape}")
    if x.shape[1] < 2:
        raise LengthTooShortError(f"pooling needs length >= 2, got {x.shape[1]}")
    out, idx = _pool_forward_batch(x[None])
    offsets = 2 * np.arange(idx.shape[2])
    return out[0], idx[0] + offsets[None, :]


@dataclass
class CnnModel:
    conv1: Conv1dLayer
    conv2: Conv1dLayer
    fc1: DenseLayer
    fc2: DenseLayer
    dropout_rate: float
    input_dim: int
    num_classes: int
    fc1_input_dim: int

    def params(self) -> dict[str, np.ndarray]:
        """Parameter arrays in declaration order."""
        return {
            "conv1.weights": self.conv1.weights,
            "conv1.bias": self.conv1.bias,
            "conv2.weights": self.conv2.weights,
            "conv2.bias": self.conv2.bias,
            "fc1.weights": self.fc1.weights,
            "fc1.bias": self.fc1.bias,
            "fc2.weights": self.fc2.weights,
            "fc2.bias": self.fc2.bias,
        }


def _init_uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_cnn(
    input_dim: int,
    num_classes: int,
    channels1: int = 64,
    channels2: int = 128,
    hidden: int = 128,
    kernel_size: int = 5,
    dropout_rate: float = 0.3,
    seed: int = 0,
) -> CnnModel:
    """Construct and initialize the network.

    Weights are seeded uniform in +/-1/sqrt(fan_in), drawn in declaration
    order.  The flattened width feeding the first dense layer is measured
    by running a zero probe input through the convolutional stack.
    """
    if input_dim < MIN_INPUT_DIM:
        raise ShapeMismatchError(f"input_dim must be >= {MIN_INPUT_DIM}, got {input_dim}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must be in [0,1), got {dropout_rate}")
    pad = (kernel_size - 1) // 2
    rng = np.random.default_rng(seed)
    conv1 = Conv1dLayer(
        weights=_init_uniform(rng, (channels1, 1, kernel_size), 1 * kernel_size),
        bias=_init_uniform(rng, (channels1,), 1 * kernel_size),
        padding=pad,
    )
    conv2 = Conv1dLayer(
        weights=_init_uniform(rng, (channels2, channels1, kernel_size), channels1 * kernel_size),
        bias=_init_uniform(rng, (channels2,), channels1 * kernel_size),
        padding=pad,
    )
    probe = np.zeros((1, 1, input_dim))
    for layer in (conv1, conv2):
        probe, _ = _conv_forward_batch(probe, layer)
        probe, _ = _pool_forward_batch(probe)
    fc1_input_dim = probe.shape[1] * probe.shape[2]
    fc1 = DenseLayer(
        weights=_init_uniform(rng, (hidden, fc1_input_dim), fc1_input_dim),
        bias=_init_uniform(rng, (hidden,), fc1_input_dim),
    )
    fc2 = DenseLayer(
        weights=_init_uniform(rng, (num_classes, hidden), hidden),
        bias=_init_uniform(rng, (num_classes,), hidden),
    )
    return CnnModel(
        conv1=conv1,
        conv2=conv2,
        fc1=fc1,
        fc2=fc2,
        dropout_rate=dropout_rate,
        input_dim=input_dim,
        num_classes=num_classes,
        fc1_input_dim=fc1_input_dim,
    )


def _forward_cache(model: CnnModel, batch: np.ndarray, training: bool, rng) -> tuple[np.ndarray, dict]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ShapeMismatchError(f"batch shape {batch.shape}, model expects (B, {model.input_dim})")
    cache: dict = {"batch_len": batch.shape[1]}

    x = batch[:, None, :]  # single input channel
    z1, cache["cols1"] = _conv_forward_batch(x, model.conv1)
    cache["gate1"] = z1 > 0
    a1 = np.maximum(z1, 0.0)
    p1, cache["idx1"] = _pool_forward_batch(a1)
    cache["len1"] = a1.shape[2]

    z2, cache["cols2"] = _conv_forward_batch(p1, model.conv2)
    cache["gate2"] = z2 > 0
    a2 = np.maximum(z2, 0.0)
    p2, cache["idx2"] = _pool_forward_batch(a2)
    cache["len2"] = a2.shape[2]
    cache["p2_shape"] = p2.shape

    flat = p2.reshape(p2.shape[0], -1)
    cache["flat"] = flat
    z3 = flat @ model.fc1.weights.T + model.fc1.bias
    cache["gate3"] = z3 > 0
    a3 = np.maximum(z3, 0.0)

    if training and model.dropout_rate > 0.0:
        keep = 1.0 - model.dropout_rate
        mask = rng.random(a3.shape) < keep
        cache["drop_scale"] = mask / keep
        a3 = a3 * cache["drop_scale"]
    else:
        cache["drop_scale"] = None
    cache["a3"] = a3

    logits = a3 @ model.fc2.weights.T + model.fc2.bias
    return logits, cache


def forward(model: CnnModel, batch: np.ndarray, training: bool = False, seed: int = 0) -> np.ndarray:
    """Logits for a (B, input_dim) batch.

    With training=True a seeded inverted-dropout mask is applied to the
    hidden dense activations (survivors scaled by 1/(1-p)); inference mode
    applies no mask and no scaling.
    """
    logits, _ = _forward_cache(model, batch, training, np.random.default_rng(seed))
    return logits


def _backward_from_cache(model: CnnModel, cache: dict, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    grads["fc2.weights"] = d_logits.T @ cache["a3"]
    grads["fc2.bias"] = d_logits.sum(axis=0)
    d_a3 = d_logits @ model.fc2.weights
    if cache["drop_scale"] is not None:
        d_a3 = d_a3 * cache["drop_scale"]
    d_z3 = d_a3 * cache["gate3"]
    grads["fc1.weights"] = d_z3.T @ cache["flat"]
    grads["fc1.bias"] = d_z3.sum(axis=0)
    d_flat = d_z3 @ model.fc1.weights

    d_p2 = d_flat.reshape(cache["p2_shape"])
    d_a2 = _pool_backward_batch(d_p2, cache["idx2"], cache["len2"])
    d_z2 = d_a2 * cache["gate2"]
    d_p1, grads["conv2.weights"], grads["conv2.bias"] = _conv_backward_batch(
        d_z2, cache["cols2"], model.conv2, cache["len1"] // 2
    )
    d_a1 = _pool_backward_batch(d_p1, cache["idx1"], cache["len1"])
    d_z1 = d_a1 * cache["gate1"]
    _, grads["conv1.weights"], grads["conv1.bias"] = _conv_backward_batch(
        d_z1, cache["cols1"], model.conv1, cache["batch_len"]
    )
    return grads


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log softmax likelihood and its gradient wrt logits.

    Computed with max subtraction so large logits do not overflow; the
    gradient is (softmax - onehot) / batch_size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if len(labels) != b:
        raise ShapeMismatchError(f"{len(labels)} labels for a batch of {b}")
    if len(labels) and not (labels.min() >= 0 and labels.max() < k):
        raise LabelOutOfRangeError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = float(-log_probs[np.arange(b), labels].mean())
    d_logits = np.exp(log_probs)
    d_logits[np.arange(b), labels] -= 1.0
    return loss, d_logits / b


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def backward(model: CnnModel, batch: np.ndarray, labels, seed: int = 0, training: bool = True):
    """Loss and exact parameter gradients for one batch.

    Reruns the forward pass with the given seed so the dropout mask matches,
    then backpropagates through both dense layers, the mask, the pooling
    argmax routing, the ReLU gates, and both convolutions.
    """
    logits, cache = _forward_cache(model, batch, training, np.random.default_rng(seed))
    loss, d_logits = cross_entropy(logits, labels)
    return loss, _backward_from_cache(model, cache, d_logits)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one pair of arrays per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr: float = 1e-3) -> AdamState:
    state = AdamState(lr=lr)
    state.m = {name: np.zeros_like(p) for name, p in params.items()}
    state.v = {name: np.zeros_like(p) for name, p in params.items()}
    return state


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One in-place Adam update; the step counter advances once per call."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


@dataclass
class PlateauScheduler:
    """Halve the learning rate after the monitored loss stalls."""

    factor: float = 0.5
    patience: int = 2
    threshold: float = 1e-4
    min_lr: float = 1e-6
    best_loss: float = math.inf
    stall_count: int = 0


def scheduler_step(sched: PlateauScheduler, epoch_loss: float, lr: float) -> float:
    """Returns the learning rate to use next; never increases it."""
    if not math.isfinite(epoch_loss):
        raise NonFiniteLossError(f"epoch loss is {epoch_loss}")
    if epoch_loss < sched.best_loss - sched.threshold:
        sched.best_loss = epoch_loss
        sched.stall_count = 0
        return lr
    sched.stall_count += 1
    if sched.stall_count > sched.patience:
        sched.stall_count = 0
        return max(lr * sched.factor, sched.min_lr)
    return lr


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CnnTrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    channels1: int = 64
    channels2: int = 128
    hidden: int = 128
    kernel_size: int = 5
    dropout_rate: float = 0.3


def train_cnn(x: np.ndarray, labels, num_classes: int, config: CnnTrainConfig) -> tuple[CnnModel, list[float]]:
    """Train on (N, L) encoded rows; returns the model and per-epoch losses.

    Each epoch shuffles the sample order with the seeded generator, then
    runs forward/backward/Adam per batch; the plateau scheduler watches the
    mean epoch loss.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise SingleClassError("CNN training needs at least 2 classes present")
    n = x.shape[0]
    model = build_cnn(
        input_dim=x.shape[1],
        num_classes=num_classes,
        channels1=config.channels1,
        channels2=config.channels2,
        hidden=config.hidden,
        kernel_size=config.kernel_size,
        dropout_rate=config.dropout_rate,
        seed=config.seed,
    )
    adam = adam_init(model.params(), lr=config.lr)
    sched = PlateauScheduler()
    rng = np.random.default_rng([config.seed, 1])
    history: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            logits, cache = _forward_cache(model, x[rows], True, rng)
            loss, d_logits = cross_entropy(logits, labels[rows])
            grads = _backward_from_cache(model, cache, d_logits)
            adam_step(adam, model.params(), grads)
            total += loss * len(rows)
        epoch_loss = total / n
        history.append(epoch_loss)
        adam.lr = scheduler_step(sched, epoch_loss, adam.lr)
    return model, history


def predict_cnn(model: CnnModel, x: np.ndarray) -> np.ndarray:
    """Argmax class ids for (N, L) rows, inference mode."""
    return np.argmax(forward(model, x), axis=1)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sI6Id")


def save_checkpoint(path: str | Path, model: CnnModel) -> None:
    """Write the binary container: magic, version, hyperparameters, then
    little-endian float64 parameter arrays in declaration order."""
    header = _HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        model.input_dim,
        model.num_classes,
        model.conv1.out_channels,
        model.conv2.out_channels,
        model.fc1.weights.shape[0],
        model.conv1.kernel_size,
        model.dropout_rate,
    )
    chunks = [header]
    for p in model.params().values():
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> CnnModel:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise IncompatibleArtifactError(f"checkpoint too short: {path}")
    magic, version, input_dim, num_classes, channels1, channels2, hidden, kernel_size, dropout = (
        _HEADER.unpack_from(blob)
    )
    if magic != CHECKPOINT_MAGIC:
        raise IncompatibleArtifactError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise IncompatibleArtifactError(
            f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
        )
    model = build_cnn(
        input_dim=input_dim,
        num_classes=num_classes,
        channels1=channels1,
        channels2=channels2,
        hidden=hidden,
        kernel_size=kernel_size,
        dropout_rate=dropout,
    )
    offset = _HEADER.size
    for p in model.params().values():
        n_bytes = p.size * 8
        if offset + n_bytes > len(blob):
            raise IncompatibleArtifactError("checkpoint truncated: parameter data missing")
        p[...] = np.frombuffer(blob, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
        offset += n_bytes
    if offset != len(blob):
        raise IncompatibleArtifactError("checkpoint has trailing bytes")
    return model
