"""Small float64 MLP engine: forward pass, MSE backprop, Adam, persistence."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumMismatch,
    DivergedTraining,
    NonFiniteGradient,
    NonFiniteOutput,
    ParseError,
    ShapeMismatch,
)

ACTIVATIONS = ("identity", "relu", "tanh")
MAGIC = b"NSSW1"
DIVERGENCE_LIMIT = 1e6


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(z.dtype)  # derivative at 0 is 0
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class MlpNetwork:
    """Fully connected network; ``weights[l]`` has shape (out, in)."""

    layer_sizes: list
    weights: list
    biases: list
    activations: list
    trained: bool = False

    def __post_init__(self):
        sizes = [int(s) for s in self.layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeMismatch(f"need at least two layers of width >= 1, got {sizes}")
        if not (len(self.weights) == len(self.biases) == len(self.activations) == len(sizes) - 1):
            raise ShapeMismatch("one weight matrix, bias and activation per layer transition")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ShapeMismatch(
                    f"layer {l}: W {W.shape}, b {b.shape} do not chain {sizes[l]} -> {sizes[l + 1]}"
                )
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ShapeMismatch(f"unknown activation {a!r}")
        self.layer_sizes = sizes

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(list(self.layer_sizes), [W.copy() for W in self.weights],
                          [b.copy() for b in self.biases], list(self.activations), self.trained)

    def equals(self, other: "MlpNetwork") -> bool:
        """Bit-exact parameter and structure comparison."""
        return (
            self.layer_sizes == other.layer_sizes
            and self.activations == other.activations
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def mlp_init(layer_sizes, activations, seed: int) -> MlpNetwork:
    """Glorot-uniform weights, zero biases.

    ``activations`` is either one tag per layer transition or a single tag
    for the hidden layers, in which case the output layer is identity.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ShapeMismatch("an MLP needs at least an input and an output layer")
    if isinstance(activations, str):
        activations = [activations] * (len(sizes) - 2) + ["identity"]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(sizes, weights, biases, list(activations))


def _forward_cache(net: MlpNetwork, X):
    zs, acts = [], [X]
    a = X
    for W, b, name in zip(net.weights, net.biases, net.activations):
        z = a @ W.T + b
        a = _act(name, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def mlp_forward(net: MlpNetwork, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch (rows)."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if X.shape[-1] != net.layer_sizes[0]:
        raise ShapeMismatch(f"input width {X.shape[-1]} != network input {net.layer_sizes[0]}")
    a = X[None, :] if single else X
    for W, b, name in zip(net.weights, net.biases, net.activations):
        a = _act(name, a @ W.T + b)
    if not np.all(np.isfinite(a)):
        raise NonFiniteOutput("network produced NaN/Inf")
    return a[0] if single else a


def mlp_backprop_mse(net: MlpNetwork, X, Y):
    """Loss ``mean_i ||y_i - f(x_i)||^2`` and its exact parameter gradients.

    Returns ``((grad_W, grad_b), loss)`` with lists shaped like the parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if len(X) == 0 or len(X) != len(Y):
        raise ShapeMismatch("input and target batches must be nonempty and equally long")
    zs, acts = _forward_cache(net, X)
    N = X.shape[0]
    diff = acts[-1] - Y
    loss = float(np.sum(diff * diff) / N)
    delta = (2.0 / N) * diff
    gW = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        delta = delta * _act_grad(net.activations[l], zs[l], acts[l + 1])
        gW[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l:
            delta = delta @ net.weights[l]
    if not (np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in gW + gb)):
        raise NonFiniteGradient("loss or gradient is NaN/Inf")
    return (gW, gb), loss


@dataclass
class AdamState:
    mW: list
    vW: list
    mb: list
    vb: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: MlpNetwork, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        zeros = lambda arrs: [np.zeros_like(a) for a in arrs]
        return cls(zeros(net.weights), zeros(net.weights), zeros(net.biases), zeros(net.biases),
                   0, lr, beta1, beta2, eps)


def adam_step(net: MlpNetwork, grads, state: AdamState):
    """One bias-corrected Adam update, applied in place; returns ``(net, state)``."""
    gW, gb = grads
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for params, grads_, ms, vs in ((net.weights, gW, state.mW, state.vW), (net.biases, gb, state.mb, state.vb)):
        for p, g, m, v in zip(params, grads_, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


# ---------------------------------------------------------------------------
# datasets and training
# ---------------------------------------------------------------------------

@dataclass
class Normalizer:
    """Per-feature standardization; exempt features pass through unchanged."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data, exempt=None) -> "Normalizer":
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        # constant features (up to roundoff) are centred but not scaled
        std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
        if exempt is not None:
            exempt = np.asarray(exempt, dtype=bool)
            mean = np.where(exempt, 0.0, mean)
            std = np.where(exempt, 1.0, std)
        return cls(mean, std)

    @classmethod
    def identity(cls, width: int) -> "Normalizer":
        return cls(np.zeros(width), np.ones(width))

    def normalize(self, data):
        return (np.asarray(data, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, data):
        return np.asarray(data, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": [float(v).hex() for v in self.mean], "std": [float(v).hex() for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array([float.fromhex(v) for v in d["mean"]]),
                   np.array([float.fromhex(v) for v in d["std"]]))


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    input_norm: Normalizer | None = None
    target_norm: Normalizer | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if len(self.inputs) < 1 or len(self.inputs) != len(self.targets):
            raise ShapeMismatch("dataset needs N >= 1 matching input and target rows")

    def __len__(self):
        return len(self.inputs)

    def fit_normalization(self, exempt_inputs=None) -> "Dataset":
        self.input_norm = Normalizer.fit(self.inputs, exempt_inputs)
        self.target_norm = Normalizer.fit(self.targets)
        return self

    def normalized(self):
        X = self.input_norm.normalize(self.inputs) if self.input_norm else self.inputs
        Y = self.target_norm.normalize(self.targets) if self.target_norm else self.targets
        return X, Y


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    shuffle: bool = True


def train(net: MlpNetwork, dataset: Dataset, config: TrainConfig = TrainConfig()):
    """Mini-batch Adam on the (normalized) dataset.

    Returns ``(net, history)`` where ``history[e]`` is the sample-weighted
    mean batch loss of epoch ``e``.  Marks the network as trained.
    """
    X, Y = dataset.normalized()
    if X.shape[1] != net.layer_sizes[0] or Y.shape[1] != net.layer_sizes[-1]:
        raise ShapeMismatch(
            f"dataset widths ({X.shape[1]}, {Y.shape[1]}) do not match network "
            f"({net.layer_sizes[0]}, {net.layer_sizes[-1]})"
        )
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_network(net, lr=config.lr)
    N = len(X)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(N) if config.shuffle else np.arange(N)
        total = 0.0
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads, loss = mlp_backprop_mse(net, X[idx], Y[idx])
            if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise DivergedTraining(f"loss {loss:.3g} at epoch {epoch}")
            adam_step(net, grads, state)
            total += loss * len(idx)
        history.append(total / N)
    net.trained = True
    return net, history


# ---------------------------------------------------------------------------
# persistence (layout documented in docs/format.md)
# ---------------------------------------------------------------------------

_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}


def weights_to_bytes(net: MlpNetwork) -> bytes:
    parts = [MAGIC, struct.pack("<BI", 1 if net.trained else 0, len(net.weights))]
    for W, name in zip(net.weights, net.activations):
        parts.append(struct.pack("<IIB", W.shape[0], W.shape[1], _ACT_CODE[name]))
    for W, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def weights_from_bytes(data: bytes, expected_sizes=None) -> MlpNetwork:
    if len(data) < len(MAGIC) + 5 + 32 or not data.startswith(MAGIC):
        raise ParseError("not an NSSW1 weight file (bad magic or too short)")
    pos = len(MAGIC)
    flags, n_layers = struct.unpack_from("<BI", data, pos)
    pos += 5
    if n_layers < 1 or pos + 9 * n_layers > len(data):
        raise ParseError(f"implausible layer count {n_layers}")
    dims, acts = [], []
    for _ in range(n_layers):
        rows, cols, code = struct.unpack_from("<IIB", data, pos)
        pos += 9
        if code >= len(ACTIVATIONS):
            raise ParseError(f"unknown activation code {code}")
        dims.append((rows, cols))
        acts.append(ACTIVATIONS[code])
    for l in range(1, n_layers):
        if dims[l][1] != dims[l - 1][0]:
            raise ShapeMismatch(f"layer {l} expects width {dims[l][1]} but layer {l - 1} outputs {dims[l - 1][0]}")
    sizes = [dims[0][1]] + [r for r, _ in dims]
    if expected_sizes is not None and list(expected_sizes) != sizes:
        raise ShapeMismatch(f"file declares layers {sizes}, expected {list(expected_sizes)}")
    n_values = sum(r * c + r for r, c in dims)
    if len(data) != pos + 8 * n_values + 32:
        raise ParseError(f"file length {len(data)} does not match declared shapes (truncated or padded)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch("weight file checksum does not match its contents")
    weights, biases = [], []
    for rows, cols in dims:
        W = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=pos).astype(np.float64)
        pos += 8 * rows
        weights.append(W)
        biases.append(b)
    return MlpNetwork(sizes, weights, biases, acts, trained=bool(flags & 1))


def save_weights(net: MlpNetwork, path) -> None:
    Path(path).write_bytes(weights_to_bytes(net))


def load_weights(path, expected_sizes=None) -> MlpNetwork:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read weight file {path}: {exc.strerror}") from None
    return weights_from_bytes(data, expected_sizes)
