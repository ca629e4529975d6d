"""MLP substrate: parameters, activations, losses, and the feedforward pass.

Conventions used throughout the library:

* Layer activities are stored in pre-activation space.  The feedforward
  recursion is ``h_{n+1} = W_n @ augment(f(h_n))`` where ``augment``
  appends the constant 1 that multiplies the bias column.  No activation
  is applied at the input layer (``h_1 = W_0 @ augment(x)``) and none
  after the output layer: the output nonlinearity (softmax / sigmoid) is
  built into the loss.
* Weight matrix ``W_n`` has shape ``(dim_{n+1}, dim_n + 1)`` with the bias
  in the last column.  Bias-free networks (used by the linear-network
  analysis suites) set ``use_bias=False`` and drop the extra column.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .linalg import DimensionError, as_vector


class Activation(Enum):
    LINEAR = "linear"
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


class LossKind(Enum):
    MSE = "mse"
    SOFTMAX_CE = "softmax_ce"
    SIGMOID_BCE = "sigmoid_bce"


def activation_apply(act: Activation, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if act is Activation.LINEAR:
        return v.copy()
    if act is Activation.RELU:
        return np.maximum(v, 0.0)
    if act is Activation.TANH:
        return np.tanh(v)
    if act is Activation.SIGMOID:
        return _sigmoid(v)
    raise ValueError(f"unknown activation {act}")


def activation_deriv(act: Activation, v: np.ndarray) -> np.ndarray:
    """Elementwise derivative evaluated at pre-activation v.

    The ReLU derivative at exactly 0 is defined as 0.
    """
    v = np.asarray(v, dtype=np.float64)
    if act is Activation.LINEAR:
        return np.ones_like(v)
    if act is Activation.RELU:
        return (v > 0.0).astype(np.float64)
    if act is Activation.TANH:
        return 1.0 - np.tanh(v) ** 2
    if act is Activation.SIGMOID:
        s = _sigmoid(v)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {act}")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def softmax(v: np.ndarray) -> np.ndarray:
    z = v - np.max(v)
    e = np.exp(z)
    return e / np.sum(e)


@dataclass
class NetworkParams:
    """Ordered weight matrices W_0..W_{N-1}, bias stored in the last column."""

    layers: list
    use_bias: bool = True

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("need at least one weight matrix")
        self.layers = [np.asarray(w, dtype=np.float64) for w in self.layers]
        extra = 1 if self.use_bias else 0
        for n in range(len(self.layers) - 1):
            if self.layers[n + 1].shape[1] != self.layers[n].shape[0] + extra:
                raise DimensionError(
                    f"layer chaining broken between W_{n} {self.layers[n].shape} "
                    f"and W_{n+1} {self.layers[n+1].shape}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1] - (1 if self.use_bias else 0)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].shape[0]

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.layers], self.use_bias)

    def flat_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(w * w)) for w in self.layers)))


def init_params(dims, seed: int = 0, use_bias: bool = True) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias column."""
    dims = list(dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if use_bias:
            w = np.hstack([w, np.zeros((fan_out, 1))])
        layers.append(w)
    return NetworkParams(layers, use_bias=use_bias)


def augment(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v, [1.0]])


def presynaptic(params: NetworkParams, act: Activation, n: int, value: np.ndarray) -> np.ndarray:
    """Pre-synaptic input to W_n given the layer-n activity ``value``.

    The activation is skipped at the input layer (n = 0); the bias 1 is
    appended after the activation, so the squared norm of the result is
    always >= 1 for biased networks.
    """
    out = value if n == 0 else activation_apply(act, value)
    return augment(out) if params.use_bias else np.asarray(out, dtype=np.float64)


def feedforward(params: NetworkParams, act: Activation, x: np.ndarray) -> list:
    """Return activities [h_0 .. h_N] with h_0 = x."""
    x = as_vector(x)
    if x.shape[0] != params.input_dim:
        raise DimensionError(
            f"input dim {x.shape[0]} does not match W_0 ({params.input_dim})"
        )
    h = [x]
    for n, w in enumerate(params.layers):
        h.append(w @ presynaptic(params, act, n, h[n]))
    return h


@dataclass
class LayerState:
    """Per-iteration activity bundle.

    ``h`` are feedforward activities, ``hhat`` the optimized/target
    activities and ``p`` the local predictions; all lists are indexed
    0..N with ``p[0] = None`` (the input layer is never predicted).  At
    initialization ``hhat[n] = p[n] = h[n]`` for n >= 1 and the input
    layer satisfies ``hhat[0] = h[0] = x`` forever.
    """

    h: list
    hhat: list
    p: list
    extras: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.h) - 1

    def errors(self) -> list:
        """Local errors e_n = hhat_n - p_n for n = 1..N (index 0 is None)."""
        return [None] + [self.hhat[n] - self.p[n] for n in range(1, len(self.h))]


def _validate_target(kind: LossKind, output: np.ndarray, y: np.ndarray) -> None:
    if output.shape != y.shape:
        raise DimensionError(f"loss: output {output.shape} vs target {y.shape}")
    if kind is LossKind.SOFTMAX_CE:
        one = np.isclose(y, 1.0)
        if not (np.count_nonzero(one) == 1 and np.all(np.isclose(y[~one], 0.0))):
            raise ValueError("softmax cross-entropy expects a one-hot target")
    elif kind is LossKind.SIGMOID_BCE:
        if np.any(y < 0.0) or np.any(y > 1.0):
            raise ValueError("binary cross-entropy expects targets in [0, 1]")


def loss_value(kind: LossKind, output: np.ndarray, y: np.ndarray) -> float:
    """Loss on the pre-activation output vector.

    MSE = 0.5 ||y - output||^2.  Softmax cross-entropy and sigmoid BCE
    apply their output nonlinearity internally (BCE is summed over
    components).
    """
    output = as_vector(output)
    y = as_vector(y)
    _validate_target(kind, output, y)
    if kind is LossKind.MSE:
        d = y - output
        return 0.5 * float(d @ d)
    if kind is LossKind.SOFTMAX_CE:
        z = output - np.max(output)
        log_probs = z - np.log(np.sum(np.exp(z)))
        return -float(y @ log_probs)
    if kind is LossKind.SIGMOID_BCE:
        # summed BCE, computed from logits: -y*log(s) - (1-y)*log(1-s)
        return float(np.sum(np.logaddexp(0.0, output) - y * output))
    raise ValueError(f"unknown loss {kind}")


def loss_grad(kind: LossKind, output: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of loss_value w.r.t. the pre-activation output."""
    output = as_vector(output)
    y = as_vector(y)
    _validate_target(kind, output, y)
    if kind is LossKind.MSE:
        return output - y
    if kind is LossKind.SOFTMAX_CE:
        return softmax(output) - y
    if kind is LossKind.SIGMOID_BCE:
        return _sigmoid(output) - y
    raise ValueError(f"unknown loss {kind}")


_MAGIC = b"ILNP"
_VERSION = 1


def save_params(params: NetworkParams, path) -> None:
    """Flat binary dump: magic, version, layer count, per-layer rows/cols
    (u32 little-endian) followed by row-major float64 payloads."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(params.layers)))
        for w in params.layers:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for w in params.layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_params(path, use_bias: bool = True) -> NetworkParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError("bad magic: not an ILNP parameter file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported ILNP version {version}")
    off = 12
    shapes = []
    for _ in range(count):
        if off + 8 > len(data):
            raise ValueError("truncated ILNP header")
        r, c = struct.unpack_from("<II", data, off)
        shapes.append((r, c))
        off += 8
    layers = []
    for r, c in shapes:
        nbytes = r * c * 8
        if off + nbytes > len(data):
            raise ValueError("truncated ILNP payload")
        w = np.frombuffer(data, dtype="<f8", count=r * c, offset=off).reshape(r, c)
        layers.append(w.astype(np.float64))
        off += nbytes
    return NetworkParams(layers, use_bias=use_bias)
