"""Dense feedforward network engine with reverse-mode gradients.

A :class:`Network` is a fixed stack of layers (dense, dropout, power
normalization, additive Gaussian channel) whose trainable parameters live in
one flat float64 buffer; per-layer weight and bias arrays are views into it.
Gradients come back in a buffer of the same layout, which keeps the Adam
update a single fused pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tcomm import kernels
from tcomm.errors import (
    CorruptHeaderError,
    DomainError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
    TruncatedFileError,
    VersionError,
)

ACTIVATIONS = {
    "linear": kernels.LINEAR,
    "relu": kernels.RELU,
    "tanh": kernels.TANH,
    "softmax": kernels.SOFTMAX,
}


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int
    activation: str = "linear"

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ShapeError(f"dense layer needs positive sizes, got {self.n_in}x{self.n_out}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.n_in * self.n_out + self.n_out


@dataclass(frozen=True)
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class PowerNorm:
    """Scale each row to unit mean-square value."""


@dataclass(frozen=True)
class GaussianNoise:
    """AWGN channel for unit mean-square inputs; resampled on every pass."""

    snr_db: float

    @property
    def sigma(self) -> float:
        # per-real-component std against unit mean-square signal
        return float(np.sqrt(10.0 ** (-self.snr_db / 10.0)))


Layer = Dense | Dropout | PowerNorm | GaussianNoise


class Network:
    def __init__(self, layers, params: np.ndarray | None = None, seed: int | None = None):
        self.layers = tuple(layers)
        _validate(self.layers)
        self.seed = seed
        self.dense_index = [i for i, layer in enumerate(self.layers) if isinstance(layer, Dense)]
        size = sum(self.layers[i].n_params for i in self.dense_index)
        if params is None:
            self.params = np.zeros(size)
        else:
            params = np.ascontiguousarray(params, dtype=np.float64)
            if params.shape != (size,):
                raise ShapeError(f"expected {size} parameters, got shape {params.shape}")
            self.params = params.copy()
        self.weights = _views(self.layers, self.dense_index, self.params)

    @property
    def in_dim(self) -> int | None:
        return self.layers[self.dense_index[0]].n_in if self.dense_index else None

    @property
    def out_dim(self) -> int | None:
        return self.layers[self.dense_index[-1]].n_out if self.dense_index else None

    def init_params(self, rng: np.random.Generator) -> "Network":
        """Uniform fan-based init in +-sqrt(6/(in+out)); biases zero."""
        for i in self.dense_index:
            layer = self.layers[i]
            W, b = self.weights[i]
            limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
            b[...] = 0.0
        return self

    def copy(self) -> "Network":
        return Network(self.layers, self.params, seed=self.seed)

    def grad_buffer(self) -> tuple[np.ndarray, dict]:
        buf = np.zeros_like(self.params)
        return buf, _views(self.layers, self.dense_index, buf)

    def __repr__(self):
        return f"Network({len(self.layers)} layers, {self.params.size} params)"


def _validate(layers):
    dim = None
    for i, layer in enumerate(layers):
        if isinstance(layer, Dense):
            if dim is not None and layer.n_in != dim:
                raise ShapeError(f"layer {i}: expects {layer.n_in} inputs, previous layer gives {dim}")
            if layer.activation == "softmax" and any(isinstance(l, Dense) for l in layers[i + 1:]):
                raise ShapeError(f"layer {i}: softmax is only allowed as the final activation")
            dim = layer.n_out
        elif not isinstance(layer, (Dropout, PowerNorm, GaussianNoise)):
            raise TypeError(f"layer {i}: unsupported layer {layer!r}")


def _views(layers, dense_index, buf):
    out = {}
    offset = 0
    for i in dense_index:
        layer = layers[i]
        nw = layer.n_in * layer.n_out
        W = buf[offset:offset + nw].reshape(layer.n_out, layer.n_in)
        b = buf[offset + nw:offset + nw + layer.n_out]
        out[i] = (W, b)
        offset += nw + layer.n_out
    return out


def param_count(net: Network) -> int:
    return sum(net.layers[i].n_params for i in net.dense_index)


# ---------------------------------------------------------------- forward


@dataclass
class Cache:
    net_id: int
    layers: tuple
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    extras: list = field(default_factory=list)  # dropout mask / noise / norm scale


def _generator(rng, name):
    if rng is None:
        raise StateError(f"a random stream is required for {name}")
    if isinstance(rng, np.random.Generator):
        return rng
    return rng[name]


def forward(net: Network, batch: np.ndarray, mode: str = "eval", rng=None, replay: Cache | None = None):
    """Run ``batch`` through ``net``.

    ``rng`` is an :class:`~tcomm.rng.RngStreams` (dropout masks come from its
    ``"dropout"`` stream, channel noise from ``"channel"``) or a single
    Generator used for both. Passing ``replay`` reuses the masks and noise
    recorded in an earlier cache instead of drawing new ones.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.ascontiguousarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {x.shape}")
    if net.in_dim is not None and x.shape[1] != net.in_dim:
        raise ShapeError(f"batch has {x.shape[1]} columns, network expects {net.in_dim}")
    if replay is not None and replay.layers != net.layers:
        raise StateError("replay cache was produced by a different network")
    cache = Cache(id(net), net.layers)
    for i, layer in enumerate(net.layers):
        extra = None
        if isinstance(layer, Dense):
            W, b = net.weights[i]
            y = kernels.dense_forward(x, W, b, ACTIVATIONS[layer.activation])
        elif isinstance(layer, Dropout):
            if mode == "train" and layer.rate > 0.0:
                if replay is not None:
                    extra = replay.extras[i]
                else:
                    keep = _generator(rng, "dropout").random(x.shape) >= layer.rate
                    extra = keep * (1.0 / (1.0 - layer.rate))
                y = x * extra
            else:
                y = x
        elif isinstance(layer, PowerNorm):
            y, extra = kernels.powernorm_forward(x)
        else:
            if replay is not None:
                extra = replay.extras[i]
            else:
                extra = _generator(rng, "channel").normal(0.0, layer.sigma, size=x.shape)
            y = x + extra
        cache.inputs.append(x)
        cache.outputs.append(y)
        cache.extras.append(extra)
        x = y
    if not np.isfinite(x).all():
        bad = next(i for i, out in enumerate(cache.outputs) if not np.isfinite(out).all())
        raise NumericError(f"non-finite values produced by layer {bad} ({net.layers[bad]!r})", layer=bad)
    return x, cache


def backward(net: Network, cache: Cache, output_grad: np.ndarray, need_input_grad: bool = True, logits_grad: bool = False):
    """Return ``(param_grads, input_grad)`` for the pass recorded in ``cache``.

    ``param_grads`` is a flat buffer laid out like ``net.params``. With
    ``logits_grad`` the incoming gradient is taken w.r.t. the pre-activation
    of a final softmax layer rather than its probabilities.
    """
    if cache.net_id != id(net) or cache.layers != net.layers or len(cache.outputs) != len(net.layers):
        raise StateError("cache does not belong to this network")
    g = np.ascontiguousarray(output_grad, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {cache.outputs[-1].shape}")
    grads, views = net.grad_buffer()
    first_dense = net.dense_index[0] if net.dense_index else -1
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if isinstance(layer, Dense):
            W, _ = net.weights[i]
            gW, gb = views[i]
            need = need_input_grad or i != first_dense
            act = ACTIVATIONS[layer.activation]
            if logits_grad and i == len(net.layers) - 1 and act == kernels.SOFTMAX:
                act = kernels.LINEAR
            g = kernels.dense_backward(cache.inputs[i], W, cache.outputs[i], act, g, gW, gb, need)
            if g is None:
                break
        elif isinstance(layer, Dropout):
            if cache.extras[i] is not None:
                g = g * cache.extras[i]
        elif isinstance(layer, PowerNorm):
            g = kernels.powernorm_backward(cache.outputs[i], cache.extras[i], g)
        # additive noise: identity
    return grads, (g if need_input_grad else None)


# ---------------------------------------------------------------- losses

CE_FLOOR = 1e-12


def loss(kind: str, prediction: np.ndarray, target: np.ndarray):
    """Batch-mean loss and its gradient w.r.t. ``prediction``.

    ``kind`` is ``"ce"`` (categorical cross-entropy on probability rows with
    one-hot targets) or ``"mse"``.
    """
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} differ")
    n = p.shape[0]
    if kind == "ce":
        if p.min() < -1e-9 or p.max() > 1.0 + 1e-9:
            raise DomainError("cross-entropy needs probability rows in [0, 1]")
        clamped = np.maximum(p, CE_FLOOR)
        value = -float(np.sum(t * np.log(clamped))) / n
        grad = np.where(p > CE_FLOOR, -t / clamped, 0.0) / n
        return value, grad
    if kind == "mse":
        diff = p - t
        value = float(np.mean(diff * diff))
        return value, diff * (2.0 / diff.size)
    raise ValueError(f"unknown loss kind {kind!r}")


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: np.ndarray, **hyper) -> "AdamState":
        state = cls(np.zeros_like(params), np.zeros_like(params), **hyper)
        if not (0.0 < state.beta1 < 1.0 and 0.0 < state.beta2 < 1.0):
            raise ValueError("Adam decay factors must lie in (0, 1)")
        return state


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> None:
    """Bias-corrected Adam update of ``params`` in place."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError("params, grads and Adam moments must share one shape")
    if not np.isfinite(grads).all():
        raise NumericError("non-finite gradient passed to Adam")
    state.step += 1
    kernels.adam_update(params, grads, state.m, state.v, state.lr, state.beta1, state.beta2, state.epsilon, state.step)


# ---------------------------------------------------------------- chains


def forward_chain(nets, batch, mode="eval", rng=None, replay=None):
    """Forward through several networks in sequence (e.g. encoder, channel, decoder)."""
    caches = []
    x = batch
    for k, net in enumerate(nets):
        x, c = forward(net, x, mode, rng, None if replay is None else replay[k])
        caches.append(c)
    return x, caches


def backward_chain(nets, caches, output_grad, need_input_grad=True, logits_grad=False):
    """Backpropagate through a chain; returns ``(grads per net, input_grad)``.

    Entries for nets without parameters are ``None``.
    """
    grads = [None] * len(nets)
    g = output_grad
    for k in range(len(nets) - 1, -1, -1):
        need = need_input_grad or k > 0
        gk, g = backward(nets[k], caches[k], g, need, logits_grad and k == len(nets) - 1)
        if nets[k].params.size:
            grads[k] = gk
    return grads, g


# ---------------------------------------------------------------- weight files

MAGIC = b"TCNN"
FORMAT_VERSION = 1
_KIND = {Dense: 0, Dropout: 1, PowerNorm: 2, GaussianNoise: 3}
_ACT_CODES = list(ACTIVATIONS)


def save_weights(net: Network, path) -> None:
    """Binary little-endian weight file: header, layer table, float64 payload."""
    seed = -1 if net.seed is None else int(net.seed)
    parts = [MAGIC, struct.pack("<HqI", FORMAT_VERSION, seed, len(net.layers))]
    for layer in net.layers:
        kind = _KIND[type(layer)]
        parts.append(struct.pack("<B", kind))
        if kind == 0:
            parts.append(struct.pack("<IIB", layer.n_in, layer.n_out, _ACT_CODES.index(layer.activation)))
        elif kind == 1:
            parts.append(struct.pack("<d", layer.rate))
        elif kind == 3:
            parts.append(struct.pack("<d", layer.snr_db))
    parts.append(struct.pack("<Q", net.params.size))
    parts.append(net.params.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise TruncatedFileError(f"file ends at byte {len(self.data)}, needed {self.pos + size}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, size):
        if self.pos + size > len(self.data):
            raise TruncatedFileError(f"file ends at byte {len(self.data)}, needed {self.pos + size}")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out


def load_weights(path) -> Network:
    r = _Reader(Path(path).read_bytes())
    if r.raw(4) != MAGIC:
        raise FormatError("not a TCNN weight file")
    version, seed, n_layers = r.take("<HqI")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported weight file version {version}")
    layers = []
    for _ in range(n_layers):
        (kind,) = r.take("<B")
        if kind == 0:
            n_in, n_out, act = r.take("<IIB")
            if act >= len(_ACT_CODES):
                raise CorruptHeaderError(f"unknown activation code {act}")
            layers.append(Dense(n_in, n_out, _ACT_CODES[act]))
        elif kind == 1:
            layers.append(Dropout(r.take("<d")[0]))
        elif kind == 2:
            layers.append(PowerNorm())
        elif kind == 3:
            layers.append(GaussianNoise(r.take("<d")[0]))
        else:
            raise CorruptHeaderError(f"unknown layer kind {kind}")
    (count,) = r.take("<Q")
    # constructing the stack validates adjacent dimensions
    expected = sum(l.n_params for l in layers if isinstance(l, Dense))
    _validate(tuple(layers))
    if count != expected:
        raise ShapeError(f"layer table implies {expected} parameters, file declares {count}")
    payload = np.frombuffer(r.raw(8 * count), dtype="<f8").astype(np.float64)
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after payload")
    return Network(layers, payload, seed=None if seed == -1 else seed)
