"""Minimal differentiable core: MLPs, reverse-mode gradients, Adam, weight files.

Parameters and activations are float32; loss/moment accumulation runs in
float64. There is no external tensor framework: forward/backward are a
few dense matmuls, which keeps the gradient path small enough to verify
against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, FormatError

WEIGHTS_MAGIC = b"UVWT"
WEIGHTS_VERSION = 1

# File kind tags.
KIND_MLP_BUNDLE = 0
KIND_PCA = 1
KIND_AE = 2
KIND_VAE = 3
KIND_POLICY = 4

_BLOCK_MLP = 0
_BLOCK_TENSOR = 1


class Mlp:
    """Fully connected net: rectified hidden layers, linear output."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights  # each (d_in, d_out)
        self.biases = biases    # each (d_out,)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list [W1, b1, W2, b2, ...]; arrays are the live storage."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "Mlp":
        return Mlp([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])


def init_mlp(dims, seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"need at least [in, out] positive dims, got {dims}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)).astype(np.float32))
        biases.append(np.zeros(d_out, dtype=np.float32))
    return Mlp(weights, biases)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer (post-activation of the previous)
    single: bool              # True if the caller passed a 1-D vector


def forward(mlp: Mlp, x: np.ndarray, need_cache: bool = True):
    """Run the net; returns (y, cache). Accepts a vector or a (B, d) batch."""
    x = np.asarray(x)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != mlp.in_dim:
        raise DimensionError(f"input dim {h.shape[1]} != net input dim {mlp.in_dim}")
    inputs = [h] if need_cache else None
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            if need_cache:
                inputs.append(h)
    y = h[0] if single else h
    return y, (ForwardCache(inputs=inputs, single=single) if need_cache else None)


def backward(mlp: Mlp, cache: ForwardCache, dy: np.ndarray, need_input_grad: bool = True):
    """Exact reverse-mode gradients. Returns (grads, dx).

    ``grads`` is flat [dW1, db1, ...] matching ``mlp.parameters()``; ``dx``
    is the gradient w.r.t. the input (None when not requested, to skip the
    largest matmul on wide inputs).
    """
    dy = np.asarray(dy)
    delta = dy[None, :] if cache.single else dy
    if delta.shape[-1] != mlp.out_dim:
        raise DimensionError(f"upstream grad dim {delta.shape[-1]} != net output dim {mlp.out_dim}")
    grads: list[np.ndarray | None] = [None] * (2 * len(mlp.weights))
    dx = None
    for i in range(len(mlp.weights) - 1, -1, -1):
        a = cache.inputs[i]
        grads[2 * i] = a.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ mlp.weights[i].T) * (cache.inputs[i] > 0)
        elif need_input_grad:
            dx = delta @ mlp.weights[0].T
            if cache.single:
                dx = dx[0]
    return grads, dx


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class AdamState:
    """Bias-corrected adaptive-moment optimizer state for a parameter list."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in params]


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One in-place update of ``params`` from ``grads``."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g64 = g.astype(np.float64, copy=False)
        m *= b1
        m += (1.0 - b1) * g64
        v *= b2
        v += (1.0 - b2) * g64 * g64
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p -= update


def finite_difference_grad(f, arrays: list[np.ndarray], h: float = 1e-3) -> list[np.ndarray]:
    """Central-difference gradient of scalar ``f()`` w.r.t. each array, in place.

    Arrays should be float64 for the differences to be meaningful against
    analytic float64 gradients.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


# -- weight container --------------------------------------------------------


def _write_block(f, name: str, block_type: int, dims: tuple[int, ...], data: np.ndarray) -> None:
    name_b = name.encode("utf-8")
    f.write(struct.pack("<I", len(name_b)))
    f.write(name_b)
    f.write(struct.pack("<BI", block_type, len(dims)))
    f.write(struct.pack(f"<{len(dims)}I", *dims))
    f.write(data.astype("<f4", copy=False).tobytes())


def save_weights(path, nets: dict, kind: int = KIND_MLP_BUNDLE, meta: dict | None = None) -> None:
    """Write named nets/tensors plus a JSON metadata block (magic ``UVWT``).

    ``nets`` values are Mlp instances (stored as layer dims + W/b runs) or
    plain float arrays (stored with their shape).
    """
    meta_b = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<IBI", WEIGHTS_VERSION, kind, len(meta_b)))
        f.write(meta_b)
        f.write(struct.pack("<I", len(nets)))
        for name, net in nets.items():
            if isinstance(net, Mlp):
                flat = np.concatenate(
                    [np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(net.weights, net.biases)]
                )
                _write_block(f, name, _BLOCK_MLP, net.dims, flat)
            else:
                arr = np.asarray(net, dtype=np.float32)
                _write_block(f, name, _BLOCK_TENSOR, arr.shape, arr.ravel())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated while reading {what} at offset {self.off} "
                f"(need {n} bytes, {len(self.blob) - self.off} left)"
            )
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def load_weights(path) -> tuple[int, dict, dict]:
    """Read a weight container; returns (kind, meta, {name: Mlp | ndarray})."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    magic = r.take(4, "magic")
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {WEIGHTS_MAGIC!r} (offset 0)")
    version = r.u32("version")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported version {version} (offset 4)")
    kind = r.u8("kind tag")
    meta_len = r.u32("metadata length")
    meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    n_nets = r.u32("net count")
    nets = {}
    for _ in range(n_nets):
        name_len = r.u32("name length")
        name = r.take(name_len, "name").decode("utf-8")
        block_type = r.u8("block type")
        n_dims = r.u32("dim count")
        dims = struct.unpack(f"<{n_dims}I", r.take(4 * n_dims, "dims"))
        if block_type == _BLOCK_MLP:
            count = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
            flat = np.frombuffer(r.take(4 * count, f"net '{name}' parameters"), dtype="<f4")
            weights, biases = [], []
            at = 0
            for a, b in zip(dims[:-1], dims[1:]):
                weights.append(flat[at : at + a * b].reshape(a, b).copy())
                at += a * b
                biases.append(flat[at : at + b].copy())
                at += b
            nets[name] = Mlp(weights, biases)
        elif block_type == _BLOCK_TENSOR:
            count = int(np.prod(dims)) if dims else 1
            flat = np.frombuffer(r.take(4 * count, f"tensor '{name}'"), dtype="<f4")
            nets[name] = flat.reshape(dims).copy()
        else:
            raise FormatError(f"{path}: unknown block type {block_type} for '{name}'")
    if r.off != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.off} trailing bytes after last block")
    return kind, meta, nets


def check_dims(loaded_dims, expected_dims, what: str) -> None:
    """Raise a DimensionError naming both shapes when they differ."""
    if tuple(loaded_dims) != tuple(expected_dims):
        raise DimensionError(f"{what}: file has dims {tuple(loaded_dims)}, expected {tuple(expected_dims)}")
