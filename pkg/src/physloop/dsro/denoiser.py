"""Small fully-connected noise predictor with hand-written reverse mode.

No autograd framework: forward caches activations, backward walks them.  The
parameter record serializes to a flat little-endian binary blob ("PLDN").
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PLDN"
VERSION = 1
T_FEATURES = 4


def time_features(t: np.ndarray, n_steps: int) -> np.ndarray:
    """(B, 4) embedding of integer step indices."""
    s = np.asarray(t, dtype=np.float64) / n_steps
    return np.stack(
        [s, np.sin(2 * np.pi * s), np.cos(2 * np.pi * s), np.sin(4 * np.pi * s)],
        axis=-1,
    )


class Denoiser:
    """tanh MLP: (x_t, t-features, condition) -> predicted noise."""

    def __init__(self, dim: int, cond_dim: int = 3, hidden=(64, 64), seed: int = 0):
        self.dim = dim
        self.cond_dim = cond_dim
        self.sizes = [dim + T_FEATURES + cond_dim, *hidden, dim]
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    # -- forward / backward ------------------------------------------------

    def _stack_input(self, x_t, t, cond, n_steps):
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        tf = np.atleast_2d(time_features(t, n_steps))
        if len(tf) == 1 and len(x_t) > 1:
            tf = np.repeat(tf, len(x_t), axis=0)
        if len(cond) == 1 and len(x_t) > 1:
            cond = np.repeat(cond, len(x_t), axis=0)
        return np.concatenate([x_t, tf, cond], axis=1)

    def forward(self, x_t, t, cond, n_steps: int) -> np.ndarray:
        out, _ = self.forward_cached(x_t, t, cond, n_steps)
        return out

    def forward_cached(self, x_t, t, cond, n_steps: int):
        z = self._stack_input(x_t, t, cond, n_steps)
        cache = [z]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = z @ w.T + b
            z = a if i == last else np.tanh(a)
            cache.append(z)
        return z, cache

    def backward(self, cache, grad_out):
        """Parameter gradients for d(loss)/d(output) = grad_out."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = np.atleast_2d(grad_out)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            z_in = cache[i]
            if i != last:
                delta = delta * (1.0 - cache[i + 1] ** 2)  # tanh'
            grads_w[i] = delta.T @ z_in
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
        return grads_w, grads_b

    # -- flat parameter access (finite-difference checks, optimizers) -------

    def params_vector(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def set_params_vector(self, vec: np.ndarray) -> None:
        k = 0
        for i, w in enumerate(self.weights):
            self.weights[i] = vec[k:k + w.size].reshape(w.shape).copy()
            k += w.size
        for i, b in enumerate(self.biases):
            self.biases[i] = vec[k:k + b.size].copy()
            k += b.size

    def grads_vector(self, grads_w, grads_b) -> np.ndarray:
        return np.concatenate(
            [g.ravel() for g in grads_w] + [g.ravel() for g in grads_b]
        )

    def copy(self) -> "Denoiser":
        out = Denoiser.__new__(Denoiser)
        out.dim = self.dim
        out.cond_dim = self.cond_dim
        out.sizes = list(self.sizes)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    # -- serialization -------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        blob = bytearray()
        blob += MAGIC
        blob += struct.pack("<I", VERSION)
        blob += struct.pack("<I", self.dim)
        blob += struct.pack("<I", self.cond_dim)
        blob += struct.pack("<I", len(self.sizes))
        for s in self.sizes:
            blob += struct.pack("<I", s)
        for w in self.weights:
            blob += w.astype("<f8").tobytes()
        for b in self.biases:
            blob += b.astype("<f8").tobytes()
        path.write_bytes(bytes(blob))

    @classmethod
    def load(cls, path) -> "Denoiser":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ValueError("not a denoiser record (bad magic)")
        version, = struct.unpack_from("<I", raw, 4)
        if version != VERSION:
            raise ValueError(f"unsupported denoiser record version {version}")
        dim, cond_dim, n_sizes = struct.unpack_from("<III", raw, 8)
        sizes = list(struct.unpack_from(f"<{n_sizes}I", raw, 20))
        offset = 20 + 4 * n_sizes
        out = cls.__new__(cls)
        out.dim = dim
        out.cond_dim = cond_dim
        out.sizes = sizes
        out.weights = []
        out.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            n = fan_in * fan_out
            w = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(fan_out, fan_in)
            out.weights.append(w.astype(np.float64))
            offset += 8 * n
        for fan_out in sizes[1:]:
            b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
            out.biases.append(b.astype(np.float64))
            offset += 8 * fan_out
        return out


class Adam:
    """Plain Adam over the flat parameter vector (pre-training only)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads * grads
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)
