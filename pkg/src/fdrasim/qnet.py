"""Dense ReLU network with hand-written backprop and Adam.

Weight files are ``MAGIC | u32 version | u32 header length | JSON header |
raw little-endian parameters`` with parameters laid out W1, b1, W2, b2, ...
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .link_model import SE_TABLE_SHA256

MAGIC = b"FDRAQNET"
FORMAT_VERSION = 1
HIDDEN_SIZES = (1024, 256, 128)


class QNetwork:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input size {w.shape[0]} != previous output {weights[i - 1].shape[1]}")
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialize(cls, sizes, rng: np.random.Generator, dtype=np.float32) -> "QNetwork":
        """Zero-mean normal weights with std 1/sqrt(fan_in); zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append((rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases)

    @classmethod
    def for_problem(cls, num_ues, num_rbs, rng, actions_per_ue=5, dtype=np.float32) -> "QNetwork":
        sizes = [num_ues * (num_rbs + 1), *HIDDEN_SIZES, actions_per_ue * num_ues]
        return cls.initialize(sizes, rng, dtype)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: "QNetwork") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=self.dtype)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0, out=h)
        return h

    def forward(self, x: np.ndarray):
        """Output plus the per-layer inputs needed by ``backward``."""
        h = np.asarray(x, dtype=self.dtype)
        inputs = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0)
        return h, inputs

    def backward(self, inputs, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients in ``params`` order given dLoss/dOutput."""
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            x = inputs[i]
            grads[2 * i] = x.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                g = g @ self.weights[i].T
                # ReLU derivative: the layer input is the previous ReLU output
                g = g * (x > 0)
        return grads

    def save(self, path, **header_extra) -> None:
        header = {
            "format_version": FORMAT_VERSION,
            "layer_sizes": self.sizes,
            "activations": ["relu"] * (len(self.weights) - 1) + ["identity"],
            "dtype": np.dtype(self.dtype).name,
            "se_table_sha256": SE_TABLE_SHA256,
            **header_extra,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        le = np.dtype(self.dtype).newbyteorder("<")
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob)
            for p in self.params:
                fh.write(np.ascontiguousarray(p, dtype=le).tobytes())

    @classmethod
    def load(cls, path) -> tuple["QNetwork", dict]:
        raw = Path(path).read_bytes()
        if raw[: len(MAGIC)] != MAGIC:
            raise ValueError(f"{path}: not a Q-network weight file")
        version, hlen = struct.unpack_from("<II", raw, len(MAGIC))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        off = len(MAGIC) + 8
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
        off += hlen
        dt = np.dtype(header["dtype"]).newbyteorder("<")
        sizes = header["layer_sizes"]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            for shape, bucket in (((fan_in, fan_out), weights), ((fan_out,), biases)):
                count = int(np.prod(shape))
                arr = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(shape)
                bucket.append(arr.astype(np.dtype(header["dtype"])))
                off += count * dt.itemsize
        if off != len(raw):
            raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
        return cls(weights, biases), header


def td_loss_and_grads(net: QNetwork, states, actions, targets):
    """Half mean squared error on the taken actions' Q-values."""
    q, inputs = net.forward(states)
    idx = np.arange(len(actions))
    diff = q[idx, actions] - np.asarray(targets, dtype=q.dtype)
    grad_out = np.zeros_like(q)
    grad_out[idx, actions] = diff / len(actions)
    loss = 0.5 * float(np.mean(diff.astype(np.float64) ** 2))
    return loss, net.backward(inputs, grad_out)


class Adam:
    def __init__(self, params, lr=1e-6, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
