"""Minimal float64 neural-net layers with explicit forward/backward passes.

Everything here is plain numpy. Each layer's ``forward`` returns the output
plus an opaque cache; ``backward`` consumes that cache, accumulates parameter
gradients in place, and returns the gradient w.r.t. the layer input. Working
in float64 keeps finite-difference gradient checks tight.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Parameter:
    """A trainable tensor with an accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


class Linear:
    """Affine map ``y = x @ W + b`` with W of shape (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.W = Parameter(rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out)))
        self.b = Parameter(np.zeros(d_out))

    def forward(self, x):
        return x @ self.W.value + self.b.value, x

    def backward(self, dy, cache):
        x = cache
        self.W.grad += x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value.T

    def parameters(self):
        return [("W", self.W), ("b", self.b)]


class LayerNorm:
    """Layer normalization over the last axis, with affine scale/shift."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        return xhat * self.gamma.value + self.beta.value, (xhat, inv_std)

    def backward(self, dy, cache):
        xhat, inv_std = cache
        self.gamma.grad += (dy * xhat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (dxhat - m1 - xhat * m2) * inv_std

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class ResidualMLPBlock:
    """Pre-norm residual feed-forward block (the transformer FFN sublayer)."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.ln = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x):
        h, c_ln = self.ln.forward(x)
        a, c1 = self.fc1.forward(h)
        g = gelu(a)
        y, c2 = self.fc2.forward(g)
        return x + y, (c_ln, c1, a, c2)

    def backward(self, dy, cache):
        c_ln, c1, a, c2 = cache
        dg = self.fc2.backward(dy, c2)
        da = dg * gelu_grad(a)
        dh = self.fc1.backward(da, c1)
        return dy + self.ln.backward(dh, c_ln)

    def parameters(self):
        named = []
        for prefix, mod in (("ln", self.ln), ("fc1", self.fc1), ("fc2", self.fc2)):
            named.extend((f"{prefix}.{n}", p) for n, p in mod.parameters())
        return named


def l2_normalize(x: np.ndarray):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(norms, 1e-12)
    y = x / safe
    return y, (y, safe)


def l2_normalize_backward(dy, cache):
    y, safe = cache
    return (dy - y * (dy * y).sum(axis=-1, keepdims=True)) / safe


class Encoder:
    """Linear stem, a stack of residual blocks, and a normalizing head.

    The head applies a final layer norm, projects to the embedding dimension,
    and L2-normalizes, so emitted feature rows have unit norm. Blocks are
    index-addressable 0..depth-1 with depth-1 closest to the head; for
    freezing purposes the stem belongs to block 0's group and the head to the
    topmost block's group.
    """

    def __init__(self, d_in: int, width: int, depth: int, d_out: int,
                 rng: np.random.Generator, hidden_mult: int = 2):
        if depth < 1:
            raise ValueError(f"encoder depth must be >= 1, got {depth}")
        self.d_in = d_in
        self.width = width
        self.depth = depth
        self.d_out = d_out
        self.stem = Linear(d_in, width, rng)
        self.blocks = [ResidualMLPBlock(width, hidden_mult * width, rng) for _ in range(depth)]
        self.head_ln = LayerNorm(width)
        self.head = Linear(width, d_out, rng)

    def forward(self, x: np.ndarray, want_cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(
                f"expected input of shape (n, {self.d_in}), got {x.shape}")
        h, c_stem = self.stem.forward(x)
        c_blocks = []
        for blk in self.blocks:
            h, c = blk.forward(h)
            c_blocks.append(c)
        h, c_hln = self.head_ln.forward(h)
        h, c_head = self.head.forward(h)
        out, c_norm = l2_normalize(h)
        if not want_cache:
            return out, None
        return out, (c_stem, c_blocks, c_hln, c_head, c_norm)

    def backward(self, dfeats: np.ndarray, cache) -> np.ndarray:
        c_stem, c_blocks, c_hln, c_head, c_norm = cache
        dh = l2_normalize_backward(dfeats, c_norm)
        dh = self.head.backward(dh, c_head)
        dh = self.head_ln.backward(dh, c_hln)
        for blk, c in zip(reversed(self.blocks), reversed(c_blocks)):
            dh = blk.backward(dh, c)
        return self.stem.backward(dh, c_stem)

    def parameters(self):
        named = [(f"stem.{n}", p) for n, p in self.stem.parameters()]
        for i, blk in enumerate(self.blocks):
            named.extend((f"blocks.{i}.{n}", p) for n, p in blk.parameters())
        named.extend((f"head_ln.{n}", p) for n, p in self.head_ln.parameters())
        named.extend((f"head.{n}", p) for n, p in self.head.parameters())
        return named

    def block_param_groups(self):
        """Parameters grouped by block index; stem joins block 0, head joins the top block."""
        groups = {i: [p for _, p in blk.parameters()] for i, blk in enumerate(self.blocks)}
        groups[0] = [p for _, p in self.stem.parameters()] + groups[0]
        top = self.depth - 1
        groups[top] = groups[top] + [p for _, p in self.head_ln.parameters()]
        groups[top] = groups[top] + [p for _, p in self.head.parameters()]
        return groups

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()
