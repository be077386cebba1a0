"""Layers with hand-written backward passes.

Every module caches what it needs during ``forward`` and consumes that cache
in the next ``backward``; a module must not be called twice before its
backward runs.  Batches are carried in leading axes instead.

Parameter gradients accumulate into ``Parameter.grad`` only for trainable
parameters, so frozen sub-networks still propagate input gradients but skip
the weight-gradient matmuls.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from .core import Parameter, Rng, glorot

NEG_INF = -1e30


class Module:
    def __init__(self):
        self._params: list[Parameter] = []
        self._children: list[Module] = []
        self.training = True

    def param(self, name, value, trainable=True) -> Parameter:
        p = Parameter(name, value, trainable)
        self._params.append(p)
        return p

    def child(self, mod: "Module") -> "Module":
        self._children.append(mod)
        return mod

    def parameters(self):
        yield from self._params
        for c in self._children:
            yield from c.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def train(self, mode=True):
        self.training = mode
        for c in self._children:
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def freeze(self):
        for p in self.parameters():
            p.trainable = False
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.trainable = True
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, name, d_in, d_out, rng: Rng, bias=True):
        super().__init__()
        self.W = self.param(f"{name}.W", glorot(rng, d_in, d_out))
        self.b = self.param(f"{name}.b", np.zeros(d_out)) if bias else None

    def forward(self, x):
        self._x = x
        y = x @ self.W.value
        if self.b is not None:
            y = y + self.b.value
        return y

    def backward(self, dy):
        x = self._x
        if self.W.trainable:
            self.W.grad += x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
        if self.b is not None and self.b.trainable:
            self.b.grad += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return dy @ self.W.value.T


class LayerNorm(Module):
    def __init__(self, name, d, eps=kernels.LN_EPS):
        super().__init__()
        self.gamma = self.param(f"{name}.gamma", np.ones(d))
        self.beta = self.param(f"{name}.beta", np.zeros(d))
        self.eps = eps

    def forward(self, x):
        shape = x.shape
        x2 = np.ascontiguousarray(x.reshape(-1, shape[-1]))
        y, self._xhat, self._rstd = kernels.ln_forward(x2, self.gamma.value, self.beta.value, self.eps)
        return y.reshape(shape)

    def backward(self, dy):
        shape = dy.shape
        d2 = np.ascontiguousarray(dy.reshape(-1, shape[-1]))
        dx, dg, db = kernels.ln_backward(d2, self._xhat, self._rstd, self.gamma.value)
        if self.gamma.trainable:
            self.gamma.grad += dg
        if self.beta.trainable:
            self.beta.grad += db
        return dx.reshape(shape)


class Dropout(Module):
    def __init__(self, p: float, rng: Rng):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x):
        if not self.training or self.p <= 0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        self._mask = (self.rng.generator.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


def _gelu(x):
    c = np.sqrt(2.0 / np.pi)
    u = c * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)
    dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * x * x)
    return y, dydx


class FeedForward(Module):
    def __init__(self, name, d, hidden, rng: Rng, activation="relu", dropout=0.0):
        super().__init__()
        self.fc1 = self.child(Linear(f"{name}.fc1", d, hidden, rng))
        self.fc2 = self.child(Linear(f"{name}.fc2", hidden, d, rng))
        self.drop = self.child(Dropout(dropout, rng))
        self.activation = activation

    def forward(self, x):
        h = self.fc1.forward(x)
        if self.activation == "relu":
            self._dact = (h > 0).astype(np.float64)
            a = h * self._dact
        else:
            a, self._dact = _gelu(h)
        return self.fc2.forward(self.drop.forward(a))

    def backward(self, dy):
        da = self.drop.backward(self.fc2.backward(dy))
        return self.fc1.backward(da * self._dact)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` heads.

    ``forward(xq, xkv)`` with ``xkv=None`` is self-attention.  Shapes are
    ``(B, Sq, d_q)`` and ``(B, Sk, d_kv)``; output is ``(B, Sq, d_out)``.
    """

    def __init__(self, name, d_q, heads, head_dim, rng: Rng, d_kv=None, d_out=None, causal=False):
        super().__init__()
        inner = heads * head_dim
        d_kv = d_q if d_kv is None else d_kv
        d_out = d_q if d_out is None else d_out
        self.heads, self.head_dim, self.causal = heads, head_dim, causal
        self.q = self.child(Linear(f"{name}.q", d_q, inner, rng))
        self.k = self.child(Linear(f"{name}.k", d_kv, inner, rng))
        self.v = self.child(Linear(f"{name}.v", d_kv, inner, rng))
        self.o = self.child(Linear(f"{name}.o", inner, d_out, rng))

    def _split(self, x):
        B, S, _ = x.shape
        return x.reshape(B, S, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, H, S, D = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, S, H * D)

    def forward(self, xq, xkv=None):
        self._self = xkv is None
        src = xq if xkv is None else xkv
        q = self._split(self.q.forward(xq))
        k = self._split(self.k.forward(src))
        v = self._split(self.v.forward(src))
        scale = 1.0 / np.sqrt(self.head_dim)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        if self.causal:
            Sq, Sk = s.shape[-2:]
            mask = np.triu(np.ones((Sq, Sk), dtype=bool), k=1 + Sk - Sq)
            s = np.where(mask, NEG_INF, s)
        s = s - s.max(axis=-1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=-1, keepdims=True)
        self._cache = (q, k, v, p, scale)
        return self.o.forward(self._merge(p @ v))

    def backward(self, dy):
        q, k, v, p, scale = self._cache
        dctx = self._split(self.o.backward(dy))
        dp = dctx @ v.transpose(0, 1, 3, 2)
        dv = p.transpose(0, 1, 3, 2) @ dctx
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dxq = self.q.backward(self._merge(dq))
        dsrc = self.k.backward(self._merge(dk)) + self.v.backward(self._merge(dv))
        if self._self:
            return dxq + dsrc
        return dxq, dsrc


class EncoderBlock(Module):
    """Post-norm block: LN(x + Attn(x)) then LN(h + FFN(h))."""

    def __init__(self, name, d, heads, head_dim, ffn_hidden, rng: Rng, dropout=0.0):
        super().__init__()
        self.attn = self.child(MultiHeadAttention(f"{name}.attn", d, heads, head_dim, rng))
        self.drop1 = self.child(Dropout(dropout, rng))
        self.ln1 = self.child(LayerNorm(f"{name}.ln1", d))
        self.ffn = self.child(FeedForward(f"{name}.ffn", d, ffn_hidden, rng, "relu", dropout))
        self.drop2 = self.child(Dropout(dropout, rng))
        self.ln2 = self.child(LayerNorm(f"{name}.ln2", d))

    def forward(self, x):
        h = self.ln1.forward(x + self.drop1.forward(self.attn.forward(x)))
        return self.ln2.forward(h + self.drop2.forward(self.ffn.forward(h)))

    def backward(self, dy):
        dh = self.ln2.backward(dy)
        dh = dh + self.ffn.backward(self.drop2.backward(dh))
        dx = self.ln1.backward(dh)
        return dx + self.attn.backward(self.drop1.backward(dx))


class DecoderBlock(Module):
    """Pre-norm causal block: x + Attn(LN(x)) then h + FFN(LN(h))."""

    def __init__(self, name, d, heads, head_dim, ffn_hidden, rng: Rng):
        super().__init__()
        self.ln1 = self.child(LayerNorm(f"{name}.ln1", d))
        self.attn = self.child(MultiHeadAttention(f"{name}.attn", d, heads, head_dim, rng, causal=True))
        self.ln2 = self.child(LayerNorm(f"{name}.ln2", d))
        self.ffn = self.child(FeedForward(f"{name}.ffn", d, ffn_hidden, rng, "gelu"))

    def forward(self, x):
        h = x + self.attn.forward(self.ln1.forward(x))
        return h + self.ffn.forward(self.ln2.forward(h))

    def backward(self, dy):
        dh = dy + self.ln2.backward(self.ffn.backward(dy))
        return dh + self.ln1.backward(self.attn.backward(dh))


def sinusoidal_table(n: int, dim: int) -> np.ndarray:
    """Rows j = 0..n-1 of the sine/cosine position table."""
    if dim % 2:
        raise ValueError(f"positional encoding needs an even dim, got {dim}")
    j = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = j / np.power(10000.0, 2.0 * k / dim)
    pe = np.empty((n, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe
