"""Query transformer: learned queries attend to a sensor embedding."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, Rng, gaussian_sample
from ..numerics.core import glorot


@dataclass
class QFormerConfig:
    d_in: int = 64
    d_hidden: int = 128
    queries: int = 8
    layers: int = 2
    heads: int = 4
    head_dim: int = 32
    ffn_hidden: int = 256
    d_model: int = 128

    def __post_init__(self):
        if self.heads * self.head_dim != self.d_hidden:
            raise ValueError("heads*head_dim must equal d_hidden")

    def to_json(self):
        return asdict(self)


class QFormerBlock(Module):
    """Self-attention over queries, cross-attention to the input, FFN; post-norm."""

    def __init__(self, name, cfg: QFormerConfig, rng: Rng):
        super().__init__()
        d = cfg.d_hidden
        self.sa = self.child(MultiHeadAttention(f"{name}.sa", d, cfg.heads, cfg.head_dim, rng))
        self.ln1 = self.child(LayerNorm(f"{name}.ln1", d))
        self.ca = self.child(MultiHeadAttention(f"{name}.ca", d, cfg.heads, cfg.head_dim, rng, d_kv=cfg.d_in))
        self.ln2 = self.child(LayerNorm(f"{name}.ln2", d))
        self.ffn = self.child(FeedForward(f"{name}.ffn", d, cfg.ffn_hidden, rng, "gelu"))
        self.ln3 = self.child(LayerNorm(f"{name}.ln3", d))

    def forward(self, q, kv):
        h1 = self.ln1.forward(q + self.sa.forward(q))
        h2 = self.ln2.forward(h1 + self.ca.forward(h1, kv))
        return self.ln3.forward(h2 + self.ffn.forward(h2))

    def backward(self, dy):
        dh2 = self.ln3.backward(dy)
        dh2 = dh2 + self.ffn.backward(dh2)
        dh1 = self.ln2.backward(dh2)
        dq_ca, dkv = self.ca.backward(dh1)
        dh1 = dh1 + dq_ca
        dq = self.ln1.backward(dh1)
        return dq + self.sa.backward(dq), dkv


class QFormer(Module):
    def __init__(self, cfg: QFormerConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        init = rng.substream("init")
        self.queries = self.param("qf.queries", glorot(init, cfg.queries, cfg.d_hidden))
        self.blocks = [self.child(QFormerBlock(f"qf.block{i}", cfg, init)) for i in range(cfg.layers)]
        self.out = self.child(Linear("qf.out", cfg.d_hidden, cfg.d_model, init))

    def forward(self, y):
        """y: (B, d_in) sensor embeddings -> (B, K, d_model)."""
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != self.cfg.d_in:
            raise ValueError(f"expected (B, {self.cfg.d_in}) sensor embeddings, got {y.shape}")
        B = len(y)
        kv = y[:, None, :]
        h = np.broadcast_to(self.queries.value, (B,) + self.queries.value.shape).copy()
        for blk in self.blocks:
            h = blk.forward(h, kv)
        return self.out.forward(h)

    def backward(self, dout):
        dh = self.out.backward(dout)
        dkv = 0.0
        for blk in reversed(self.blocks):
            dh, dk = blk.backward(dh)
            dkv = dkv + dk
        if self.queries.trainable:
            self.queries.grad += dh.sum(axis=0)
        return dkv[:, 0, :]


def qformer_forward(qf: QFormer, y_sens) -> np.ndarray:
    """Single embedding (d_in,) -> (K, d_model)."""
    y = np.asarray(y_sens, dtype=np.float64)
    if y.shape != (qf.cfg.d_in,):
        raise ValueError(f"sensor embedding must have length {qf.cfg.d_in}, got shape {y.shape}")
    return qf.forward(y[None])[0]


def assemble_temporal(segments, qf: QFormer) -> np.ndarray:
    """(n, d_in) segment embeddings -> (n*K, d_model), segment blocks in order."""
    seg = np.asarray(segments, dtype=np.float64)
    if seg.ndim != 2 or len(seg) == 0:
        raise ValueError("need a non-empty (n, d_in) list of segment embeddings")
    out = qf.forward(seg)
    return out.reshape(-1, out.shape[-1])


def inject_noise(tokens, variance: float, rng: Rng) -> np.ndarray:
    """Add i.i.d. N(0, variance) to every coordinate."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if variance < 0:
        raise ValueError("variance must be non-negative")
    if variance == 0:
        return tokens
    return tokens + gaussian_sample(rng, tokens.shape, variance)
