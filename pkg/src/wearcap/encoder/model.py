"""Per-modality transformer encoders with a late-fusion projection."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..numerics import EncoderBlock, Linear, Module, Rng, sinusoidal_table
from ..numerics.core import glorot


class EncoderConfigError(ValueError):
    pass


@dataclass
class ModalityConfig:
    channels: int
    window: int = 10
    stride: int = 10
    layers: int = 2
    d_encoder: int = 64
    ffn_hidden: int = 256
    heads: int = 4
    head_dim: int = 16
    dropout: float = 0.1


@dataclass
class EncoderConfig:
    modalities: dict = field(default_factory=dict)  # name -> ModalityConfig
    d_output: int = 64
    teacher_dim: int = 64

    def __post_init__(self):
        self.modalities = {m: c if isinstance(c, ModalityConfig) else ModalityConfig(**c)
                           for m, c in self.modalities.items()}
        self.validate()

    def validate(self):
        if not self.modalities:
            raise EncoderConfigError("encoder needs at least one modality")
        if self.d_output != self.teacher_dim:
            raise EncoderConfigError(f"d_output {self.d_output} must equal teacher dim {self.teacher_dim}")
        for m, c in self.modalities.items():
            if c.heads * c.head_dim != c.d_encoder:
                raise EncoderConfigError(f"{m}: heads*head_dim = {c.heads * c.head_dim} != d_encoder {c.d_encoder}")
            if c.d_encoder % 2:
                raise EncoderConfigError(f"{m}: d_encoder must be even for the position table")
            if c.window < 1 or c.stride < 1 or c.layers < 0 or c.channels < 1:
                raise EncoderConfigError(f"{m}: window/stride/channels must be positive")

    def to_json(self):
        return {"modalities": {m: asdict(c) for m, c in self.modalities.items()},
                "d_output": self.d_output, "teacher_dim": self.teacher_dim}

    @classmethod
    def from_json(cls, d):
        return cls(dict(d["modalities"]), d["d_output"], d["teacher_dim"])

    def subset(self, modalities):
        return EncoderConfig({m: self.modalities[m] for m in modalities}, self.d_output, self.teacher_dim)


def n_tokens(T: int, window: int, stride: int) -> int:
    if T < window:
        raise ValueError(f"stream of {T} samples is shorter than the tokenizer window {window}")
    return (T - window) // stride + 1


def window_index(T, window, stride):
    n = n_tokens(T, window, stride)
    return np.arange(n)[:, None] * stride + np.arange(window)[None, :]


def tokenize_windows(values, window, stride, W, b):
    """Flatten each (window, channels) slice and project: ``flatten(x_j) @ W + b``."""
    values = np.asarray(values, dtype=np.float64)
    idx = window_index(values.shape[-2], window, stride)
    win = values[..., idx, :]  # (..., n_tok, window, C)
    flat = win.reshape(*win.shape[:-2], window * values.shape[-1])
    return flat @ W + b


def positional_encoding(position: int, dim: int) -> np.ndarray:
    return sinusoidal_table(position + 1, dim)[position]


class WindowTokenizer(Module):
    def __init__(self, name, channels, window, stride, d_model, rng: Rng):
        super().__init__()
        self.window, self.stride, self.channels = window, stride, channels
        self.proj = self.child(Linear(name, window * channels, d_model, rng))

    def forward(self, x):
        B, T, C = x.shape
        self._T = T
        self._idx = window_index(T, self.window, self.stride)
        win = x[:, self._idx, :]
        return self.proj.forward(win.reshape(B, len(self._idx), self.window * C))

    def backward(self, dy):
        dflat = self.proj.backward(dy)
        B, n, _ = dflat.shape
        dwin = dflat.reshape(B, n, self.window, self.channels)
        dx = np.zeros((B, self._T, self.channels))
        for j in range(n):
            dx[:, self._idx[j], :] += dwin[:, j]
        return dx


class ModalityEncoder(Module):
    """Tokenizer, position table, learned CLS token, post-norm blocks; returns the CLS state."""

    def __init__(self, name, cfg: ModalityConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_encoder
        self.tok = self.child(WindowTokenizer(f"{name}.tok", cfg.channels, cfg.window, cfg.stride, d, rng))
        self.cls = self.param(f"{name}.cls", glorot(rng, 1, d, (d,)))
        self.blocks = [self.child(EncoderBlock(f"{name}.block{i}", d, cfg.heads, cfg.head_dim,
                                               cfg.ffn_hidden, rng, cfg.dropout))
                       for i in range(cfg.layers)]

    def forward(self, x):
        """x: (B, T, channels) -> (B, d_encoder)."""
        if x.ndim != 3 or x.shape[2] != self.cfg.channels:
            raise ValueError(f"expected (B, T, {self.cfg.channels}) input, got {x.shape}")
        u = self.tok.forward(x)
        B, n, d = u.shape
        if n < 1:
            raise ValueError("empty token sequence")
        u = u + sinusoidal_table(n, d)
        h = np.concatenate([np.broadcast_to(self.cls.value, (B, 1, d)), u], axis=1)
        for blk in self.blocks:
            h = blk.forward(h)
        self._shape = h.shape
        return h[:, 0, :].copy()

    def backward(self, dy):
        dh = np.zeros(self._shape)
        dh[:, 0, :] = dy
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        if self.cls.trainable:
            self.cls.grad += dh[:, 0, :].sum(axis=0)
        return self.tok.backward(dh[:, 1:, :])


class SensorEncoder(Module):
    """Encodes each modality separately, concatenates, projects to the teacher space."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        init = rng.substream("init")
        self.encoders = {}
        for m, mc in cfg.modalities.items():
            self.encoders[m] = self.child(ModalityEncoder(f"enc.{m}", mc, init))
        width = sum(mc.d_encoder for mc in cfg.modalities.values())
        self.fusion = self.child(Linear("enc.fusion", width, cfg.d_output, init))
        self.set_dropout_rng(rng.substream("dropout"))

    def set_dropout_rng(self, rng: Rng):
        from ..numerics import Dropout

        def walk(mod):
            for c in mod._children:
                if isinstance(c, Dropout):
                    c.rng = rng
                walk(c)
        walk(self)

    @property
    def modalities(self):
        return list(self.cfg.modalities)

    def forward(self, batch: dict, return_intermediates=False):
        """batch: modality -> (B, T, C) array.  Returns (B, d_output)."""
        missing = [m for m in self.cfg.modalities if m not in batch]
        if missing:
            raise ValueError(f"batch lacks modalities {missing}")
        ys = [self.encoders[m].forward(np.asarray(batch[m], dtype=np.float64)) for m in self.cfg.modalities]
        self._widths = [y.shape[1] for y in ys]
        out = self.fusion.forward(fuse_concat(ys))
        return (out, ys) if return_intermediates else out

    def backward(self, dy):
        dcat = self.fusion.backward(dy)
        offs = np.cumsum([0] + self._widths)
        return {m: self.encoders[m].backward(dcat[:, offs[i]:offs[i + 1]])
                for i, m in enumerate(self.cfg.modalities)}

    def encode(self, batch: dict) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            return self.forward(batch)
        finally:
            self.train(was)


def fuse_concat(intermediates):
    ys = [np.asarray(y, dtype=np.float64) for y in intermediates]
    if not ys:
        raise ValueError("fusion needs at least one modality")
    if len({y.shape[:-1] for y in ys}) != 1:
        raise ValueError("intermediate batch shapes differ")
    return np.concatenate(ys, axis=-1)


def fuse_modalities(intermediates, fusion: Linear, expected_width=None):
    """Concatenate per-modality vectors and apply the fusion layer."""
    lens = {np.shape(y)[-1] for y in intermediates}
    if expected_width is not None and lens != {expected_width}:
        raise ValueError(f"intermediate lengths {sorted(lens)} != d_encoder {expected_width}")
    cat = fuse_concat(intermediates)
    if cat.shape[-1] != fusion.W.value.shape[0]:
        raise ValueError(f"concatenated width {cat.shape[-1]} != fusion input {fusion.W.value.shape[0]}")
    return fusion.forward(cat)


def alignment_loss(pred, target, reg_weight=0.0, params=()):
    """Sum of squared L2 distances plus ``reg_weight * sum(theta**2)``.

    Returns ``(loss, dloss/dpred)``; the penalty gradient is left to the
    optimizer's weight decay.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != teacher shape {target.shape}")
    diff = pred - target
    loss = float((diff * diff).sum())
    if reg_weight:
        loss += reg_weight * sum(float((p.value ** 2).sum()) for p in params if p.trainable)
    return loss, 2.0 * diff
