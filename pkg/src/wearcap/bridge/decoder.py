"""Small causal transformer language model with tied input/output embeddings."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import DecoderBlock, LayerNorm, Module, Rng, log_softmax, softmax
from ..numerics.core import glorot
from .prompts import TokenSequence
from .vocab import SLOT, Vocabulary, VocabularyError


@dataclass
class DecoderConfig:
    vocab_size: int
    d_model: int = 128
    layers: int = 2
    heads: int = 4
    head_dim: int = 32
    ffn_hidden: int = 512
    max_len: int = 256

    def __post_init__(self):
        if self.heads * self.head_dim != self.d_model:
            raise ValueError(f"heads*head_dim {self.heads * self.head_dim} != d_model {self.d_model}")

    def to_json(self):
        return asdict(self)


class ToyDecoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        init = rng.substream("init")
        d = cfg.d_model
        self.tok = self.param("dec.tok_emb", glorot(init, cfg.vocab_size, d))
        self.pos = self.param("dec.pos_emb", glorot(init, cfg.max_len, d))
        self.blocks = [self.child(DecoderBlock(f"dec.block{i}", d, cfg.heads, cfg.head_dim, cfg.ffn_hidden, init))
                       for i in range(cfg.layers)]
        self.ln_f = self.child(LayerNorm("dec.ln_f", d))

    def embed(self, ids, slot_vectors=None):
        """Token embeddings with SLOT positions filled from ``slot_vectors``.

        ids: (B, S); slot_vectors: (B, n_slots, d) in the order the slots appear.
        """
        ids = np.asarray(ids)
        x = self.tok.value[np.where(ids == SLOT, 0, ids)]
        mask = ids == SLOT
        if mask.any():
            if slot_vectors is None:
                raise ValueError("sequence has sensor slots but no slot vectors were given")
            x[mask] = np.asarray(slot_vectors).reshape(-1, x.shape[-1])
        self._ids = ids
        return x

    def forward(self, x):
        """x: (B, S, d) input embeddings -> logits (B, S, vocab)."""
        B, S, _ = x.shape
        if S > self.cfg.max_len:
            raise ValueError(f"sequence length {S} exceeds max_len {self.cfg.max_len}")
        h = x + self.pos.value[:S]
        for blk in self.blocks:
            h = blk.forward(h)
        h = self.ln_f.forward(h)
        self._h = h
        return h @ self.tok.value.T

    def backward(self, dlogits):
        """Returns d loss / d input embeddings (B, S, d)."""
        if self.tok.trainable:
            self.tok.grad += dlogits.reshape(-1, dlogits.shape[-1]).T @ self._h.reshape(-1, self._h.shape[-1])
        dh = self.ln_f.backward(dlogits @ self.tok.value)
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        if self.pos.trainable:
            self.pos.grad[: dh.shape[1]] += dh.sum(axis=0)
        return dh

    def backward_embed(self, dx):
        """Scatter input-embedding gradients into the token table (text positions only)."""
        if not self.tok.trainable:
            return
        ids = self._ids
        mask = ids != SLOT
        np.add.at(self.tok.grad, ids[mask], dx[mask])

    def logits_for(self, seq: TokenSequence) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            x = self.embed(seq.ids[None, :], None if seq.slots is None else seq.slots[None])
            return self.forward(x)[0]
        finally:
            self.train(was)


def sequence_loss(logits, targets, mask):
    """Summed next-token cross-entropy per sequence.

    logits: (B, S, V) already aligned so ``logits[:, t]`` predicts
    ``targets[:, t]``; mask: (B, S) of 0/1.  Returns ``(loss per sequence (B,),
    dlogits of sum over batch)``.
    """
    logp = log_softmax(logits, axis=-1)
    B, S, _ = logits.shape
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    per_seq = -(picked * mask).sum(axis=1)
    d = softmax(logits, axis=-1)
    np.put_along_axis(d, targets[..., None], np.take_along_axis(d, targets[..., None], axis=-1) - 1.0, axis=-1)
    d *= mask[..., None]
    return per_seq, d


def generation_loss(decoder: ToyDecoder, prompt: TokenSequence, targets, vocab: Vocabulary | None = None):
    """-sum_i log p(y_i | prompt, y_<i), teacher forced in one causal pass."""
    targets = np.asarray(targets, dtype=np.int64)
    if len(targets) == 0:
        raise ValueError("empty target sequence")
    V = decoder.cfg.vocab_size
    if targets.min() < 0 or targets.max() >= V:
        raise VocabularyError("target token outside the decoder vocabulary")
    ids = np.concatenate([prompt.ids, targets[:-1]])[None]
    x = decoder.embed(ids, None if prompt.slots is None else prompt.slots[None])
    logits = decoder.forward(x)
    P = len(prompt.ids)
    lg = logits[:, P - 1:]
    per_pos = -np.take_along_axis(log_softmax(lg, axis=-1), targets[None, :, None], axis=-1)[0, :, 0]
    return float(per_pos.sum()), per_pos


def greedy_decode(decoder: ToyDecoder, vocab: Vocabulary, prompt: TokenSequence, max_len: int = 32) -> str:
    """Argmax decoding, lowest id on ties, stops at ``<eos>`` or ``max_len`` tokens."""
    return vocab.decode(greedy_ids(decoder, vocab, prompt, max_len))


def greedy_ids(decoder, vocab, prompt: TokenSequence, max_len=32) -> list[int]:
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    was = decoder.training
    decoder.eval()
    out = []
    try:
        slots = None if prompt.slots is None else prompt.slots[None]
        for _ in range(max_len):
            ids = np.concatenate([prompt.ids, np.array(out, dtype=np.int64)])[None]
            logits = decoder.forward(decoder.embed(ids, slots))[0, -1]
            nxt = int(np.argmax(logits))
            out.append(nxt)
            if nxt == vocab.eos_id:
                break
    finally:
        decoder.train(was)
    return out
