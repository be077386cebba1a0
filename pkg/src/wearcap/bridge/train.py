"""Decoder pretraining and the two Q-former training stages."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..cli.checkpoint import Checkpoint, load_module_state, module_state
from ..encoder.train import DivergenceError
from ..numerics import Adam, Rng, hash_arrays
from .decoder import DecoderConfig, ToyDecoder, greedy_decode, sequence_loss
from .prompts import build_prompt, prompt_text
from .qformer import QFormer, QFormerConfig, assemble_temporal, inject_noise
from .vocab import SLOT, Vocabulary

INSTRUCT_QUESTIONS = ("What is the person doing?", "Describe the activity.")


class FreezeError(RuntimeError):
    pass


@dataclass
class LMSettings:
    lr: float = 3e-3
    batch_size: int = 16
    epochs: int = 60
    seed: int = 0


@dataclass
class BridgeSettings:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 60
    seed: int = 0
    noise_variance: float = 1e-4
    noise_in_stage2: bool = True
    iterations: int = 200  # stage 2
    patience: int = 10
    min_delta: float = 1e-4
    early_stopping: bool = False
    max_decode_len: int = 32


@dataclass
class Run:
    model: object
    log: dict = field(default_factory=dict)
    checkpoint: Checkpoint | None = None


def lm_corpus(captions, slot_counts=(64,), qa_pairs=(), instruct_slots=8):
    """Texts for decoder pretraining: bare captions, captions after the
    stage-1 prompt for each slot count, and answers after instruct prompts."""
    texts = sorted(set(captions))
    out = list(texts)
    for n in slot_counts:
        out += [prompt_text("stage1", n) + " " + c for c in texts]
    out += [prompt_text("instruct", instruct_slots, q) + " " + a for q, a in qa_pairs]
    return out


def build_vocab(texts) -> Vocabulary:
    return Vocabulary.build(list(texts) + [prompt_text("stage1", 1), prompt_text("instruct", 1, "x")])


def _pad_batch(seqs, pad_id):
    """seqs: list of (input ids, target ids aligned, mask) -> stacked arrays."""
    S = max(len(s[0]) for s in seqs)
    B = len(seqs)
    ids = np.full((B, S), pad_id, dtype=np.int64)
    tgt = np.full((B, S), pad_id, dtype=np.int64)
    mask = np.zeros((B, S))
    for i, (a, t, m) in enumerate(seqs):
        ids[i, :len(a)] = a
        tgt[i, :len(t)] = t
        mask[i, :len(m)] = m
    return ids, tgt, mask


def _lm_example(vocab, text):
    seq = [vocab.bos_id] + vocab.encode(text) + [vocab.eos_id]
    return np.array(seq[:-1]), np.array(seq[1:]), np.ones(len(seq) - 1)


def _supervised_example(prompt_ids, target_ids):
    """Input = prompt + targets[:-1]; loss on positions that predict targets."""
    P, m = len(prompt_ids), len(target_ids)
    ids = np.concatenate([prompt_ids, target_ids[:-1]])
    tgt = np.zeros(len(ids), dtype=np.int64)
    mask = np.zeros(len(ids))
    tgt[P - 1:] = target_ids
    mask[P - 1:] = 1.0
    return ids, tgt, mask


def decoder_checkpoint(dec: ToyDecoder, vocab: Vocabulary, seed, log=None, parent=None):
    tensors, steps = module_state(dec)
    return Checkpoint("decoder", dec.cfg.to_json(), tensors, "pretrain-lm", seed, parent,
                      {"steps": steps, "vocab": vocab.to_json(), "log": log or {}})


def decoder_from_checkpoint(ck: Checkpoint):
    vocab = Vocabulary.from_json(ck.extra["vocab"])
    dec = ToyDecoder(DecoderConfig(**ck.config), Rng(ck.seed))
    load_module_state(dec, ck)
    return dec, vocab


def qformer_checkpoint(qf: QFormer, stage, seed, log=None, parent=None, extra=None):
    tensors, steps = module_state(qf)
    ex = {"steps": steps, "log": log or {}}
    ex.update(extra or {})
    return Checkpoint("qformer", qf.cfg.to_json(), tensors, stage, seed, parent, ex)


def qformer_from_checkpoint(ck: Checkpoint) -> QFormer:
    qf = QFormer(QFormerConfig(**ck.config), Rng(ck.seed))
    load_module_state(qf, ck)
    return qf


def pretrain_lm(texts, vocab: Vocabulary, cfg: DecoderConfig | None = None,
                settings: LMSettings = LMSettings(), decoder: ToyDecoder | None = None) -> Run:
    """Text-only next-token training of the toy decoder."""
    texts = list(texts)
    if not texts:
        raise ValueError("empty pretraining corpus")
    rng = Rng(settings.seed)
    if decoder is None:
        decoder = ToyDecoder(cfg or DecoderConfig(len(vocab)), rng)
    if decoder.cfg.vocab_size != len(vocab):
        raise ValueError("decoder vocab size does not match the vocabulary")
    examples = [_lm_example(vocab, t) for t in texts]
    opt = Adam(decoder.parameters(), settings.lr)
    shuffle = rng.substream("shuffle")
    log = {"train_loss": []}
    decoder.train()
    for epoch in range(settings.epochs):
        order = shuffle.permutation(len(examples))
        total = 0.0
        for i in range(0, len(order), settings.batch_size):
            batch = [examples[j] for j in order[i:i + settings.batch_size]]
            ids, tgt, mask = _pad_batch(batch, vocab.pad_id)
            logits = decoder.forward(decoder.embed(ids))
            per_seq, dlogits = sequence_loss(logits, tgt, mask)
            loss = float(per_seq.sum())
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite LM loss at epoch {epoch}")
            dx = decoder.backward(dlogits / len(batch))
            decoder.backward_embed(dx)
            opt.step()
            total += loss
        log["train_loss"].append(total / len(examples))
    decoder.eval()
    ck = decoder_checkpoint(decoder, vocab, settings.seed, log)
    ck.extra["settings"] = asdict(settings)
    return Run(decoder, log, ck)


def _require_frozen(module, what):
    if module is not None and any(p.trainable for p in module.parameters()):
        raise FreezeError(f"{what} must be frozen for bridge training")


class _BridgeTrainer:
    """Shared step: Q-former tokens (+noise) into slot positions of a frozen decoder."""

    def __init__(self, qf, decoder, vocab, settings, noise_rng):
        self.qf, self.dec, self.vocab, self.s = qf, decoder, vocab, settings
        self.noise_rng = noise_rng
        self.opt = Adam(qf.parameters(), settings.lr)

    def step(self, embeds, examples, noise_variance, train=True):
        """embeds: (B, n, d_in); examples: per-sample (ids, tgt, mask) with SLOT ids."""
        B, n, _ = embeds.shape
        ids, tgt, mask = _pad_batch(examples, self.vocab.pad_id)
        self.qf.train(train)
        toks = self.qf.forward(embeds.reshape(B * n, -1))
        K, d = toks.shape[1], toks.shape[2]
        toks = toks.reshape(B, n * K, d)
        if train and noise_variance > 0:
            toks = inject_noise(toks, noise_variance, self.noise_rng)
        x = self.dec.embed(ids, toks)
        logits = self.dec.forward(x)
        per_seq, dlogits = sequence_loss(logits, tgt, mask)
        loss = float(per_seq.sum())
        if not np.isfinite(loss):
            raise DivergenceError("non-finite generation loss")
        if train:
            dx = self.dec.backward(dlogits / B)
            dtoks = dx[ids == SLOT].reshape(B * n, K, d)
            self.qf.backward(dtoks)
            self.opt.step()
        return loss


def stage1_examples(vocab, captions, n_slots):
    prompt = build_prompt(vocab, "stage1", n_slots).ids
    return [_supervised_example(prompt, np.array(vocab.encode(c) + [vocab.eos_id])) for c in captions]


def train_stage1(qf: QFormer, decoder: ToyDecoder, vocab: Vocabulary, segments, captions,
                 settings: BridgeSettings, encoder=None, val=None) -> Run:
    """Cross-modal training: only the Q-former learns.

    segments: (N, n, d_in) frozen-encoder outputs per clip, in time order.
    """
    _require_frozen(decoder, "decoder")
    _require_frozen(encoder, "encoder")
    segments = np.asarray(segments, dtype=np.float64)
    N, n, _ = segments.shape
    if N != len(captions):
        raise ValueError("one caption per clip required")
    rng = Rng(settings.seed)
    frozen_before = hash_arrays(decoder.parameters()), hash_arrays(encoder.parameters()) if encoder else None
    examples = stage1_examples(vocab, captions, n * qf.cfg.queries)
    trainer = _BridgeTrainer(qf, decoder, vocab, settings, rng.substream("noise"))
    shuffle = rng.substream("shuffle")
    log = {"train_loss": [], "val_loss": []}
    best, stale = np.inf, 0
    for epoch in range(settings.epochs):
        order = shuffle.permutation(N)
        total = 0.0
        for i in range(0, N, settings.batch_size):
            idx = order[i:i + settings.batch_size]
            total += trainer.step(segments[idx], [examples[j] for j in idx], settings.noise_variance)
        log["train_loss"].append(total / N)
        if val is not None:
            vseg, vcap = val
            vex = stage1_examples(vocab, vcap, n * qf.cfg.queries)
            vl = sum(trainer.step(np.asarray(vseg)[i:i + 64], vex[i:i + 64], 0.0, train=False)
                     for i in range(0, len(vcap), 64)) / len(vcap)
            log["val_loss"].append(vl)
            if settings.early_stopping:
                if vl < best - settings.min_delta:
                    best, stale = vl, 0
                else:
                    stale += 1
                    if stale >= settings.patience:
                        break
    qf.eval()
    frozen_after = hash_arrays(decoder.parameters()), hash_arrays(encoder.parameters()) if encoder else None
    if frozen_before != frozen_after:  # pragma: no cover - guarded by the frozen checks
        raise FreezeError("frozen parameters changed during stage 1")
    log["decoder_hash"] = frozen_after[0]
    ck = qformer_checkpoint(qf, "stage1", settings.seed, log, extra={"n_segments": n})
    ck.extra["settings"] = asdict(settings)
    return Run(qf, log, ck)


def instruct_examples(vocab, triples, n_slots):
    out = []
    for _, q, a in triples:
        prompt = build_prompt(vocab, "instruct", n_slots, q).ids
        out.append(_supervised_example(prompt, np.array(vocab.encode(a) + [vocab.eos_id])))
    return out


def instruct_tune_stage2(qf: QFormer, decoder: ToyDecoder, vocab: Vocabulary, triples,
                         settings: BridgeSettings, stage1: Checkpoint | None) -> Run:
    """Q-former tuning on (teacher-space embedding, question, answer) triples."""
    if stage1 is None or stage1.kind != "qformer" or stage1.stage != "stage1":
        raise FreezeError("instruction tuning needs a stage-1 Q-former checkpoint")
    _require_frozen(decoder, "decoder")
    load_module_state(qf, stage1)
    triples = list(triples)
    if not triples:
        raise ValueError("no instruction triples")
    rng = Rng(settings.seed).substream("stage2")
    embeds = np.stack([np.asarray(e, dtype=np.float64) for e, _, _ in triples])[:, None, :]
    examples = instruct_examples(vocab, triples, qf.cfg.queries)
    trainer = _BridgeTrainer(qf, decoder, vocab, settings, rng.substream("noise"))
    variance = settings.noise_variance if settings.noise_in_stage2 else 0.0
    shuffle = rng.substream("shuffle")
    log = {"train_loss": []}
    order = np.empty(0, dtype=np.int64)
    for it in range(settings.iterations):
        if len(order) < settings.batch_size:
            order = np.concatenate([order, shuffle.permutation(len(triples))])
        idx, order = order[:settings.batch_size], order[settings.batch_size:]
        loss = trainer.step(embeds[idx], [examples[j] for j in idx], variance)
        log["train_loss"].append(loss / len(idx))
    qf.eval()
    ck = qformer_checkpoint(qf, "stage2", settings.seed, log, parent=stage1.checkpoint_id,
                            extra={"n_segments": stage1.extra.get("n_segments", 1)})
    ck.extra["settings"] = asdict(settings)
    return Run(qf, log, ck)


def caption_segments(qf, decoder, vocab, segments, max_len=32) -> str:
    """Greedy caption for one clip from its (n, d_in) segment embeddings."""
    qf.eval()
    toks = assemble_temporal(segments, qf)
    return greedy_decode(decoder, vocab, build_prompt(vocab, "stage1", toks), max_len)


def answer_question(qf, decoder, vocab, embedding, question, max_len=32) -> str:
    qf.eval()
    toks = assemble_temporal(np.asarray(embedding)[None], qf)
    return greedy_decode(decoder, vocab, build_prompt(vocab, "instruct", toks, question), max_len)
