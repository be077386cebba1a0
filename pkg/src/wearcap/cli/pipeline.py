"""Stage sequencing: data -> preprocess -> encoder -> lm -> stage1 -> stage2 -> eval.

Each stage writes one directory atomically and is skipped when that
directory already exists, unless ``force`` is set.  Later stages always
reload their inputs from disk, so a resumed run and a fresh run see the same
bytes.
"""
from __future__ import annotations

import json
import os
import shutil
import tempfile

import numpy as np

from ..bridge.captions import rephrase_label
from ..bridge.decoder import DecoderConfig
from ..bridge.qformer import QFormer, QFormerConfig
from ..bridge.train import (
    INSTRUCT_QUESTIONS,
    BridgeSettings,
    LMSettings,
    build_vocab,
    caption_segments,
    decoder_from_checkpoint,
    instruct_tune_stage2,
    lm_corpus,
    pretrain_lm,
    qformer_checkpoint,
    qformer_from_checkpoint,
    train_stage1,
)
from ..encoder import (
    EncoderConfig,
    ModalityConfig,
    TeacherProvider,
    TrainSettings,
    encode_segments,
    encoder_from_checkpoint,
    train_encoder,
)
from ..ingest import (
    ClipRecord,
    DatasetSplit,
    load_manifest,
    load_recordings,
    preprocess_recordings,
    segment_clips,
    split_dataset,
)
from ..metrics import evaluate_corpus
from ..numerics import Rng
from .checkpoint import load_checkpoint, save_checkpoint
from .config import apply_ablation, dumps
from .synthetic import make_synthetic_dataset

STAGES = ("data", "preprocess", "encoder", "lm", "stage1", "stage2", "eval")


class MissingInputError(FileNotFoundError):
    pass


def _log(progress, msg):
    if progress:
        progress(msg)


class atomic_dir:
    """Build a directory under a temporary name; rename into place on success."""

    def __init__(self, path):
        self.path = os.path.abspath(path)

    def __enter__(self):
        parent = os.path.dirname(self.path)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=f".{os.path.basename(self.path)}-", dir=parent)
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if os.path.exists(self.path):
            shutil.rmtree(self.path)
        os.replace(self.tmp, self.path)
        return False


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


class Layout:
    """Where each stage lives.  Stages listed in ``shared`` point outside
    ``out`` (the harness shares data, encoder and LM between runs); the
    mapping is kept in ``out/layout.json`` so later commands find them."""

    def __init__(self, out, shared: dict | None = None):
        self.out = os.path.abspath(out)
        record = os.path.join(self.out, "layout.json")
        if shared is None and os.path.exists(record):
            shared = read_json(record)["shared"]
        self.shared = {k: os.path.abspath(v) for k, v in (shared or {}).items()}
        if self.shared:
            os.makedirs(self.out, exist_ok=True)
            write_json(record + ".tmp", {"shared": self.shared})
            os.replace(record + ".tmp", record)

    def __getitem__(self, stage):
        return self.shared.get(stage, os.path.join(self.out, stage))


def _need(path, what):
    if not os.path.exists(path):
        raise MissingInputError(f"{what} not found: {path}")
    return path


# -- data ------------------------------------------------------------------

def stage_data(cfg, layout, force=False, progress=None) -> str:
    if cfg["data"]["source"] == "manifest":
        return _need(cfg["data"]["manifest"], "manifest")
    path = layout["data"]
    manifest = os.path.join(path, "manifest.json")
    if os.path.exists(manifest) and not force:
        return manifest
    syn = cfg["data"]["synthetic"]
    _log(progress, f"data: writing synthetic '{syn['task']}' dataset")
    with atomic_dir(path) as tmp:
        make_synthetic_dataset(tmp, syn["task"], syn["n_recordings"], syn["n_subjects"], syn["duration_s"],
                               syn["n_activities"], cfg["modalities"], cfg["seed"], syn["nan_rate"])
    return manifest


# -- preprocess -------------------------------------------------------------

_META_FIELDS = ("clip_id", "subject_id", "source_id", "label", "caption", "teacher_key", "start", "end")


def _save_clips(dirpath, name, clips, modalities):
    write_json(os.path.join(dirpath, f"{name}_clips.json"),
               [{f: getattr(c, f) for f in _META_FIELDS} for c in clips])
    for m in modalities:
        np.save(os.path.join(dirpath, f"{name}_{m}.npy"), np.stack([c.streams[m] for c in clips]))


def load_clips(dirpath, name) -> list[ClipRecord]:
    meta = read_json(os.path.join(dirpath, f"{name}_clips.json"))
    mods = read_json(os.path.join(dirpath, "info.json"))["modalities"]
    arrays = {m: np.load(os.path.join(dirpath, f"{name}_{m}.npy")) for m in mods}
    out = []
    for i, d in enumerate(meta):
        out.append(ClipRecord(d["clip_id"], d["subject_id"], d["start"], d["end"],
                              {m: arrays[m][i] for m in mods}, d["label"], d["caption"],
                              d["teacher_key"], d["source_id"]))
    return out


def stage_preprocess(cfg, layout, force=False, progress=None) -> str:
    path = layout["preprocess"]
    if os.path.exists(os.path.join(path, "info.json")) and not force:
        return path
    manifest = stage_data(cfg, layout, force=False, progress=progress)
    entries = load_manifest(manifest)
    sp = cfg["split"]
    split = split_dataset(entries, sp["mode"], tuple(sp["fractions"]), cfg["seed"], sp["holdout_subjects"])
    pp = cfg["preprocess"]
    _log(progress, f"preprocess: {len(entries)} recordings, split {len(split.train)}/"
                   f"{len(split.validation)}/{len(split.test)}")
    recs = load_recordings(entries, cfg["modalities"], pp["rate_hz"])
    recs, stats = preprocess_recordings(recs, split.train, pp["eye_mode"])
    enc_clips = segment_clips(recs, pp["encoder_window_s"], pp["encoder_stride_s"])
    dec_clips = segment_clips(recs, pp["decoder_window_s"], pp["decoder_stride_s"])
    with atomic_dir(path) as tmp:
        write_json(os.path.join(tmp, "split.json"), split.to_json())
        write_json(os.path.join(tmp, "stats.json"), stats)
        _save_clips(tmp, "encoder", enc_clips, cfg["modalities"])
        _save_clips(tmp, "decoder", dec_clips, cfg["modalities"])
        write_json(os.path.join(tmp, "info.json"), {
            "modalities": cfg["modalities"], "rate_hz": pp["rate_hz"],
            "n_encoder_clips": len(enc_clips), "n_decoder_clips": len(dec_clips)})
    return path


def load_split(cfg, layout) -> DatasetSplit:
    return DatasetSplit.from_json(read_json(os.path.join(layout["preprocess"], "split.json")))


def partition(clips, split: DatasetSplit, name):
    keep = set(getattr(split, name))
    return [c for c in clips if c.source_id in keep]


# -- teacher / encoder ------------------------------------------------------

def make_teacher(cfg) -> TeacherProvider:
    t = cfg["teacher"]
    if t["source"] == "file":
        tp = TeacherProvider.from_file(_need(cfg["data"]["teacher_file"], "teacher file"))
        if tp.dim != t["dim"]:
            raise ValueError(f"teacher file dim {tp.dim} != teacher.dim {t['dim']}")
        return tp
    return TeacherProvider.synthetic(t["dim"], cfg["seed"])


def encoder_config(cfg, clips) -> EncoderConfig:
    e = cfg["encoder"]
    mods = e["modalities"] or cfg["modalities"]
    shared = {k: e[k] for k in ("window", "stride", "layers", "d_encoder", "ffn_hidden", "heads",
                                "head_dim", "dropout")}
    return EncoderConfig({m: ModalityConfig(channels=int(clips[0].streams[m].shape[1]), **shared) for m in mods},
                         e["d_output"], cfg["teacher"]["dim"])


def stage_encoder(cfg, layout, force=False, progress=None) -> str:
    path = layout["encoder"]
    if os.path.exists(path) and not force:
        return path
    pre = stage_preprocess(cfg, layout, progress=progress)
    split = load_split(cfg, layout)
    clips = load_clips(pre, "encoder")
    train, val = partition(clips, split, "train"), partition(clips, split, "validation")
    t = cfg["train"]["encoder"]
    settings = TrainSettings(lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"], seed=cfg["seed"],
                             reg_weight=t["reg_weight"], patience=t["patience"], min_delta=t["min_delta"],
                             early_stopping=t["early_stopping"])
    ecfg = encoder_config(cfg, clips)
    _log(progress, f"encoder: {len(train)} train / {len(val)} val clips, modalities {list(ecfg.modalities)}")
    run = train_encoder(train, make_teacher(cfg), ecfg, settings, val or None)
    _log(progress, f"encoder: loss {run.log['initial_loss']:.4f} -> {run.log['final_loss']:.4f} "
                   f"in {run.log['epochs_run']} epochs")
    save_checkpoint(run.checkpoint, path)
    return path


def load_encoder(layout):
    enc = encoder_from_checkpoint(load_checkpoint(_need(layout["encoder"], "encoder checkpoint"), "encoder"))
    return enc.eval().freeze()


# -- language model ---------------------------------------------------------

def lm_texts(cfg, layout):
    pre = layout["preprocess"]
    dec_clips = load_clips(pre, "decoder")
    enc_clips = load_clips(pre, "encoder")
    K = cfg["qformer"]["queries"]
    slot_counts = sorted({K, K * cfg["temporal"]["n_segments"]})
    labels = sorted({c.label for c in enc_clips})
    qa = [(q, rephrase_label(lab)) for lab in labels for q in INSTRUCT_QUESTIONS]
    captions = sorted({c.caption for c in dec_clips} | {a for _, a in qa})
    return lm_corpus(captions, slot_counts, qa, K)


def stage_lm(cfg, layout, force=False, progress=None) -> str:
    path = layout["lm"]
    if os.path.exists(path) and not force:
        return path
    stage_preprocess(cfg, layout, progress=progress)
    texts = lm_texts(cfg, layout)
    vocab = build_vocab(texts)
    d = cfg["decoder"]
    dcfg = DecoderConfig(len(vocab), d["d_model"], d["layers"], d["heads"], d["head_dim"], d["ffn_hidden"], d["max_len"])
    t = cfg["train"]["lm"]
    _log(progress, f"pretrain-lm: {len(texts)} texts, vocabulary {len(vocab)}")
    run = pretrain_lm(texts, vocab, dcfg, LMSettings(t["lr"], t["batch_size"], t["epochs"], cfg["seed"]))
    _log(progress, f"pretrain-lm: loss {run.log['train_loss'][0]:.3f} -> {run.log['train_loss'][-1]:.3f}")
    save_checkpoint(run.checkpoint, path)
    return path


def load_decoder(layout):
    dec, vocab = decoder_from_checkpoint(load_checkpoint(_need(layout["lm"], "decoder checkpoint"), "decoder"))
    return dec.eval().freeze(), vocab


# -- bridge -----------------------------------------------------------------

def qformer_config(cfg, d_model) -> QFormerConfig:
    q = cfg["qformer"]
    return QFormerConfig(cfg["teacher"]["dim"], q["d_hidden"], q["queries"], q["layers"], q["heads"],
                         q["head_dim"], q["ffn_hidden"], d_model)


def segment_embeddings(cfg, enc, clips):
    n = cfg["temporal"]["n_segments"]
    window = int(round(cfg["preprocess"]["encoder_window_s"] * cfg["preprocess"]["rate_hz"]))
    if not clips:
        return np.zeros((0, n, enc.cfg.d_output))
    return np.stack([encode_segments(enc, c.streams, n, window) for c in clips])


def bridge_settings(cfg, stage):
    t = cfg["train"][stage]
    s = BridgeSettings(lr=t["lr"], batch_size=t["batch_size"], seed=cfg["seed"],
                       noise_variance=cfg["noise"]["variance"], noise_in_stage2=cfg["noise"]["in_stage2"],
                       max_decode_len=cfg["evaluate"]["max_len"])
    if stage == "stage1":
        s.epochs, s.patience, s.min_delta, s.early_stopping = t["epochs"], t["patience"], t["min_delta"], t["early_stopping"]
    else:
        s.iterations = t["iterations"]
    return s


def stage_stage1(cfg, layout, force=False, progress=None) -> str:
    path = layout["stage1"]
    if os.path.exists(path) and not force:
        return path
    cfg = apply_ablation(cfg)
    stage_encoder(cfg, layout, progress=progress)
    stage_lm(cfg, layout, progress=progress)
    enc = load_encoder(layout)
    dec, vocab = load_decoder(layout)
    qf = QFormer(qformer_config(cfg, dec.cfg.d_model), Rng(cfg["seed"]).substream("qformer"))
    ids = {"encoder": load_checkpoint(layout["encoder"]).checkpoint_id,
           "decoder": load_checkpoint(layout["lm"]).checkpoint_id}
    if cfg["ablation"]["no_stage1"]:
        _log(progress, "train-bridge: skipped (no_stage1), keeping the initial Q-former")
        ck = qformer_checkpoint(qf, "untrained", cfg["seed"], extra={"n_segments": cfg["temporal"]["n_segments"]})
    else:
        split = load_split(cfg, layout)
        clips = partition(load_clips(layout["preprocess"], "decoder"), split, "train")
        segs = segment_embeddings(cfg, enc, clips)
        vclips = partition(load_clips(layout["preprocess"], "decoder"), split, "validation")
        val = (segment_embeddings(cfg, enc, vclips), [c.caption for c in vclips]) if vclips else None
        settings = bridge_settings(cfg, "stage1")
        _log(progress, f"train-bridge: {len(clips)} clips, n={cfg['temporal']['n_segments']}, "
                       f"noise variance {settings.noise_variance}")
        run = train_stage1(qf, dec, vocab, segs, [c.caption for c in clips], settings, encoder=enc, val=val)
        _log(progress, f"train-bridge: loss {run.log['train_loss'][0]:.3f} -> {run.log['train_loss'][-1]:.3f}")
        ck = run.checkpoint
    ck.parent = ids["decoder"]
    ck.extra["encoder_id"] = ids["encoder"]
    ck.extra["decoder_id"] = ids["decoder"]
    save_checkpoint(ck, path)
    return path


def instruct_triples(cfg, layout):
    split = load_split(cfg, layout)
    clips = partition(load_clips(layout["preprocess"], "encoder"), split, "train")
    teacher = make_teacher(cfg)
    first = {}
    for c in clips:
        first.setdefault(c.label, c)
    return [(teacher.lookup(first[lab]), q, rephrase_label(lab)) for lab in sorted(first) for q in INSTRUCT_QUESTIONS]


def stage_stage2(cfg, layout, force=False, progress=None) -> str | None:
    path = layout["stage2"]
    if os.path.exists(path) and not force:
        return path
    cfg = apply_ablation(cfg)
    stage_stage1(cfg, layout, progress=progress)
    s1 = load_checkpoint(layout["stage1"], "qformer")
    if s1.stage != "stage1":
        _log(progress, "instruct-tune: skipped (no stage-1 training)")
        return None
    dec, vocab = load_decoder(layout)
    qf = qformer_from_checkpoint(s1)
    triples = instruct_triples(cfg, layout)
    settings = bridge_settings(cfg, "stage2")
    _log(progress, f"instruct-tune: {len(triples)} triples, {settings.iterations} iterations")
    run = instruct_tune_stage2(qf, dec, vocab, triples, settings, s1)
    save_checkpoint(run.checkpoint, path)
    return path


def final_qformer(cfg, layout):
    want = cfg["evaluate"]["checkpoint"]
    for stage in (("stage2", "stage1") if want == "stage2" else ("stage1",)):
        if os.path.exists(layout[stage]):
            return load_checkpoint(layout[stage], "qformer")
    raise MissingInputError("no Q-former checkpoint found")


# -- generation / evaluation ------------------------------------------------

def generate(cfg, layout, partition_name=None):
    cfg = apply_ablation(cfg)
    enc = load_encoder(layout)
    dec, vocab = load_decoder(layout)
    ck = final_qformer(cfg, layout)
    qf = qformer_from_checkpoint(ck)
    split = load_split(cfg, layout)
    name = partition_name or cfg["evaluate"]["partition"]
    clips = partition(load_clips(layout["preprocess"], "decoder"), split, name)
    segs = segment_embeddings(cfg, enc, clips)
    outputs = {c.clip_id: caption_segments(qf, dec, vocab, s, cfg["evaluate"]["max_len"])
               for c, s in zip(clips, segs)}
    refs = {c.clip_id: [c.caption] for c in clips}
    return outputs, refs, ck


def stage_eval(cfg, layout, force=False, progress=None):
    path = layout["eval"]
    report_path = os.path.join(path, "report.json")
    if os.path.exists(report_path) and not force:
        return read_json(report_path)
    stage_stage2(cfg, layout, progress=progress)
    outputs, refs, ck = generate(cfg, layout)
    if not outputs:
        raise MissingInputError(f"partition {cfg['evaluate']['partition']!r} has no decoder clips")
    report = evaluate_corpus(outputs, refs, {
        "partition": cfg["evaluate"]["partition"], "checkpoint_id": ck.checkpoint_id,
        "checkpoint_stage": ck.stage, "n_items": len(outputs)})
    with atomic_dir(path) as tmp:
        write_jsonl(os.path.join(tmp, "generations.jsonl"),
                    [{"item_id": i, "candidate": outputs[i]} for i in sorted(outputs)])
        write_jsonl(os.path.join(tmp, "references.jsonl"),
                    [{"item_id": i, "references": refs[i]} for i in sorted(refs)])
        with open(os.path.join(tmp, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.dumps())
        with open(os.path.join(tmp, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(format_scores(report.to_json()["scores"]))
    s = report.to_json()["scores"]
    _log(progress, f"evaluate: BLEU-4 {s['bleu4']}, ROUGE-L {s['rouge_l']}, CIDEr {s['cider']}, "
                   f"exact {s['exact_match']}")
    return report.to_json()


def format_scores(scores) -> str:
    keys = [k for k in scores if scores[k] is not None]
    w = max(len(k) for k in keys)
    return "".join(f"{k:<{w}}  {scores[k]:10.4f}\n" for k in keys) + f"{'spice':<{w}}  {'n/a':>10}\n"


STAGE_FUNCS = {
    "data": stage_data, "preprocess": stage_preprocess, "encoder": stage_encoder, "lm": stage_lm,
    "stage1": stage_stage1, "stage2": stage_stage2, "eval": stage_eval,
}


def write_resolved(cfg, out):
    os.makedirs(out, exist_ok=True)
    tmp = os.path.join(out, ".config.resolved.json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
    os.replace(tmp, os.path.join(out, "config.resolved.json"))


def clear_stages(cfg, layout, first):
    """Delete ``first`` and every later stage directory owned by this run."""
    for s in STAGES[STAGES.index(first):]:
        if s in layout.shared or (s == "data" and cfg["data"]["source"] == "manifest"):
            continue
        if os.path.exists(layout[s]):
            shutil.rmtree(layout[s])


def run_stage(cfg, out, stage, force=False, shared=None, progress=None):
    """Run ``stage`` and whatever it depends on.  With ``force`` the named
    stage and everything downstream of it are rebuilt."""
    layout = Layout(out, shared)
    write_resolved(cfg, layout.out)
    if force:
        clear_stages(cfg, layout, stage)
    return STAGE_FUNCS[stage](cfg, layout, False, progress)


def run_pipeline(cfg, out, force=False, shared=None, progress=None):
    layout = Layout(out, shared)
    write_resolved(cfg, layout.out)
    if force:
        clear_stages(cfg, layout, "data")
    return stage_eval(cfg, layout, False, progress)
