"""Ablation and holdout studies built on the pipeline stages."""
from __future__ import annotations

import copy
import json
import os
import shutil

from ..ingest import load_manifest
from .config import ConfigError
from .pipeline import Layout, clear_stages, stage_data, stage_eval, write_resolved

VARIANTS = {
    "full": ("full model", {}),
    "no_stage1": ("w/o finetuning", {"no_stage1": True}),
    "no_temporal": ("w/o temporal embeddings", {"no_temporal": True}),
    "no_noise": ("w/o noise", {"no_noise": True}),
}
MODALITY_NAMES = {"eye": "eye", "emg": "muscle", "body": "body"}
COLUMNS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor", "cider", "exact_match")
HEADERS = {"bleu1": "BLEU-1", "bleu2": "BLEU-2", "bleu3": "BLEU-3", "bleu4": "BLEU-4",
           "rouge_l": "ROUGE-L", "meteor": "METEOR", "cider": "CIDEr", "exact_match": "Exact"}


class HoldoutError(ValueError):
    pass


def format_table(title, rows, columns=COLUMNS) -> str:
    """Aligned plain-text table; rows are dicts with 'condition' and 'scores'."""
    first = max([len("Condition")] + [len(r["condition"]) for r in rows])
    widths = [max(len(HEADERS.get(c, c)), 8) for c in columns]
    lines = [title, "  ".join([f"{'Condition':<{first}}"] + [f"{HEADERS.get(c, c):>{w}}" for c, w in zip(columns, widths)])]
    lines.append("-" * len(lines[1]))
    for r in rows:
        cells = [f"{r['scores'][c]:>{w}.2f}" for c, w in zip(columns, widths)]
        lines.append("  ".join([f"{r['condition']:<{first}}"] + cells))
    return "\n".join(lines) + "\n"


def write_table(out, name, title, rows) -> dict:
    table = {"title": title, "columns": list(COLUMNS), "rows": rows}
    os.makedirs(out, exist_ok=True)
    for ext, text in (("json", json.dumps(table, indent=1) + "\n"), ("txt", format_table(title, rows))):
        tmp = os.path.join(out, f".{name}.{ext}.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, os.path.join(out, f"{name}.{ext}"))
    return table


def _row(condition, key, report):
    return {"condition": condition, "key": key, "scores": report["scores"]}


def ablate(cfg, out, variants=("full", "no_temporal", "no_noise", "no_stage1"), force=False, progress=None) -> dict:
    """One run per variant; data, split, encoder and language model are shared."""
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variant(s): {unknown}")
    if any(cfg["ablation"].values()):
        raise ConfigError("the base config for ablate must have every ablation flag off")
    order = ["full"] + [v for v in variants if v != "full"]
    base = os.path.join(out, "shared")
    shared = {s: os.path.join(base, s) for s in ("data", "preprocess", "encoder", "lm")}
    rows = []
    for v in order:
        vcfg = copy.deepcopy(cfg)
        vcfg["ablation"].update(VARIANTS[v][1])
        if progress:
            progress(f"ablate: variant {v}")
        vout = os.path.join(out, v)
        write_resolved(vcfg, vout)
        layout = Layout(vout, shared)
        if force:
            clear_stages(vcfg, layout, "stage1")
            if v == order[0]:
                for p in shared.values():
                    _clear(p)
        rows.append(_row(VARIANTS[v][0], v, stage_eval(vcfg, layout, False, progress)))
    return write_table(out, "ablation", "Ablation", rows)


def _subjects(cfg, layout):
    return sorted({e.subject_id for e in load_manifest(stage_data(cfg, layout))})


def holdout_report(cfg, out, dimension, force=False, progress=None) -> dict:
    if dimension == "modality":
        return _modality_holdout(cfg, out, force, progress)
    if dimension == "subject":
        return _subject_holdout(cfg, out, force, progress)
    raise ConfigError(f"unknown holdout dimension {dimension!r}")


def _clear(path):
    if os.path.exists(path):
        shutil.rmtree(path)


def _modality_holdout(cfg, out, force, progress):
    mods = list(cfg["encoder"]["modalities"] or cfg["modalities"])
    if len(mods) < 2:
        raise HoldoutError("modality holdout needs at least two modalities")
    base = os.path.join(out, "shared")
    shared = {s: os.path.join(base, s) for s in ("data", "preprocess", "lm")}
    if force:
        for p in shared.values():
            _clear(p)
    conditions = [([m], f"{MODALITY_NAMES.get(m, m)} only", m) for m in mods]
    conditions.append((mods, ", ".join(MODALITY_NAMES.get(m, m) for m in mods), "combined"))
    rows = []
    for subset, name, key in conditions:
        ccfg = copy.deepcopy(cfg)
        ccfg["encoder"]["modalities"] = subset
        cout = os.path.join(out, key)
        if force:
            _clear(cout)
        if progress:
            progress(f"holdout: {name}")
        write_resolved(ccfg, cout)
        rows.append(_row(name, key, stage_eval(ccfg, Layout(cout, shared), False, progress)))
    return write_table(out, "holdout_modality", "Modality holdout", rows)


def _subject_holdout(cfg, out, force, progress):
    shared = {"data": os.path.join(out, "shared", "data")}
    if force:
        _clear(shared["data"])
    subjects = _subjects(cfg, Layout(out, shared))
    if len(subjects) < 3:
        raise HoldoutError(f"subject holdout needs at least three subjects, found {len(subjects)}")
    rows = []
    for mode, name, key in (("uniform", "seen users", "seen"), ("by_subject", "unseen users", "unseen")):
        ccfg = copy.deepcopy(cfg)
        ccfg["split"]["mode"] = mode
        cout = os.path.join(out, key)
        if force:
            _clear(cout)
        if progress:
            progress(f"holdout: {name}")
        write_resolved(ccfg, cout)
        rows.append(_row(name, key, stage_eval(ccfg, Layout(cout, shared), False, progress)))
    return write_table(out, "holdout_subject", "Subject holdout", rows)
