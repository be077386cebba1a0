"""Corpus evaluation and the JSON report format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .bleu import bleu, sentence_bleu
from .cider import cider_items
from .meteor import meteor_item
from .rouge import rouge_l_item
from .text import MetricError, tokenize_caption

SCORE_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor", "cider", "cider_raw",
              "exact_match", "spice")
ITEM_KEYS = ("item_id", "candidate", "bleu4", "rouge_l", "meteor", "cider_raw", "exact")


def _r4(x):
    return None if x is None else round(float(x), 4)


@dataclass
class EvalReport:
    """Scores on a 0-100 scale; ``cider_raw`` is CIDEr's own x10 scale and
    ``cider`` is that times 100.  ``spice`` is always null."""

    scores: dict
    per_item: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "scores": {k: _r4(self.scores.get(k)) for k in SCORE_KEYS},
            "per_item": [{k: (_r4(it[k]) if isinstance(it[k], float) else it[k]) for k in ITEM_KEYS}
                         for it in self.per_item],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, d):
        return cls(dict(d["scores"]), [dict(x) for x in d["per_item"]], dict(d["metadata"]))


def evaluate_corpus(outputs: dict, references: dict, metadata=None, beta=1.2, sigma=6.0) -> EvalReport:
    """outputs: item_id -> candidate text; references: item_id -> list of texts."""
    if set(outputs) != set(references):
        missing = sorted(set(references) - set(outputs))[:5]
        extra = sorted(set(outputs) - set(references))[:5]
        raise MetricError(f"item ids differ between outputs and references (missing {missing}, extra {extra})")
    ids = sorted(outputs)
    pairs = [(tokenize_caption(outputs[i]), [tokenize_caption(r) for r in references[i]]) for i in ids]
    b = bleu(pairs)
    rl = [rouge_l_item(c, r, beta) for c, r in pairs]
    me = [meteor_item(c, r) for c, r in pairs]
    ci = cider_items(pairs, sigma=sigma) if len(pairs) >= 2 else [0.0] * len(pairs)
    exact = [any(c == ref for ref in r) for c, r in pairs]
    n = len(pairs)
    cider_raw = math.fsum(ci) / n
    scores = {
        "bleu1": 100 * b[0], "bleu2": 100 * b[1], "bleu3": 100 * b[2], "bleu4": 100 * b[3],
        "rouge_l": 100 * math.fsum(rl) / n,
        "meteor": 100 * math.fsum(me) / n,
        "cider": 100 * cider_raw,
        "cider_raw": cider_raw,
        "exact_match": 100 * sum(exact) / n,
        "spice": None,
    }
    per_item = []
    for k, i in enumerate(ids):
        c, r = pairs[k]
        per_item.append({"item_id": i, "candidate": outputs[i], "bleu4": 100 * sentence_bleu(c, r)[3],
                         "rouge_l": 100 * rl[k], "meteor": 100 * me[k], "cider_raw": ci[k],
                         "exact": bool(exact[k])})
    meta = {"metric_set": "bleu1-4,rouge_l,meteor_lite,cider", "rouge_beta": beta, "cider_sigma": sigma}
    meta.update(metadata or {})
    return EvalReport(scores, per_item, meta)


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_candidates(path) -> dict:
    return {str(r["item_id"]): r["candidate"] for r in read_jsonl(path)}


def load_references(path) -> dict:
    out = {}
    for r in read_jsonl(path):
        refs = r["references"]
        if isinstance(refs, str):
            refs = [refs]
        out[str(r["item_id"])] = list(refs)
    return out
