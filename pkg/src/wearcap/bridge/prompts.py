"""Prompt templates and mixed text/embedding token sequences."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .vocab import SENS, SLOT, Vocabulary

TEMPLATES_PATH = os.path.join(os.path.dirname(__file__), "templates.json")


class PromptError(ValueError):
    pass


def load_templates(path=TEMPLATES_PATH) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class TokenSequence:
    """Token ids where ``SLOT`` marks a sensor-embedding position.

    ``slots`` holds one vector per ``SLOT`` entry, in order, or ``None`` when
    the vectors are supplied later (batched training).
    """

    ids: np.ndarray
    slots: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.slots is not None and len(self.slots) != self.n_slots:
            raise PromptError(f"{self.n_slots} slot positions but {len(self.slots)} vectors")

    @property
    def n_slots(self) -> int:
        return int((self.ids == SLOT).sum())

    @property
    def slot_positions(self) -> np.ndarray:
        return np.flatnonzero(self.ids == SLOT)

    def __len__(self):
        return len(self.ids)


def prompt_text(template_id: str, n_slots: int, user_text: str = "", templates=None) -> str:
    """The prompt as text, sensor positions written as ``<sens>``."""
    templates = templates or load_templates()
    if template_id not in templates:
        raise PromptError(f"unknown template {template_id!r}")
    t = templates[template_id]
    if t.get("requires_user_text") and not user_text.strip():
        raise PromptError(f"template {template_id!r} needs non-empty user text")
    slots = " ".join([SENS] * n_slots)
    parts = ["[INST] <<SYS>>", t["system"], "<</SYS>>"]
    if t["pre_sensor_text"]:
        parts.append(t["pre_sensor_text"])
    parts.append(slots + t["post_sensor_text"])
    if user_text.strip():
        parts.append(user_text.strip())
    parts.append("[/INST]")
    return " ".join(parts)


def build_prompt(vocab: Vocabulary, template_id: str, sensor_tokens, user_text: str = "",
                 templates=None) -> TokenSequence:
    """Template ids with ``<bos>`` first and sensor positions marked ``SLOT``.

    ``sensor_tokens`` is an ``(n, d)`` array of embeddings or an int count.
    """
    if isinstance(sensor_tokens, (int, np.integer)):
        n, vecs = int(sensor_tokens), None
    else:
        vecs = np.asarray(sensor_tokens, dtype=np.float64)
        if vecs.ndim != 2:
            raise PromptError("sensor tokens must be an (n, d) array")
        n = len(vecs)
    ids = [vocab.bos_id] + vocab.encode(prompt_text(template_id, n, user_text, templates))
    ids = np.array(ids, dtype=np.int64)
    ids[ids == vocab.sens_id] = SLOT
    return TokenSequence(ids, vecs)
