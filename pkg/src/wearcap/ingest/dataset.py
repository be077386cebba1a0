"""Manifests, clip segmentation and train/validation/test splits."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..numerics import Rng
from .streams import IngestError, SensorStream, fit_stats, parse_stream, preprocess, resample

SPLIT_MODES = ("uniform", "by_subject")


@dataclass
class ManifestEntry:
    clip_id: str
    subject_id: str
    modality_files: dict
    label: str
    caption: str = ""
    teacher_key: str | None = None
    annotations: list = field(default_factory=list)

    def to_json(self) -> dict:
        d = {
            "clip_id": self.clip_id,
            "subject_id": self.subject_id,
            "modality_files": dict(self.modality_files),
            "label": self.label,
            "caption": self.caption,
            "teacher_key": self.teacher_key,
        }
        if self.annotations:
            d["annotations"] = list(self.annotations)
        return d


@dataclass
class Recording:
    entry: ManifestEntry
    streams: dict  # modality -> SensorStream


@dataclass
class ClipRecord:
    clip_id: str
    subject_id: str
    start: float
    end: float
    streams: dict  # modality -> (T, C) preprocessed values
    label: str
    caption: str
    teacher_key: str | None = None
    source_id: str = ""


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    split_mode: str

    def partition_of(self, clip_id):
        for name in ("train", "validation", "test"):
            if clip_id in getattr(self, name):
                return name
        raise KeyError(clip_id)

    def to_json(self) -> dict:
        return {"split_mode": self.split_mode, "train": self.train,
                "validation": self.validation, "test": self.test}

    @classmethod
    def from_json(cls, d):
        return cls(list(d["train"]), list(d["validation"]), list(d["test"]), d["split_mode"])


def load_manifest(path) -> list[ManifestEntry]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise IngestError("manifest must be a JSON array")
    base = os.path.dirname(os.path.abspath(path))
    entries, seen = [], set()
    for i, item in enumerate(raw):
        try:
            files = {m: os.path.join(base, p) for m, p in item["modality_files"].items()}
            e = ManifestEntry(str(item["clip_id"]), str(item["subject_id"]), files,
                              str(item["label"]), str(item.get("caption") or ""),
                              item.get("teacher_key"), list(item.get("annotations") or []))
        except (KeyError, TypeError, AttributeError) as exc:
            raise IngestError(f"manifest entry {i}: missing or malformed field {exc}") from None
        if e.clip_id in seen:
            raise IngestError(f"duplicate clip_id {e.clip_id!r} in manifest")
        seen.add(e.clip_id)
        entries.append(e)
    return entries


def write_manifest(entries, path, relative_to=None):
    base = relative_to or os.path.dirname(os.path.abspath(path))
    out = []
    for e in entries:
        d = e.to_json()
        d["modality_files"] = {m: os.path.relpath(p, base) for m, p in e.modality_files.items()}
        out.append(d)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=1)


def load_recordings(entries, modalities, rate_hz) -> list[Recording]:
    """Parse and resample every configured modality of every entry."""
    recs = []
    for e in entries:
        streams = {}
        for m in modalities:
            if m not in e.modality_files:
                raise IngestError(f"{e.clip_id}: no file for modality {m!r}")
            streams[m] = resample(parse_stream(e.modality_files[m], m), rate_hz)
        recs.append(Recording(e, streams))
    return recs


def preprocess_recordings(recordings, train_ids, eye_mode="clamp"):
    """Fit normalisation on the training recordings, then preprocess all.

    Returns ``(preprocessed recordings, stats)``.
    """
    train_ids = set(train_ids)
    stats = fit_stats(s for r in recordings if r.entry.clip_id in train_ids for s in r.streams.values())
    out = []
    for r in recordings:
        out.append(Recording(r.entry, {m: preprocess(s, stats, eye_mode) for m, s in r.streams.items()}))
    return out, stats


def _label_at(entry: ManifestEntry, t: float):
    for a in entry.annotations:
        if a["start"] <= t < a["end"]:
            return a["label"], a.get("caption") or entry.caption, a.get("teacher_key")
    return entry.label, entry.caption, entry.teacher_key


def segment_clips(recordings, window_s: float, stride_s: float | None = None) -> list[ClipRecord]:
    """Cut recordings into fixed windows; incomplete tails are dropped.

    Each clip takes the label/caption active at its start time.
    """
    if window_s <= 0:
        raise IngestError("window must be positive")
    stride_s = window_s if stride_s is None else stride_s
    if stride_s <= 0:
        raise IngestError("stride must be positive")
    clips = []
    for rec in recordings:
        streams = list(rec.streams.values())
        if not streams:
            raise IngestError(f"{rec.entry.clip_id}: no streams")
        rate = streams[0].rate_hz
        if rate is None or any(s.rate_hz != rate for s in streams):
            raise IngestError(f"{rec.entry.clip_id}: streams must share one uniform rate")
        if any(not s.preprocessed for s in streams):
            raise IngestError(f"{rec.entry.clip_id}: streams must be preprocessed")
        t0 = max(s.timestamps[0] for s in streams)
        offsets = {m: int(round((t0 - s.timestamps[0]) * rate)) for m, s in rec.streams.items()}
        n_avail = min(len(s) - offsets[m] for m, s in rec.streams.items())
        win = int(round(window_s * rate))
        hop = int(round(stride_s * rate))
        if win > n_avail:
            raise IngestError(f"{rec.entry.clip_id}: window {window_s}s longer than stream")
        n_clips = (n_avail - win) // hop + 1
        for k in range(n_clips):
            start = t0 + k * hop / rate
            label, caption, tkey = _label_at(rec.entry, start - t0)
            values = {m: s.values[offsets[m] + k * hop: offsets[m] + k * hop + win]
                      for m, s in rec.streams.items()}
            clips.append(ClipRecord(f"{rec.entry.clip_id}#{k:04d}", rec.entry.subject_id, start,
                                    start + win / rate, values, label, caption, tkey,
                                    rec.entry.clip_id))
    return clips


def _counts(n, fractions):
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val


def split_dataset(entries, mode: str = "uniform", fractions=(0.7, 0.15, 0.15), seed: int = 0,
                  holdout_subjects=None) -> DatasetSplit:
    """Deterministic partition of manifest entries (or anything with
    ``clip_id``/``subject_id``).  ``by_subject`` assigns whole subjects;
    ``holdout_subjects`` pins the test subjects explicitly.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise IngestError(f"split fractions must be 3 non-negative numbers summing to 1, got {fractions}")
    if mode not in SPLIT_MODES:
        raise IngestError(f"unknown split mode {mode!r}")
    rng = Rng(seed).substream("split")
    ids = [e.clip_id for e in entries]
    if len(set(ids)) != len(ids):
        raise IngestError("duplicate clip ids")
    if mode == "uniform":
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_tr, n_va = _counts(len(ids), fractions)
        return DatasetSplit(sorted(order[:n_tr]), sorted(order[n_tr:n_tr + n_va]),
                            sorted(order[n_tr + n_va:]), mode)
    subjects = sorted({e.subject_id for e in entries})
    if len(subjects) < 3:
        raise IngestError(f"by_subject split needs at least 3 subjects, got {len(subjects)}")
    if holdout_subjects:
        missing = set(holdout_subjects) - set(subjects)
        if missing:
            raise IngestError(f"unknown holdout subjects {sorted(missing)}")
        test_s = sorted(holdout_subjects)
        rest = [s for s in subjects if s not in set(test_s)]
        rest = [rest[i] for i in rng.permutation(len(rest))]
        val_frac = fractions[1] / max(fractions[0] + fractions[1], 1e-12)
        n_va = max(1, int(round(val_frac * len(rest)))) if fractions[1] > 0 else 0
        n_va = min(n_va, len(rest) - 1)
        val_s, train_s = rest[:n_va], rest[n_va:]
    else:
        order = [subjects[i] for i in rng.permutation(len(subjects))]
        n = len(order)
        n_te = max(1, int(round(fractions[2] * n))) if fractions[2] > 0 else 0
        n_va = max(1, int(round(fractions[1] * n))) if fractions[1] > 0 else 0
        if n - n_te - n_va < 1:
            raise IngestError(f"{n} subjects cannot fill partitions {fractions}")
        n_tr = n - n_te - n_va
        train_s, val_s, test_s = order[:n_tr], order[n_tr:n_tr + n_va], order[n_tr + n_va:]
    part = {}
    for s in train_s:
        part[s] = "train"
    for s in val_s:
        part[s] = "validation"
    for s in test_s:
        part[s] = "test"
    buckets = {"train": [], "validation": [], "test": []}
    for e in entries:
        buckets[part[e.subject_id]].append(e.clip_id)
    return DatasetSplit(sorted(buckets["train"]), sorted(buckets["validation"]),
                        sorted(buckets["test"]), mode)
