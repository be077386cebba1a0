"""Teacher embeddings: synthetic label vectors and the S2TE file format.

Binary layout (little-endian)::

    b"S2TE" | u32 version=1 | u32 dim | records...
    record = u16 key_len | key (UTF-8) | dim x f32
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"S2TE"
VERSION = 1


class TeacherError(ValueError):
    pass


def synth_teacher(label: str, seed: int, dim: int) -> np.ndarray:
    """Unit-norm Gaussian direction, a pure function of (label, seed, dim)."""
    if not label:
        raise TeacherError("label must be non-empty")
    if dim < 2:
        raise TeacherError("teacher dim must be at least 2")
    digest = hashlib.sha256(f"{int(seed)}\x00{label}".encode()).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
    v = gen.standard_normal(dim)
    return v / np.linalg.norm(v)


def write_teacher_file(path, embeddings: dict) -> None:
    dims = {len(v) for v in embeddings.values()}
    if len(dims) != 1:
        raise TeacherError("all embeddings must share one dimension")
    dim = dims.pop()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, dim))
        for key in sorted(embeddings):
            kb = key.encode("utf-8")
            fh.write(struct.pack("<H", len(kb)) + kb)
            fh.write(np.asarray(embeddings[key], dtype="<f4").tobytes())


def read_teacher_file(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise TeacherError(f"{path}: bad magic")
    if len(data) < 12:
        raise TeacherError(f"{path}: truncated header")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise TeacherError(f"{path}: unsupported version {version}")
    out, pos = {}, 12
    while pos < len(data):
        if pos + 2 > len(data):
            raise TeacherError(f"{path}: truncated record")
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        end = pos + klen + 4 * dim
        if end > len(data):
            raise TeacherError(f"{path}: truncated record")
        key = data[pos:pos + klen].decode("utf-8")
        out[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos + klen).astype(np.float64)
        pos = end
    return out


def read_teacher_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    emb = raw.get("embeddings", raw) if isinstance(raw, dict) else None
    if not isinstance(emb, dict):
        raise TeacherError(f"{path}: expected {{key: [floats]}} or {{'embeddings': ...}}")
    out = {k: np.asarray(v, dtype=np.float64) for k, v in emb.items()}
    if "dim" in raw and any(len(v) != raw["dim"] for v in out.values()):
        raise TeacherError(f"{path}: embedding length differs from declared dim")
    return out


class TeacherProvider:
    """Maps clips to teacher vectors, from a file or synthesised from labels."""

    def __init__(self, source: str, dim: int, seed: int = 0, table: dict | None = None):
        if source not in ("file", "synthetic"):
            raise TeacherError(f"unknown teacher source {source!r}")
        self.source, self.dim, self.seed = source, dim, seed
        self.table = table or {}
        for k, v in self.table.items():
            if len(v) != dim:
                raise TeacherError(f"embedding {k!r} has length {len(v)}, expected {dim}")

    @classmethod
    def synthetic(cls, dim, seed=0):
        return cls("synthetic", dim, seed)

    @classmethod
    def from_file(cls, path):
        table = read_teacher_json(path) if str(path).endswith(".json") else read_teacher_file(path)
        if not table:
            raise TeacherError(f"{path}: no embeddings")
        dim = len(next(iter(table.values())))
        return cls("file", dim, table=table)

    def for_label(self, label):
        return synth_teacher(label, self.seed, self.dim)

    def lookup(self, clip) -> np.ndarray:
        if self.source == "synthetic":
            return self.for_label(clip.label)
        for key in (clip.clip_id, clip.teacher_key):
            if key is not None and key in self.table:
                return self.table[key]
        raise TeacherError(f"no teacher embedding for clip {clip.clip_id!r} (key {clip.teacher_key!r})")
