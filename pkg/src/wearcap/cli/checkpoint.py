"""Checkpoint directories: ``manifest.json`` plus ``tensors.bin``.

Blob layout, per tensor: u16 name length | UTF-8 name | u8 rank |
rank x u32 dims | little-endian f32 data.

Parameters are rounded to float32 when a checkpoint is taken from a live
module, so the in-memory model and anything reloaded from disk agree bit for
bit.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

FORMAT = "wearcap-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ArchitectureMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict  # name -> float64 array holding float32-representable values
    stage: str = ""
    seed: int = 0
    parent: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def checkpoint_id(self) -> str:
        return hashlib.sha256(encode_tensors(self.tensors)).hexdigest()[:16]


def encode_tensors(tensors: dict) -> bytes:
    parts = []
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        a = np.asarray(arr)
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes) -> dict:
    out, pos = {}, 0
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 4 * count > len(blob):
                raise CheckpointError("corrupt checkpoint: truncated tensor data")
            out[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).astype(np.float64).reshape(shape)
            pos += 4 * count
    except (struct.error, UnicodeDecodeError):
        raise CheckpointError("corrupt checkpoint: truncated tensor header") from None
    return out


def _manifest(ck: Checkpoint, blob: bytes) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": ck.kind,
        "stage": ck.stage,
        "seed": ck.seed,
        "parent": ck.parent,
        "checkpoint_id": hashlib.sha256(blob).hexdigest()[:16],
        "config": ck.config,
        "tensors": [{"name": n, "shape": list(np.shape(a))} for n, a in ck.tensors.items()],
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "extra": ck.extra,
    }


def save_checkpoint(ck: Checkpoint, path) -> str:
    """Write atomically (temp directory, then rename).  Returns the checkpoint id."""
    path = os.fspath(path)
    blob = encode_tensors(ck.tensors)
    man = _manifest(ck, blob)
    parent = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".ckpt-", dir=parent)
    try:
        with open(os.path.join(tmp, "tensors.bin"), "wb") as fh:
            fh.write(blob)
        with open(os.path.join(tmp, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(man, fh, indent=1)
            fh.write("\n")
        if os.path.exists(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return man["checkpoint_id"]


def load_checkpoint(path, expected_kind=None, expected_config=None) -> Checkpoint:
    path = os.fspath(path)
    try:
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
            man = json.load(fh)
        with open(os.path.join(path, "tensors.bin"), "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint at {path}: {exc.filename} missing") from None
    except json.JSONDecodeError:
        raise CheckpointError(f"corrupt checkpoint manifest at {path}") from None
    if man.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} directory")
    if man.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {man.get('version')} != supported {VERSION}")
    if len(blob) != man["blob_bytes"]:
        raise CheckpointError(f"corrupt checkpoint at {path}: tensors.bin has {len(blob)} bytes, "
                              f"manifest says {man['blob_bytes']}")
    if hashlib.sha256(blob).hexdigest() != man["blob_sha256"]:
        raise CheckpointError(f"corrupt checkpoint at {path}: tensor blob checksum mismatch")
    tensors = decode_tensors(blob)
    for spec in man["tensors"]:
        if spec["name"] not in tensors or list(tensors[spec["name"]].shape) != spec["shape"]:
            raise CheckpointError(f"corrupt checkpoint at {path}: tensor {spec['name']} disagrees with manifest")
    if expected_kind is not None and man["kind"] != expected_kind:
        raise ArchitectureMismatch(f"{path}: expected a {expected_kind} checkpoint, found {man['kind']}")
    if expected_config is not None and man["config"] != expected_config:
        raise ArchitectureMismatch(f"{path}: architecture config differs from the requested one")
    return Checkpoint(man["kind"], man["config"], tensors, man["stage"], man["seed"],
                      man["parent"], man["extra"])


def quantize(module) -> None:
    """Round every parameter value and Adam moment to float32, in place."""
    for p in module.parameters():
        for a in (p.value, p.adam_m, p.adam_v):
            a[...] = a.astype(np.float32).astype(np.float64)


def module_state(module, with_optimizer=True) -> tuple[dict, dict]:
    """Tensors and step counts for a module; rounds the live values first."""
    quantize(module)
    tensors, steps = {}, {}
    params = module.named_parameters()
    for name, p in params.items():
        tensors[name] = p.value.copy()
    if with_optimizer:
        for name, p in params.items():
            if p.step_count:
                tensors[f"opt.m/{name}"] = p.adam_m.copy()
                tensors[f"opt.v/{name}"] = p.adam_v.copy()
                steps[name] = p.step_count
    return tensors, steps


def load_module_state(module, ck: Checkpoint) -> None:
    params = module.named_parameters()
    names = {n for n in ck.tensors if not n.startswith("opt.")}
    if names != set(params):
        missing = sorted(set(params) - names)[:3]
        extra = sorted(names - set(params))[:3]
        raise ArchitectureMismatch(f"parameter sets differ (missing {missing}, unexpected {extra})")
    steps = ck.extra.get("steps", {})
    for name, p in params.items():
        v = ck.tensors[name]
        if v.shape != p.value.shape:
            raise ArchitectureMismatch(f"{name}: shape {v.shape} != {p.value.shape}")
        p.value[...] = v
        p.step_count = int(steps.get(name, 0))
        if f"opt.m/{name}" in ck.tensors:
            p.adam_m[...] = ck.tensors[f"opt.m/{name}"]
            p.adam_v[...] = ck.tensors[f"opt.v/{name}"]
        else:
            p.adam_m.fill(0.0)
            p.adam_v.fill(0.0)
        p.zero_grad()
