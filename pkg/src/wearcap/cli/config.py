"""Run configuration: defaults, deep merge, validation."""
from __future__ import annotations

import copy
import json
import math

from ..ingest.streams import MODALITIES

DEFAULTS = {
    "seed": 0,
    "data": {
        "source": "synthetic",
        "manifest": None,
        "teacher_file": None,
        "synthetic": {
            "task": "single",
            "n_recordings": 32,
            "n_subjects": 4,
            "n_activities": 4,
            "duration_s": 16.0,
            "nan_rate": 0.01,
        },
    },
    "modalities": ["eye", "emg", "body"],
    "preprocess": {
        "rate_hz": 50.0,
        "eye_mode": "clamp",
        "encoder_window_s": 2.0,
        "encoder_stride_s": 2.0,
        "decoder_window_s": 16.0,
        "decoder_stride_s": 16.0,
    },
    "split": {"mode": "uniform", "fractions": [0.7, 0.15, 0.15], "holdout_subjects": None},
    "teacher": {"source": "synthetic", "dim": 64},
    "encoder": {
        "modalities": None,
        "window": 10,
        "stride": 10,
        "layers": 2,
        "d_encoder": 64,
        "ffn_hidden": 256,
        "heads": 4,
        "head_dim": 16,
        "dropout": 0.1,
        "d_output": 64,
    },
    "decoder": {"d_model": 128, "layers": 2, "heads": 4, "head_dim": 32, "ffn_hidden": 512, "max_len": 256},
    "qformer": {"d_hidden": 128, "queries": 8, "layers": 2, "heads": 4, "head_dim": 32, "ffn_hidden": 256},
    "temporal": {"n_segments": 8},
    "noise": {"variance": 1e-4, "in_stage2": True},
    "train": {
        "encoder": {"lr": 1e-3, "batch_size": 32, "epochs": 60, "reg_weight": 0.0,
                    "patience": 10, "min_delta": 1e-4, "early_stopping": True},
        "lm": {"lr": 3e-3, "batch_size": 16, "epochs": 30},
        "stage1": {"lr": 1e-3, "batch_size": 16, "epochs": 60,
                   "patience": 10, "min_delta": 1e-4, "early_stopping": False},
        "stage2": {"lr": 1e-4, "batch_size": 8, "iterations": 50},
    },
    "ablation": {"no_temporal": False, "no_noise": False, "no_stage1": False},
    "evaluate": {"partition": "test", "checkpoint": "stage2", "max_len": 32},
}

NULLABLE = {("data", "manifest"), ("data", "teacher_file"), ("split", "holdout_subjects"),
            ("encoder", "modalities")}


class ConfigError(ValueError):
    pass


def deep_merge(base, override, path=()):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {'.'.join(path + (k,))!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = deep_merge(base[k], v, path + (k,))
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_types(cfg, ref, path=()):
    for k, dv in ref.items():
        v = cfg[k]
        p = path + (k,)
        where = ".".join(p)
        if v is None:
            if p not in NULLABLE and dv is not None:
                raise ConfigError(f"{where} must not be null")
            continue
        if isinstance(dv, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where} must be an object")
            _check_types(v, dv, p)
        elif isinstance(dv, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{where} must be a boolean")
        elif isinstance(dv, int) and not isinstance(dv, bool):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{where} must be an integer")
        elif isinstance(dv, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{where} must be a finite number")
        elif isinstance(dv, str):
            if not isinstance(v, str):
                raise ConfigError(f"{where} must be a string")
        elif isinstance(dv, list):
            if not isinstance(v, list):
                raise ConfigError(f"{where} must be a list")


def validate(cfg: dict) -> dict:
    _check_types(cfg, DEFAULTS)
    fr = cfg["split"]["fractions"]
    if len(fr) != 3 or any(not isinstance(x, (int, float)) or x < 0 for x in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"split.fractions must be 3 non-negative numbers summing to 1, got {fr}")
    if cfg["split"]["mode"] not in ("uniform", "by_subject"):
        raise ConfigError("split.mode must be 'uniform' or 'by_subject'")
    mods = cfg["modalities"]
    if not mods or any(m not in MODALITIES for m in mods) or len(set(mods)) != len(mods):
        raise ConfigError(f"modalities must be distinct names from {MODALITIES}")
    em = cfg["encoder"]["modalities"]
    if em is not None and (not em or any(m not in mods for m in em)):
        raise ConfigError("encoder.modalities must be a non-empty subset of modalities")
    if cfg["data"]["source"] not in ("synthetic", "manifest"):
        raise ConfigError("data.source must be 'synthetic' or 'manifest'")
    if cfg["data"]["source"] == "manifest" and not cfg["data"]["manifest"]:
        raise ConfigError("data.manifest is required when data.source is 'manifest'")
    if cfg["data"]["synthetic"]["task"] not in ("single", "ordered", "crossmodal"):
        raise ConfigError("data.synthetic.task must be single, ordered or crossmodal")
    if cfg["teacher"]["source"] not in ("synthetic", "file"):
        raise ConfigError("teacher.source must be 'synthetic' or 'file'")
    if cfg["teacher"]["source"] == "file" and not cfg["data"]["teacher_file"]:
        raise ConfigError("data.teacher_file is required when teacher.source is 'file'")
    enc = cfg["encoder"]
    if enc["heads"] * enc["head_dim"] != enc["d_encoder"]:
        raise ConfigError("encoder.heads * encoder.head_dim must equal encoder.d_encoder")
    if enc["d_output"] != cfg["teacher"]["dim"]:
        raise ConfigError("encoder.d_output must equal teacher.dim")
    for sect in ("decoder", "qformer"):
        c = cfg[sect]
        width = c["d_model"] if sect == "decoder" else c["d_hidden"]
        if c["heads"] * c["head_dim"] != width:
            raise ConfigError(f"{sect}.heads * {sect}.head_dim must equal its width")
    if cfg["temporal"]["n_segments"] < 1:
        raise ConfigError("temporal.n_segments must be at least 1")
    if cfg["noise"]["variance"] < 0:
        raise ConfigError("noise.variance must be non-negative")
    pp = cfg["preprocess"]
    if min(pp["rate_hz"], pp["encoder_window_s"], pp["decoder_window_s"]) <= 0:
        raise ConfigError("rates and windows must be positive")
    if cfg["evaluate"]["partition"] not in ("train", "validation", "test"):
        raise ConfigError("evaluate.partition must be train, validation or test")
    if cfg["evaluate"]["checkpoint"] not in ("stage1", "stage2"):
        raise ConfigError("evaluate.checkpoint must be stage1 or stage2")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return cfg


def resolve(user: dict | None = None, overrides: dict | None = None) -> dict:
    cfg = deep_merge(DEFAULTS, user or {})
    if overrides:
        cfg = deep_merge(cfg, overrides)
    return validate(cfg)


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    d = cfg
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value
    return cfg


def apply_ablation(cfg: dict) -> dict:
    """Effective settings after ablation flags."""
    out = copy.deepcopy(cfg)
    if out["ablation"]["no_temporal"]:
        out["temporal"]["n_segments"] = 1
    if out["ablation"]["no_noise"]:
        out["noise"]["variance"] = 0.0
    return out


def dumps(cfg) -> str:
    return json.dumps(cfg, indent=1) + "\n"
