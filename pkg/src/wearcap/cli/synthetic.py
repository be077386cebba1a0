"""Synthetic wearable recordings with per-activity motifs.

Three task layouts:

single      each recording shows one activity on every modality
ordered     first half one activity, second half another; caption names both in order
crossmodal  each modality carries one bit; the activity is the combination,
            so no single modality determines the caption

Raw files follow the stream CSV contract in sensor units (eye gaze in [0, 1]
with outliers and gaps, EMG in arbitrary units with 40 Hz interference,
joint angles in degrees, IMU in m/s^2).
"""
from __future__ import annotations

import itertools
import os

import numpy as np

from ..bridge.captions import ordered_caption, rephrase_label
from ..ingest import ManifestEntry, SensorStream, write_manifest, write_stream
from ..numerics import Rng

ACTIVITIES = ("slice_cucumber", "peel_potato", "open_jar", "wipe_table",
              "pour_water", "stir_pot", "wash_dishes", "cut_bread")
CHANNELS = {"eye": 2, "emg": 4, "body": 6, "imu_accel": 3, "imu_gyro": 3,
            "imu_orient": 3, "watch_accel": 3}
RAW_RATE = {"eye": 60.0, "emg": 100.0, "body": 60.0, "imu_accel": 100.0,
            "imu_gyro": 100.0, "imu_orient": 100.0, "watch_accel": 100.0}
TASKS = ("single", "ordered", "crossmodal")


def _motif(seed, modality, code):
    r = Rng(seed).substream(f"motif/{modality}/{code}")
    c = CHANNELS[modality]
    freq = 0.4 + 0.35 * (code % 6) + r.uniform((), 0.0, 0.1)
    return {
        "freq": float(freq),
        "phase": r.uniform((c,), 0.0, 2 * np.pi),
        "offset": r.uniform((c,), -1.0, 1.0),
    }


def _unit_signal(motif, t):
    return 0.45 * motif["offset"][None, :] + 0.4 * np.sin(2 * np.pi * motif["freq"] * t[:, None] + motif["phase"][None, :])


def _to_raw(modality, u, t, r: Rng, nan_rate):
    if modality == "eye":
        v = 0.5 + 0.45 * u + r.normal(u.shape, 0.01)
        spikes = r.uniform(u.shape) < 0.01
        v = np.where(spikes, np.where(r.uniform(u.shape) < 0.5, -0.2, 1.3), v)
        if nan_rate > 0:
            gaps = r.uniform(u.shape) < nan_rate
            v = np.where(gaps, np.nan, v)
        return v
    if modality == "emg":
        hum = 0.3 * np.sin(2 * np.pi * 40.0 * t)[:, None]
        return 200.0 * (u + hum + r.normal(u.shape, 0.05))
    if modality == "body":
        return 150.0 * u + r.normal(u.shape, 1.0)
    return 9.81 * (u + np.array([0.0, 0.0, 1.0])) + r.normal(u.shape, 0.05)


def _timestamps(rate, duration, r: Rng):
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    jitter = r.uniform((n,), -0.1, 0.1) / rate
    jitter[0] = 0.0
    jitter[-1] = 0.0
    return t + jitter


def _plan(task, n_recordings, activities, modalities):
    """Per recording: list of (start_frac, end_frac, codes per modality, label)."""
    plans = []
    if task == "single":
        for i in range(n_recordings):
            a = i % len(activities)
            plans.append(([(0.0, 1.0, {m: a for m in modalities}, activities[a])], rephrase_label(activities[a])))
    elif task == "ordered":
        pairs = list(itertools.permutations(range(len(activities)), 2))
        for i in range(n_recordings):
            a, b = pairs[i % len(pairs)]
            segs = [(0.0, 0.5, {m: a for m in modalities}, activities[a]),
                    (0.5, 1.0, {m: b for m in modalities}, activities[b])]
            plans.append((segs, ordered_caption(activities[a], activities[b])))
    elif task == "crossmodal":
        n_cls = 2 ** len(modalities)
        if len(activities) < n_cls:
            raise ValueError(f"crossmodal task with {len(modalities)} modalities needs {n_cls} activities")
        for i in range(n_recordings):
            k = i % n_cls
            codes = {m: (k >> j) & 1 for j, m in enumerate(modalities)}
            plans.append(([(0.0, 1.0, codes, activities[k])], rephrase_label(activities[k])))
    else:
        raise ValueError(f"unknown synthetic task {task!r}")
    return plans


def make_synthetic_dataset(out_dir, task="single", n_recordings=32, n_subjects=4, duration_s=16.0,
                           n_activities=4, modalities=("eye", "emg", "body"), seed=0,
                           nan_rate=0.01) -> str:
    """Write raw stream files plus ``manifest.json`` into ``out_dir``; returns the manifest path."""
    modalities = tuple(modalities)
    if task == "crossmodal":
        n_activities = max(n_activities, 2 ** len(modalities))
    activities = ACTIVITIES[:n_activities]
    if len(activities) < n_activities:
        raise ValueError(f"at most {len(ACTIVITIES)} synthetic activities")
    os.makedirs(out_dir, exist_ok=True)
    root = Rng(seed)
    entries = []
    for i, (segs, caption) in enumerate(_plan(task, n_recordings, activities, modalities)):
        subject = f"S{(i // max(1, len(activities))) % n_subjects:02d}"
        rid = f"rec{i:04d}"
        gain = 1.0 + 0.1 * Rng(seed).substream(f"subject/{subject}").normal(())
        files = {}
        for m in modalities:
            r = root.substream(f"rec/{rid}/{m}")
            t = _timestamps(RAW_RATE[m], duration_s, r)
            u = np.zeros((len(t), CHANNELS[m]))
            for f0, f1, codes, _ in segs:
                sel = (t >= f0 * duration_s) & (t < f1 * duration_s) if f1 < 1.0 else (t >= f0 * duration_s)
                u[sel] = _unit_signal(_motif(seed, m, codes[m]), t[sel])
            u = np.clip(u * gain, -0.95, 0.95)
            raw = _to_raw(m, u, t, r, nan_rate)
            path = os.path.join(out_dir, f"{rid}.{m}.csv")
            write_stream(SensorStream(rid, m, t, raw), path)
            files[m] = path
        ann = []
        if len(segs) > 1:
            ann = [{"start": f0 * duration_s, "end": f1 * duration_s, "label": lab}
                   for f0, f1, _, lab in segs]
        entries.append(ManifestEntry(rid, subject, files, segs[0][3] if len(segs) == 1 else
                                     "+".join(s[3] for s in segs), caption, rid, ann))
    path = os.path.join(out_dir, "manifest.json")
    write_manifest(entries, path)
    return path
