"""Sensor stream parsing, resampling and per-modality preprocessing."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import butter, filtfilt

MODALITIES = ("eye", "emg", "body", "imu_accel", "imu_gyro", "imu_orient", "watch_accel")
IMU_MODALITIES = ("imu_accel", "imu_gyro", "imu_orient", "watch_accel")

EYE_LOW, EYE_HIGH = 0.05, 0.95
EMG_CUTOFF_HZ = 5.0
EMG_ORDER = 4
BODY_RANGE_DEG = 180.0
DEGENERATE_NORM = 1e-9
GRID_SNAP_S = 1e-9


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class SensorStream:
    clip_id: str
    modality: str
    timestamps: np.ndarray
    values: np.ndarray
    rate_hz: float | None = None
    preprocessed: bool = False

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise IngestError(f"unknown modality {self.modality!r}")
        if self.values.ndim != 2 or len(self.values) != len(self.timestamps):
            raise IngestError("values must be a (T, channels) array aligned with timestamps")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise IngestError("non-increasing timestamps")

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return len(self.timestamps)


def parse_stream(path, modality: str | None = None) -> SensorStream:
    """Read a ``<clip_id>.<modality>.csv`` stream file."""
    path = os.fspath(path)
    base = os.path.basename(path)
    parts = base.split(".")
    if len(parts) >= 3 and parts[-1] == "csv":
        clip_id, file_mod = ".".join(parts[:-2]), parts[-2]
    else:
        clip_id, file_mod = base, None
    modality = modality or file_mod
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t" or len(header) < 2:
            raise IngestError(f"{path}: missing header 't,v0,...'")
        expected = ["t"] + [f"v{k}" for k in range(len(header) - 1)]
        if header != expected:
            raise IngestError(f"{path}: malformed header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for cell in row:
                if cell == "nan":
                    vals.append(np.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
                if not np.isfinite(v):
                    raise IngestError(f"{path}:{lineno}: non-finite cell {cell!r}")
                vals.append(v)
            if np.isnan(vals[0]):
                raise IngestError(f"{path}:{lineno}: missing timestamp")
            rows.append(vals)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    t = data[:, 0]
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise IngestError(f"{path}: non-increasing timestamps")
    return SensorStream(clip_id, modality, t, data[:, 1:])


def write_stream(stream: SensorStream, path) -> None:
    k = stream.n_channels
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["t"] + [f"v{i}" for i in range(k)]) + "\n")
        for t, row in zip(stream.timestamps, stream.values):
            cells = [repr(float(t))] + ["nan" if np.isnan(v) else repr(float(v)) for v in row]
            fh.write(",".join(cells) + "\n")


def resample(stream: SensorStream, target_hz: float) -> SensorStream:
    """Linear interpolation onto a uniform grid starting at the first timestamp.

    A grid point between two samples is missing if either neighbour is.
    """
    if target_hz <= 0:
        raise IngestError("target rate must be positive")
    ts, vs = stream.timestamps, stream.values
    if len(ts) < 2:
        raise IngestError("resampling needs at least 2 samples")
    n = int(np.floor((ts[-1] - ts[0]) * target_hz + 1e-6)) + 1
    grid = ts[0] + np.arange(n) / target_hz
    idx = np.clip(np.searchsorted(ts, grid, side="right") - 1, 0, len(ts) - 2)
    t0, t1 = ts[idx], ts[idx + 1]
    w = ((grid - t0) / (t1 - t0))[:, None]
    v0, v1 = vs[idx], vs[idx + 1]
    with np.errstate(invalid="ignore"):
        out = v0 * (1.0 - w) + v1 * w
    at0 = (np.abs(grid - t0) < GRID_SNAP_S)[:, None]
    at1 = (np.abs(grid - t1) < GRID_SNAP_S)[:, None]
    out = np.where(at0, v0, np.where(at1, v1, out))
    return replace(stream, timestamps=grid, values=out, rate_hz=float(target_hz))


def fill_missing(values: np.ndarray) -> np.ndarray:
    """Per-channel linear interpolation over NaNs, constant at the edges."""
    out = values.copy()
    idx = np.arange(len(values))
    for c in range(values.shape[1]):
        col = values[:, c]
        ok = ~np.isnan(col)
        if not ok.any():
            raise IngestError(f"channel {c} is entirely missing")
        if not ok.all():
            out[:, c] = np.interp(idx, idx[ok], col[ok])
    return out


def lowpass(values: np.ndarray, rate_hz: float, cutoff_hz=EMG_CUTOFF_HZ, order=EMG_ORDER) -> np.ndarray:
    """Zero-phase Butterworth low-pass (forward-backward)."""
    b, a = butter(order, cutoff_hz, btype="low", fs=rate_hz)
    padlen = min(3 * max(len(a), len(b)), len(values) - 1)
    return filtfilt(b, a, values, axis=0, padlen=padlen)


def fit_stats(streams) -> dict:
    """Normalisation scales from (training) streams, keyed modality -> channel -> scale.

    EMG: per-channel max |value| after low-pass.  IMU: dataset-average row
    magnitude under key ``"magnitude"``.
    """
    emg: dict[int, float] = {}
    imu_sum: dict[str, list] = {}
    for s in streams:
        if s.modality == "emg":
            _require_uniform(s)
            filt = lowpass(fill_missing(s.values), s.rate_hz)
            peak = np.abs(filt).max(axis=0)
            for c, v in enumerate(peak):
                emg[c] = max(emg.get(c, 0.0), float(v))
        elif s.modality in IMU_MODALITIES:
            mags = np.linalg.norm(fill_missing(s.values), axis=1)
            acc = imu_sum.setdefault(s.modality, [0.0, 0])
            acc[0] += float(mags.sum())
            acc[1] += len(mags)
    stats: dict[str, dict[str, float]] = {}
    if emg:
        stats["emg"] = {str(c): v for c, v in sorted(emg.items())}
    for mod, (total, count) in sorted(imu_sum.items()):
        stats[mod] = {"magnitude": total / count}
    return stats


def _require_uniform(stream):
    if stream.rate_hz is None:
        raise IngestError(f"{stream.clip_id}/{stream.modality}: stream is irregular; resample first")


def preprocess(stream: SensorStream, stats: dict | None = None, eye_mode: str = "clamp") -> SensorStream:
    """Per-modality cleaning and normalisation.

    eye   clamp (or delete, ``eye_mode="delete"``) outside [0.05, 0.95],
          interpolate gaps, map [0.05, 0.95] -> [-1, 1]
    emg   fill gaps, 4th-order zero-phase low-pass at 5 Hz, divide by the
          per-channel training max from ``stats``, clamp
    body  fill gaps, degrees / 180, clamp
    IMU   see :func:`imu_features`
    """
    if stream.preprocessed:
        raise IngestError(f"{stream.clip_id}/{stream.modality}: already preprocessed")
    _require_uniform(stream)
    mod = stream.modality
    v = stream.values
    if mod == "eye":
        if eye_mode == "delete":
            with np.errstate(invalid="ignore"):
                v = np.where((v < EYE_LOW) | (v > EYE_HIGH), np.nan, v)
        elif eye_mode == "clamp":
            v = np.clip(v, EYE_LOW, EYE_HIGH)
        else:
            raise IngestError(f"unknown eye_mode {eye_mode!r}")
        v = fill_missing(v)
        out = (v - EYE_LOW) / (EYE_HIGH - EYE_LOW) * 2.0 - 1.0
    elif mod == "emg":
        if not stats or "emg" not in stats:
            raise IngestError("EMG normalisation needs fitted stats (see fit_stats)")
        scale = np.array([stats["emg"][str(c)] for c in range(v.shape[1])])
        filt = lowpass(fill_missing(v), stream.rate_hz)
        out = filt / np.where(scale > 0, scale, 1.0)
    elif mod == "body":
        out = fill_missing(v) / BODY_RANGE_DEG
    elif mod in IMU_MODALITIES:
        scale = stats.get(mod, {}).get("magnitude") if stats else None
        return imu_features(stream, scale)
    else:  # pragma: no cover - guarded by SensorStream
        raise IngestError(f"unknown modality {mod!r}")
    out = np.clip(out, -1.0, 1.0)
    return replace(stream, values=out, preprocessed=True)


def orientation_feature(xyz: np.ndarray) -> np.ndarray:
    """arcsin(z / |v|) per row; rows with |v| < 1e-9 give 0."""
    norm = np.linalg.norm(xyz, axis=1)
    ok = norm >= DEGENERATE_NORM
    ratio = np.zeros(len(xyz))
    ratio[ok] = xyz[ok, 2] / norm[ok]
    return np.arcsin(np.clip(ratio, -1.0, 1.0))


def imu_features(stream: SensorStream, magnitude_scale: float | None = None) -> SensorStream:
    """Scale rows to unit average magnitude and append the orientation angle.

    ``magnitude_scale`` is the dataset-average row magnitude (from the training
    partition); when omitted it is taken from this stream alone.
    """
    if stream.n_channels != 3:
        raise IngestError(f"IMU features need 3 channels, got {stream.n_channels}")
    xyz = fill_missing(stream.values)
    if magnitude_scale is None:
        magnitude_scale = float(np.linalg.norm(xyz, axis=1).mean())
    scaled = xyz / magnitude_scale if magnitude_scale > DEGENERATE_NORM else xyz
    out = np.concatenate([scaled, orientation_feature(scaled)[:, None]], axis=1)
    return replace(stream, values=out, preprocessed=True)
