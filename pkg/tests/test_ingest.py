import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wearcap.ingest import (
    IngestError,
    ManifestEntry,
    Recording,
    SensorStream,
    fill_missing,
    fit_stats,
    imu_features,
    load_manifest,
    lowpass,
    parse_stream,
    preprocess,
    preprocess_recordings,
    resample,
    segment_clips,
    split_dataset,
    write_stream,
)


def stream(mod, values, rate=50.0, t0=0.0, cid="c"):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    ts = t0 + np.arange(len(values)) / rate
    return SensorStream(cid, mod, ts, values, rate)


def write_csv(path, text):
    path.write_text(text)
    return path


# -- parsing ------------------------------------------------------------------

def test_parse_three_rows(tmp_path):
    p = write_csv(tmp_path / "r1.eye.csv", "t,v0,v1\n0.0,0.5,0.5\n0.02,0.4,nan\n0.04,0.3,0.2\n")
    s = parse_stream(p)
    assert len(s) == 3 and s.modality == "eye" and s.clip_id == "r1"
    assert np.isnan(s.values[1, 1])


def test_parse_duplicate_timestamp(tmp_path):
    p = write_csv(tmp_path / "r.body.csv", "t,v0\n0.0,1\n0.0,2\n")
    with pytest.raises(IngestError, match="non-increasing timestamps"):
        parse_stream(p)


def test_parse_errors(tmp_path):
    with pytest.raises(IngestError, match="header"):
        parse_stream(write_csv(tmp_path / "a.eye.csv", "0.0,1\n"))
    with pytest.raises(IngestError):
        parse_stream(write_csv(tmp_path / "b.eye.csv", "t,v0\n0.0,abc\n"))


def test_write_parse_roundtrip(tmp_path):
    s = stream("emg", np.random.default_rng(0).normal(size=(7, 2)), rate=100.0, cid="x")
    write_stream(s, tmp_path / "x.emg.csv")
    back = parse_stream(tmp_path / "x.emg.csv")
    assert np.array_equal(back.values, s.values) and np.array_equal(back.timestamps, s.timestamps)


# -- resampling ---------------------------------------------------------------

def test_resample_ramp_exact():
    t = np.arange(201) / 100.0
    s = SensorStream("r", "body", t, t[:, None].copy())
    out = resample(s, 50.0)
    assert np.allclose(out.values[:, 0], out.timestamps, atol=1e-12)
    assert len(out) == 101


def test_resample_idempotent():
    s = stream("body", np.random.default_rng(1).normal(size=40))
    out = resample(s, 50.0)
    assert np.array_equal(out.values, s.values)


def test_resample_single_sample():
    with pytest.raises(IngestError):
        resample(SensorStream("r", "eye", np.array([0.0]), np.array([[0.5]])), 50.0)


def test_resample_propagates_missing():
    s = SensorStream("r", "eye", np.array([0.0, 0.1, 0.2]), np.array([[0.1], [np.nan], [0.3]]))
    out = resample(s, 20.0)
    assert out.values[0, 0] == 0.1 and np.isnan(out.values[1, 0]) and out.values[-1, 0] == 0.3


# -- preprocessing examples ------------------------------------------------------

def test_eye_examples():
    out = preprocess(stream("eye", [0.5, 0.97, 0.05, 0.0]))
    assert np.allclose(out.values[:, 0], [0.0, 1.0, -1.0, -1.0], atol=1e-12)
    assert out.preprocessed


def test_eye_delete_mode_interpolates():
    out = preprocess(stream("eye", [0.5, 0.99, 0.95]), eye_mode="delete")
    assert np.allclose(out.values[:, 0], [0.0, 0.5, 1.0])


def test_body_examples():
    out = preprocess(stream("body", [90.0, -180.0, 360.0]))
    assert np.allclose(out.values[:, 0], [0.5, -1.0, 1.0])


def test_imu_examples():
    out = imu_features(stream("imu_accel", [[0, 0, 1], [1, 0, 0], [0, 0, 0]]), magnitude_scale=1.0)
    assert out.values.shape == (3, 4)
    assert out.values[0, 3] == pytest.approx(math.pi / 2)
    assert out.values[1, 3] == 0.0 and out.values[2, 3] == 0.0


def test_imu_needs_three_channels():
    with pytest.raises(IngestError):
        imu_features(stream("imu_gyro", [[0, 1], [1, 0]]))


def _butter_filtfilt_gain(f, fc, fs, order=4):
    """|H|^2 of a bilinear Butterworth low-pass (forward-backward squares |H|)."""
    ratio = math.tan(math.pi * f / fs) / math.tan(math.pi * fc / fs)
    return 1.0 / (1.0 + ratio ** (2 * order))


@pytest.mark.parametrize("fs", [100.0, 200.0])
def test_emg_attenuation_at_25hz(fs):
    t = np.arange(int(20 * fs)) / fs
    x = np.sin(2 * np.pi * 25.0 * t)[:, None]
    y = lowpass(x, fs)
    mid = y[len(y) // 4: -len(y) // 4, 0]
    amp = np.abs(mid).max()
    assert amp < 0.01
    assert amp <= _butter_filtfilt_gain(25.0, 5.0, fs) * 1.05 + 1e-12


def test_emg_passband_preserved():
    fs = 100.0
    t = np.arange(2000) / fs
    y = lowpass(np.sin(2 * np.pi * 1.0 * t)[:, None], fs)
    assert abs(np.abs(y[500:1500]).max() - _butter_filtfilt_gain(1.0, 5.0, fs)) < 1e-3


def test_emg_requires_stats():
    with pytest.raises(IngestError):
        preprocess(stream("emg", np.zeros(20)))


def test_preprocess_rejects_repeat_and_irregular():
    s = preprocess(stream("body", [1.0, 2.0]))
    with pytest.raises(IngestError):
        preprocess(s)
    with pytest.raises(IngestError):
        preprocess(SensorStream("r", "body", np.array([0.0, 0.3]), np.array([[1.0], [2.0]])))


def _random_case(rng):
    mod = ["eye", "emg", "body"][rng.integers(3)]
    n, c = int(rng.integers(2, 40)), int(rng.integers(1, 4))
    if mod == "eye":
        v = rng.uniform(-0.5, 1.5, (n, c))
    elif mod == "emg":
        v = rng.normal(0, rng.uniform(0.01, 5), (n, c))
    else:
        v = rng.uniform(-400, 400, (n, c))
    mask = rng.random((n, c)) < rng.uniform(0, 0.6)
    mask[rng.integers(n), :] = False  # at least one observed value per channel
    v[mask] = np.nan
    return stream(mod, v, rate=float(rng.choice([50.0, 100.0])))


def test_preprocess_fuzz_10k():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        s = _random_case(rng)
        stats = None
        if s.modality == "emg":
            train = stream("emg", rng.normal(0, 1, (30, s.n_channels)), rate=s.rate_hz)
            stats = fit_stats([train])
        out = preprocess(s, stats)
        assert out.values.shape == s.values.shape
        assert not np.isnan(out.values).any()
        assert out.values.min() >= -1.0 and out.values.max() <= 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-2, 2)), min_size=2, max_size=30).filter(
    lambda xs: any(x is not None for x in xs)))
def test_fill_missing_property(xs):
    v = np.array([np.nan if x is None else x for x in xs])[:, None]
    out = fill_missing(v)
    assert not np.isnan(out).any()
    ok = ~np.isnan(v[:, 0])
    assert np.array_equal(out[ok, 0], v[ok, 0])
    assert out.min() >= np.nanmin(v) and out.max() <= np.nanmax(v)


def test_fill_missing_all_nan():
    with pytest.raises(IngestError):
        fill_missing(np.full((3, 1), np.nan))


# -- stats, segmentation, splits ---------------------------------------------------

def _entry(cid, subject="s0"):
    return ManifestEntry(cid, subject, {}, "open_jar", "A person is opening a jar.")


def test_stats_from_training_partition_only():
    rng = np.random.default_rng(3)
    small = stream("emg", rng.normal(0, 0.1, (200, 2)), rate=100.0, cid="a")
    big = stream("emg", rng.normal(0, 10.0, (200, 2)), rate=100.0, cid="b")
    recs = [Recording(_entry("a"), {"emg": small}), Recording(_entry("b"), {"emg": big})]
    out, stats = preprocess_recordings(recs, ["a"])
    assert stats == fit_stats([small])
    assert stats != fit_stats([small, big])
    assert np.abs(out[0].streams["emg"].values).max() == pytest.approx(1.0)
    assert np.abs(out[1].streams["emg"].values).max() == 1.0  # clamped


def _recording(seconds, rate=50.0, cid="r"):
    s = preprocess(stream("body", np.zeros(int(seconds * rate)), rate=rate, cid=cid))
    return Recording(_entry(cid), {"body": s})


def test_segment_counts():
    assert len(segment_clips([_recording(60)], 2.0, 2.0)) == 30
    assert len(segment_clips([_recording(16)], 16.0, 16.0)) == 1
    with pytest.raises(IngestError):
        segment_clips([_recording(1)], 2.0, 2.0)


def test_segment_ids_and_labels():
    rec = _recording(8)
    rec.entry.annotations = [{"start": 0.0, "end": 4.0, "label": "a", "caption": "A."},
                             {"start": 4.0, "end": 8.0, "label": "b", "caption": "B."}]
    clips = segment_clips([rec], 4.0, 4.0)
    assert [c.clip_id for c in clips] == ["r#0000", "r#0001"]
    assert [c.label for c in clips] == ["a", "b"]
    assert clips[0].streams["body"].shape == (200, 1)


def test_split_uniform_sizes_and_determinism():
    entries = [_entry(f"c{i:03d}") for i in range(100)]
    sp = split_dataset(entries, "uniform", (0.7, 0.15, 0.15), seed=4)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (70, 15, 15)
    assert split_dataset(entries, "uniform", (0.7, 0.15, 0.15), seed=4) == sp
    assert sorted(sp.train + sp.validation + sp.test) == sorted(e.clip_id for e in entries)


def test_split_by_subject_holdout():
    entries = [_entry(f"c{i:03d}", "ABCDEFGHIJ"[i % 10]) for i in range(50)]
    sp = split_dataset(entries, "by_subject", seed=1, holdout_subjects=["C", "H"])
    subj = {e.clip_id: e.subject_id for e in entries}
    assert not {subj[c] for c in sp.train} & {"C", "H"}
    assert {subj[c] for c in sp.test} == {"C", "H"}


def test_split_errors():
    entries = [_entry(f"c{i}", "AB"[i % 2]) for i in range(6)]
    with pytest.raises(IngestError):
        split_dataset(entries, "by_subject")
    with pytest.raises(IngestError):
        split_dataset(entries, "uniform", (0.7, 0.3, 0.2))


def test_manifest_roundtrip(tmp_path):
    from wearcap.cli.synthetic import make_synthetic_dataset
    path = make_synthetic_dataset(tmp_path / "d", "single", n_recordings=4, duration_s=4, seed=0)
    entries = load_manifest(path)
    assert len(entries) == 4
    for e in entries:
        for m, f in e.modality_files.items():
            assert parse_stream(f, m).modality == m
    raw = json.loads(open(path).read())
    assert not any(f.startswith("/") for r in raw for f in r["modality_files"].values())
