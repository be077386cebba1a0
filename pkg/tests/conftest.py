import numpy as np
import pytest

from wearcap.cli.synthetic import make_synthetic_dataset
from wearcap.ingest import load_manifest, load_recordings, preprocess_recordings, segment_clips

MODS = ("eye", "emg", "body")


def synthetic_clips(root, task="single", n_recordings=8, duration_s=4.0, window_s=2.0, seed=0, **kw):
    path = make_synthetic_dataset(root, task, n_recordings=n_recordings, duration_s=duration_s, seed=seed, **kw)
    entries = load_manifest(path)
    recs = load_recordings(entries, MODS, 50.0)
    recs, _ = preprocess_recordings(recs, [e.clip_id for e in entries])
    return segment_clips(recs, window_s, window_s)


@pytest.fixture(scope="session")
def small_clips(tmp_path_factory):
    return synthetic_clips(tmp_path_factory.mktemp("small"))


def tiny_modality(**kw):
    base = dict(window=10, stride=10, layers=1, d_encoder=16, ffn_hidden=32, heads=2, head_dim=8, dropout=0.1)
    base.update(kw)
    return base


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
