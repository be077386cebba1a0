import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradutil import check_module
from wearcap import kernels
from wearcap.bridge.decoder import DecoderConfig, ToyDecoder, sequence_loss
from wearcap.bridge.qformer import QFormer, QFormerConfig
from wearcap.encoder import EncoderConfig, ModalityConfig, ModalityEncoder, SensorEncoder, WindowTokenizer
from wearcap.numerics import (
    Adam,
    DecoderBlock,
    Dropout,
    EncoderBlock,
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    NumericsError,
    Parameter,
    Rng,
    adam_step,
    gaussian_sample,
    grad_check,
    hash_arrays,
    log_softmax,
    softmax,
)

TOL = 1e-4
POINTS = 10


# -- softmax / adam / grad_check / gaussian ---------------------------------

def test_softmax_examples():
    assert np.allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    assert np.allclose(softmax(np.array([np.log(2.0), 0.0])), [2 / 3, 1 / 3], atol=1e-15)
    assert np.array_equal(softmax(np.array([5.0, 5.0])), softmax(np.array([0.0, 0.0])))


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=12))
def test_softmax_properties(xs):
    p = softmax(np.array(xs))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    assert np.allclose(np.exp(log_softmax(np.array(xs))), p, atol=1e-12)


def test_softmax_empty_axis():
    with pytest.raises(NumericsError):
        softmax(np.zeros((2, 0)))


def test_adam_first_step():
    p = Parameter("t", np.array([0.0]))
    p.grad[:] = 1.0
    adam_step(p, 0.1, 0.9, 0.999, 1e-8)
    assert abs(p.value[0] + 0.1) < 1e-8


def test_adam_zero_gradient_is_noop():
    p = Parameter("t", np.array([1.5, -2.0]))
    adam_step(p, 0.1)
    assert np.array_equal(p.value, [1.5, -2.0])
    assert not p.adam_m.any() and not p.adam_v.any()


def test_adam_identical_state_identical_update():
    a, b = Parameter("a", np.ones(3)), Parameter("b", np.ones(3))
    opt = Adam([a, b], lr=0.01)
    for _ in range(5):
        a.grad[:] = b.grad[:] = [0.3, -1.0, 2.0]
        opt.step()
    assert np.array_equal(a.value, b.value)


def test_adam_frozen_parameter():
    p = Parameter("t", np.ones(2), trainable=False)
    with pytest.raises(NumericsError):
        adam_step(p, 0.1)


def test_grad_check_examples():
    assert grad_check(lambda x: (float(x[0] ** 2), 2 * x), np.array([3.0])) < 1e-9
    assert grad_check(lambda x: (float(np.sin(x[0])), np.cos(x)), np.array([0.0])) < 1e-10
    err = grad_check(lambda x: (float(x[0] ** 2), np.array([5.0])), np.array([3.0]))
    assert abs(err - 1 / 6) < 1e-6 and err > TOL


def test_gaussian_sample():
    assert not gaussian_sample(Rng(0), (4, 5), 0.0).any()
    a = gaussian_sample(Rng(7), (3, 3), 1e-4)
    b = gaussian_sample(Rng(7), (3, 3), 1e-4)
    assert np.array_equal(a, b)
    v = gaussian_sample(Rng(1), (100_000,), 1e-4).var()
    assert 0.9e-4 <= v <= 1.1e-4
    with pytest.raises(NumericsError):
        gaussian_sample(Rng(0), (2,), -1.0)


def test_rng_substreams_are_independent_and_stable():
    a = Rng(5).substream("init").normal(4)
    b = Rng(5).substream("noise").normal(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, Rng(5).substream("init").normal(4))


def test_rng_reproducible_across_processes():
    code = "from wearcap.numerics import Rng; print(Rng(42).substream('noise').normal(3).tolist())"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    assert out.strip() == str(Rng(42).substream("noise").normal(3).tolist())


def test_hash_arrays_detects_change():
    p = Parameter("w", np.zeros(3))
    h = hash_arrays([p])
    p.value[1] = 1e-12
    assert hash_arrays([p]) != h


# -- kernels ------------------------------------------------------------------

def test_layernorm_kernels_agree():
    rng = np.random.default_rng(0)
    x, g, b = rng.normal(size=(7, 13)), rng.normal(size=13), rng.normal(size=13)
    fa = kernels.ln_forward_numba(x, g, b, 1e-5)
    fb = kernels.ln_forward_numpy(x, g, b, 1e-5)
    for u, v in zip(fa, fb):
        assert np.allclose(u, v, atol=1e-12)
    d = rng.normal(size=(7, 13))
    for u, v in zip(kernels.ln_backward_numba(d, fa[1], fa[2], g), kernels.ln_backward_numpy(d, fa[1], fa[2], g)):
        assert np.allclose(u, v, atol=1e-12)


def test_numpy_fallback_selected_by_env():
    code = "from wearcap import kernels; print(kernels.lcs_length is kernels.lcs_length_numpy)"
    env = dict(os.environ, WEARCAP_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True, env=env)
    assert out.stdout.strip() == "True"


# -- gradient checks ----------------------------------------------------------

def _points(seed, shape):
    rng = np.random.default_rng(seed)
    for _ in range(POINTS):
        yield rng, rng.normal(size=shape)


def test_grad_linear():
    lin = Linear("l", 5, 4, Rng(0))
    for rng, x in _points(1, (3, 5)):
        assert check_module(lin.forward, lin.backward, x, list(lin.parameters()), rng) < TOL


def test_grad_layernorm():
    ln = LayerNorm("ln", 6)
    init = np.random.default_rng(9)
    ln.gamma.value = init.normal(size=6)
    ln.beta.value = init.normal(size=6)
    for rng, x in _points(2, (2, 3, 6)):
        assert check_module(ln.forward, ln.backward, x, list(ln.parameters()), rng) < TOL


@pytest.mark.parametrize("act", ["relu", "gelu"])
def test_grad_feedforward(act):
    ff = FeedForward("ff", 5, 7, Rng(1), act)
    for rng, x in _points(3, (2, 3, 5)):
        assert check_module(ff.forward, ff.backward, x, list(ff.parameters()), rng) < TOL


@pytest.mark.parametrize("causal", [False, True])
def test_grad_self_attention(causal):
    att = MultiHeadAttention("a", 6, 2, 3, Rng(2), causal=causal)
    for rng, x in _points(4, (2, 4, 6)):
        assert check_module(att.forward, att.backward, x, list(att.parameters()), rng) < TOL


def test_grad_cross_attention():
    att = MultiHeadAttention("c", 6, 2, 3, Rng(3), d_kv=4)
    kv = np.random.default_rng(50).normal(size=(2, 3, 4))
    for rng, x in _points(5, (2, 4, 6)):
        assert check_module(lambda q: att.forward(q, kv), lambda d: att.backward(d)[0], x,
                            list(att.parameters()), rng) < TOL
    q = np.random.default_rng(51).normal(size=(2, 4, 6))
    for rng, x in _points(6, (2, 3, 4)):
        assert check_module(lambda k: att.forward(q, k), lambda d: att.backward(d)[1], x, [], rng) < TOL


def test_grad_tokenizer():
    tok = WindowTokenizer("t", 3, 4, 2, 5, Rng(4))
    for rng, x in _points(7, (2, 12, 3)):
        assert check_module(tok.forward, tok.backward, x, list(tok.parameters()), rng) < TOL


def test_grad_encoder_block():
    blk = EncoderBlock("b", 6, 2, 3, 8, Rng(5))
    for rng, x in _points(8, (2, 4, 6)):
        assert check_module(blk.forward, blk.backward, x, list(blk.parameters()), rng) < TOL


def test_grad_positional_encoded_modality_encoder():
    enc = ModalityEncoder("m", ModalityConfig(channels=2, window=4, stride=4, layers=2, d_encoder=8,
                                              ffn_hidden=12, heads=2, head_dim=4, dropout=0.0), Rng(6))
    for rng, x in _points(9, (2, 16, 2)):
        assert check_module(enc.forward, enc.backward, x, list(enc.parameters()), rng, 6) < TOL


def test_grad_fusion_and_sensor_encoder():
    mc = dict(window=4, stride=4, layers=1, d_encoder=6, ffn_hidden=8, heads=2, head_dim=3, dropout=0.0)
    cfg = EncoderConfig({"eye": ModalityConfig(channels=2, **mc), "body": ModalityConfig(channels=3, **mc)},
                        d_output=5, teacher_dim=5)
    enc = SensorEncoder(cfg, Rng(7))
    for rng, x in _points(10, (2, 8 * 5)):
        def fwd(v):
            return enc.forward({"eye": v[:, :16].reshape(2, 8, 2), "body": v[:, 16:].reshape(2, 8, 3)})

        def bwd(d):
            g = enc.backward(d)
            return np.concatenate([g["eye"].reshape(2, -1), g["body"].reshape(2, -1)], axis=1)

        assert check_module(fwd, bwd, x, list(enc.fusion.parameters()) + [enc.encoders["eye"].cls], rng) < TOL


def test_grad_decoder_block():
    blk = DecoderBlock("d", 6, 2, 3, 8, Rng(8))
    for rng, x in _points(11, (2, 5, 6)):
        assert check_module(blk.forward, blk.backward, x, list(blk.parameters()), rng) < TOL


def test_grad_qformer():
    qf = QFormer(QFormerConfig(d_in=5, d_hidden=6, queries=3, layers=2, heads=2, head_dim=3,
                               ffn_hidden=8, d_model=4), Rng(9))
    for rng, x in _points(12, (2, 5)):
        assert check_module(qf.forward, qf.backward, x, list(qf.parameters()), rng, 6) < TOL


def test_grad_decoder():
    dec = ToyDecoder(DecoderConfig(vocab_size=9, d_model=6, layers=2, heads=2, head_dim=3, ffn_hidden=8,
                                   max_len=8), Rng(10))
    for rng, x in _points(13, (2, 5, 6)):
        assert check_module(dec.forward, dec.backward, x, list(dec.parameters()), rng, 6) < TOL


def test_grad_sequence_loss():
    rng = np.random.default_rng(14)
    targets = rng.integers(0, 7, (2, 4))
    mask = np.array([[1, 1, 1, 0], [0, 1, 1, 1]], dtype=float)
    for _ in range(POINTS):
        logits = rng.normal(size=(2, 4, 7))
        f = lambda z: (float(sequence_loss(z, targets, mask)[0].sum()), sequence_loss(z, targets, mask)[1])
        assert grad_check(f, logits) < TOL


def test_frozen_parameters_accumulate_no_grad():
    lin = Linear("l", 3, 2, Rng(0)).freeze()
    lin.zero_grad()
    dx = lin.backward(np.ones((1, 2))) if lin.forward(np.ones((1, 3))) is not None else None
    assert dx.shape == (1, 3)
    assert not lin.W.grad.any() and not lin.b.grad.any()


def test_dropout_eval_identity_and_train_scaling():
    d = Dropout(0.5, Rng(0))
    x = np.ones((1000,))
    assert np.array_equal(d.eval().forward(x), x)
    y = d.train().forward(x)
    assert set(np.unique(y)) <= {0.0, 2.0}
