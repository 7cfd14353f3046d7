import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maac.config import TINY
from maac.encoder import KeywordEncoder, bce_loss, calibrate_batchnorm, topk_keywords
from maac.numerics import Rng, Tensor, grad_check, no_grad, ops

# two channels per block: the gradient-check backbone
GRAD_CFG = TINY.with_overrides(n_mels=8, channels="2,2,2,2,2,2", pools="2x2,2x1,1x1,1x1,1x1,1x1",
                               head_dim=4, n_keywords=5, c1=4, top_k=2)


def small_input(seed, batch=2, frames=8, mels=8):
    return np.random.default_rng(seed).normal(size=(batch, frames, mels))


def encoder_bce_objective(seed):
    enc = KeywordEncoder(GRAD_CFG, seed=seed)
    x = small_input(seed)
    y = np.random.default_rng(seed + 100).integers(0, 2, size=(2, GRAD_CFG.n_keywords))
    enc.train()

    def f():
        out = enc(x)
        return bce_loss(y, out.y_hat)

    return f, enc.keyword_parameters()


@pytest.mark.parametrize("seed", range(5))
def test_encoder_bce_gradients(seed):
    f, params = encoder_bce_objective(seed)
    assert grad_check(f, params, max_coords=4, rng=Rng(seed)) <= 1e-4


def test_zero_input_constant_maps_per_channel():
    enc = KeywordEncoder(GRAD_CFG, seed=0).eval()
    for conv in enc._convs:
        conv.weight.data[...] = 0.0
        conv.bias.data[...] = np.linspace(-1, 1, conv.bias.shape[0])
    with no_grad():
        maps = enc.backbone_forward(np.zeros((1, 8, 8)))
    for m in maps:
        flat = m.data.reshape(m.shape[0], m.shape[1], -1)
        assert np.all(flat == flat[..., :1])


def test_batch_rows_are_independent_in_eval():
    enc = KeywordEncoder(GRAD_CFG, seed=3).eval()
    x = small_input(3, batch=4)
    with no_grad():
        both = enc(x).y_hat.data
        single = np.concatenate([enc(x[i:i + 1]).y_hat.data for i in range(4)])
    np.testing.assert_allclose(both, single, rtol=0, atol=1e-14)


def test_fixed_seed_bit_identical():
    x = small_input(1)
    with no_grad():
        a = KeywordEncoder(GRAD_CFG, seed=9).eval()(x)
        b = KeywordEncoder(GRAD_CFG, seed=9).eval()(x)
    assert a.y_hat.data.tobytes() == b.y_hat.data.tobytes()
    assert a.X.data.tobytes() == b.X.data.tobytes()


def test_shape_mismatch_errors():
    enc = KeywordEncoder(GRAD_CFG, seed=0)
    with pytest.raises(ValueError):
        enc.backbone_forward(np.zeros((1, 8, 7)))
    with pytest.raises(ValueError):
        enc.hierarchy_heads([Tensor(np.zeros((1, 2, 2, 2)))] * 3)


def test_hierarchy_heads_on_constant_maps():
    enc = KeywordEncoder(GRAD_CFG, seed=0)
    chans = GRAD_CFG.channel_list()
    vals = [np.arange(1, c + 1, dtype=float) * (i + 1) for i, c in enumerate(chans)]
    maps = [Tensor(np.broadcast_to(v[None, :, None, None], (1, len(v), 3, 2)).copy()) for v in vals]
    f1, f2, f3 = enc.hierarchy_heads(maps)
    for f, head, tap in zip((f1, f2, f3), (enc.head1, enc.head2, enc.head3), enc.taps):
        expected = head.weight.data @ vals[tap] + head.bias.data
        np.testing.assert_allclose(f.data[0], expected, rtol=1e-14)
    cfg = GRAD_CFG.with_overrides(head_dim=2)
    enc = KeywordEncoder(cfg, seed=0)
    for head in (enc.head1, enc.head2, enc.head3):
        head.weight.data[...] = np.eye(2)
        head.bias.data[...] = 0.0
    f1, _, _ = enc.hierarchy_heads(maps)
    np.testing.assert_allclose(f1.data[0], vals[enc.taps[0]])


def test_predict_keywords_examples():
    enc = KeywordEncoder(GRAD_CFG.with_overrides(n_keywords=2, head_dim=1), seed=0)
    enc.classifier.weight.data[...] = 0.0
    enc.classifier.bias.data[...] = 0.0
    f = Tensor(np.ones((1, 1)))
    np.testing.assert_array_equal(enc.predict_keywords(f, f, f).data, [[0.5, 0.5]])
    enc.classifier.bias.data[...] = [math.log(3), -math.log(3)]
    np.testing.assert_allclose(enc.predict_keywords(f, f, f).data, [[0.75, 0.25]], rtol=1e-15)


def test_bce_examples():
    assert bce_loss([1.0], Tensor([0.5])).item() == pytest.approx(math.log(2), abs=1e-15)
    assert bce_loss([0.0], Tensor([0.5])).item() == pytest.approx(math.log(2), abs=1e-15)
    y = np.array([1.0, 0.0, 1.0])
    assert 0.0 <= bce_loss(y, Tensor(y)).item() <= 3 * 1e-6
    with pytest.raises(ValueError):
        bce_loss([1.5], Tensor([0.5]))
    with pytest.raises(ValueError):
        bce_loss([1.0, 0.0], Tensor([0.5]))


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6), st.integers(0, 100))
@settings(max_examples=100, deadline=None)
def test_bce_nonnegative(y, seed):
    y = np.array(y)
    p = np.random.default_rng(seed).uniform(0.01, 0.99, size=y.shape)
    assert bce_loss(y, Tensor(p)).item() >= 0.0


def test_topk_examples():
    assert topk_keywords(np.array([0.9, 0.1, 0.8, 0.7, 0.2]), 3).tolist() == [0, 2, 3]
    assert topk_keywords(np.full(4, 0.3), 2).tolist() == [0, 1]
    assert sorted(topk_keywords(np.random.default_rng(0).random(6), 6).tolist()) == list(range(6))
    with pytest.raises(ValueError):
        topk_keywords(np.ones(3), 4)


@given(st.lists(st.integers(-5000, 5000), min_size=3, max_size=10, unique=True))
@settings(max_examples=100, deadline=None)
def test_topk_invariant_under_monotone_transform(v):
    # values on a 1e-3 grid so the transform stays strictly monotone in floating point
    y = np.array(v) / 1000.0
    assert topk_keywords(y, 3).tolist() == topk_keywords(np.exp(2 * y) + 1, 3).tolist()


def test_calibrated_batchnorm_matches_batch_statistics():
    enc = KeywordEncoder(GRAD_CFG, seed=4)
    x = small_input(4, batch=6)
    calibrate_batchnorm(enc, [x])
    with no_grad():
        h = Tensor(x[:, None])
        h = enc._convs[0](h).data
    np.testing.assert_allclose(enc._norms[0].running_mean, h.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(enc._norms[0].running_var, h.var(axis=(0, 2, 3)), rtol=1e-10)
