import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsefuse.errors import ConfigurationError, DegenerateInputError
from sparsefuse.partial_encoder import (
    DenseEncoder, MaskedFeature, PartialConv2d, SparseEncoder, SparseEncoderConfig, encode,
    nn_fill, partial_conv2d,
)
from sparsefuse.sparsifier import SparseDepth, sample_mask, sparsify
from sparsefuse.tensor_core import conv2d

from oracles import central_diff, partial_conv_loop, rel_err

TOY = SparseEncoderConfig((4, 8, 16, 32, 64), fill_radius=2)


def _layer(c_in, c_out, k, stride, seed):
    rng = np.random.default_rng(seed)
    layer = PartialConv2d(c_in, c_out, k, stride, rng=rng)
    layer.conv.params["bias"][:] = rng.normal(size=c_out)
    return layer


def test_all_valid_mask_is_conv2d():
    rng = np.random.default_rng(0)
    layer = _layer(3, 2, 3, 1, 0)
    x = rng.normal(size=(3, 6, 5))
    y = partial_conv2d(MaskedFeature(x, np.ones((6, 5), dtype=bool)), layer)
    ref = conv2d(x, layer.conv.params["weight"], layer.conv.params["bias"])
    assert np.array_equal(y.features, ref)
    assert y.mask.all()


def test_ratio_scaling_four_valid():
    layer = PartialConv2d(1, 1, 3, 1)
    layer.conv.params["weight"][:] = 1.0
    mask = np.zeros((3, 3), dtype=bool)
    mask[0, 0] = mask[0, 2] = mask[2, 0] = mask[2, 2] = True
    y = layer.forward(MaskedFeature(np.ones((1, 3, 3)), mask))
    assert y.features[0, 1, 1] == 4 * (9 / 4) == 9.0


@settings(max_examples=60, deadline=None)
@given(c_in=st.integers(1, 4), c_out=st.integers(1, 4), h=st.integers(1, 8), w=st.integers(1, 8),
       k=st.sampled_from([1, 3, 5]), stride=st.sampled_from([1, 2]), density=st.floats(0, 1),
       seed=st.integers(0, 2**20))
def test_matches_masked_window_oracle(c_in, c_out, h, w, k, stride, density, seed):
    rng = np.random.default_rng(seed)
    layer = _layer(c_in, c_out, k, stride, seed)
    x = rng.normal(size=(c_in, h, w))
    mask = rng.random((h, w)) < density
    y = layer.forward(MaskedFeature(x, mask))
    want, want_mask = partial_conv_loop(x, mask, layer.conv.params["weight"], layer.conv.params["bias"], stride)
    np.testing.assert_array_equal(y.mask, want_mask)
    np.testing.assert_allclose(y.features, want, atol=1e-9)
    assert np.all(y.features[:, ~y.mask] == 0.0)


def test_empty_window_rule():
    layer = _layer(1, 2, 3, 1, 1)
    mask = np.zeros((5, 5), dtype=bool)
    mask[0, 0] = True
    y = layer.forward(MaskedFeature(np.ones((1, 5, 5)), mask))
    assert y.mask[:2, :2].all() and y.mask.sum() == 4
    assert np.all(y.features[:, ~y.mask] == 0.0)


def test_partial_conv_gradient_with_fixed_mask():
    rng = np.random.default_rng(2)
    layer = _layer(2, 3, 3, 2, 2)
    x = rng.normal(size=(2, 6, 7))
    mask = rng.random((6, 7)) < 0.4
    r = rng.normal(size=layer.forward(MaskedFeature(x, mask)).features.shape)

    def loss():
        return float((r * layer.forward(MaskedFeature(x, mask)).features).sum())

    layer.zero_grad()
    layer.forward(MaskedFeature(x, mask))
    dx = layer.backward(r)
    assert rel_err(dx, central_diff(loss, x)) < 1e-4
    for name in ("weight", "bias"):
        assert rel_err(layer.conv.grads[name], central_diff(loss, layer.conv.params[name])) < 1e-4


def test_nn_fill_single_pixel_covers_everything():
    depth = np.zeros((7, 7))
    mask = np.zeros((7, 7), dtype=bool)
    depth[3, 3], mask[3, 3] = 12.5, True
    f = nn_fill(SparseDepth(depth, mask), 20)
    assert f.mask.all() and np.all(f.depth == 12.5)


def test_nn_fill_radius_zero_is_identity():
    s = sparsify(np.random.default_rng(3).uniform(1, 9, (5, 6)), sample_mask(5, 6, 0.2, 0))
    f = nn_fill(s, 0)
    assert np.array_equal(f.depth, s.depth) and np.array_equal(f.mask, s.mask)


def test_nn_fill_tie_prefers_smaller_row():
    depth = np.zeros((5, 5))
    mask = np.zeros((5, 5), dtype=bool)
    depth[0, 2], depth[4, 2] = 1.0, 2.0
    mask[0, 2] = mask[4, 2] = True
    f = nn_fill(SparseDepth(depth, mask), 5)
    assert f.depth[2, 2] == 1.0
    assert f.depth[3, 2] == 2.0


def test_nn_fill_tie_prefers_smaller_column():
    depth = np.zeros((3, 5))
    mask = np.zeros((3, 5), dtype=bool)
    depth[1, 0], depth[1, 4] = 1.0, 2.0
    mask[1, 0] = mask[1, 4] = True
    assert nn_fill(SparseDepth(depth, mask), 5).depth[1, 2] == 1.0


def test_nn_fill_leaves_far_pixels_invalid():
    depth = np.zeros((9, 9))
    mask = np.zeros((9, 9), dtype=bool)
    depth[0, 0], mask[0, 0] = 3.0, True
    f = nn_fill(SparseDepth(depth, mask), 2)
    assert f.mask[:3, :3].all() and f.mask.sum() == 9


def test_nn_fill_empty_mask():
    with pytest.raises(DegenerateInputError):
        nn_fill(SparseDepth(np.zeros((3, 3)), np.zeros((3, 3), dtype=bool)), 2)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SparseEncoderConfig((4, 8, 16, 32))
    with pytest.raises(ConfigurationError):
        SparseEncoderConfig((4, 8, 8, 32, 64))
    with pytest.raises(ConfigurationError):
        SparseEncoderConfig(stage_strides=(1, 2, 3, 2, 2))
    cfg = SparseEncoderConfig()
    assert cfg.stage_channels == (32, 64, 128, 256, 512)
    assert cfg.stage_strides == (1, 2, 2, 2, 2)
    assert cfg.fill_radius == 2


def test_dense_input_keeps_every_mask_full():
    gt = np.random.default_rng(4).uniform(1, 150, (32, 32))
    s = sparsify(gt, np.ones((32, 32), dtype=bool))
    stages, g = encode(s, TOY, rng=np.random.default_rng(0))
    assert all(st_.mask.all() for st_ in stages)
    assert g.shape == (64,)


def test_stage_extents_and_widths_at_paper_config():
    gt = np.random.default_rng(5).uniform(1, 150, (112, 112))
    s = sparsify(gt, sample_mask(112, 112, 0.005, 0))
    cfg = SparseEncoderConfig()
    stages, g = encode(s, cfg, rng=np.random.default_rng(0))
    assert [x.features.shape[1] for x in stages] == [112, 56, 28, 14, 7]
    assert [x.features.shape[0] for x in stages] == [32, 64, 128, 256, 512]
    cover = [x.mask.mean() for x in stages]
    assert cover[4] > cover[0]
    assert all(b >= a for a, b in zip(cover, cover[1:]))


def test_global_feature_is_masked_mean():
    gt = np.random.default_rng(6).uniform(1, 150, (32, 32))
    s = sparsify(gt, sample_mask(32, 32, 0.005, 1))
    enc = SparseEncoder(SparseEncoderConfig((4, 8, 16, 32, 64), fill_radius=0), rng=np.random.default_rng(1))
    stages, g = enc.forward(s)
    last = stages[-1]
    want = last.features[:, last.mask].sum(axis=1) / last.mask.sum()
    np.testing.assert_allclose(g, want, rtol=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20), ratio=st.floats(0.002, 0.3))
def test_encoder_mask_properties(seed, ratio):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(1, 150, (32, 32))
    if ratio * 1024 < 0.5:
        return
    s = sparsify(gt, sample_mask(32, 32, ratio, seed))
    enc = SparseEncoder(TOY, rng=np.random.default_rng(seed))
    stages, _ = enc.forward(s)
    prev = nn_fill(s, TOY.fill_radius).mask
    for layer, out in zip(enc.stages, stages):
        st_ = layer.conv.stride
        # a window holding any valid pixel yields a valid site, and only such windows do
        want = partial_conv_loop(np.zeros((1,) + prev.shape), prev, np.zeros((1, 1, 3, 3)), np.zeros(1), st_)[1]
        np.testing.assert_array_equal(out.mask, want)
        assert np.all(out.features[:, ~out.mask] == 0.0)
        assert out.mask[prev[::st_, ::st_]].all()
        prev = out.mask


def test_dense_encoder_matches_shapes_and_params():
    cfg = TOY
    a = SparseEncoder(cfg, rng=np.random.default_rng(0))
    b = DenseEncoder(cfg, rng=np.random.default_rng(0))
    assert a.num_parameters() == b.num_parameters()
    gt = np.random.default_rng(7).uniform(1, 150, (32, 32))
    s = sparsify(gt, sample_mask(32, 32, 0.01, 0))
    sa, _ = a.forward(s)
    sb, _ = b.forward(s)
    assert [x.features.shape for x in sa] == [x.features.shape for x in sb]
    assert all(x.mask.all() for x in sb)
