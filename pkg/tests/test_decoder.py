from dataclasses import replace

import numpy as np
import pytest

from aic import aic2d
from dataio import WeightsContainer, seeded_init
from decoder import (FUSE_CHANNELS, DecoderInput, DecoderParams, decode, decoder_in_channels,
                     decoder_layout, fuse, refine, segment_head)
from encoder import CropRecord, EncoderFeatures
from numerics import FOCAL_EPS, ShapeError, bilinear_resize, conv2d

N = 16


@pytest.fixture(scope="module")
def params():
    return DecoderParams.from_weights(seeded_init(0, decoder_layout(N)))


def _zero_head(seed=0):
    src = seeded_init(seed, decoder_layout(N))
    out = WeightsContainer()
    for name in src.names():
        value = src.tensor(name)
        out.add(name, np.zeros_like(value) if name.startswith("decoder.head.") else value)
    return DecoderParams.from_weights(out)


def _inputs(rng, h8, w8):
    sims = [rng.uniform(-1, 1, (N, h8, w8)).astype(np.float32) for _ in range(4)]
    mask = rng.uniform(0, 1, (1, h8, w8)).astype(np.float32)
    return DecoderInput(*sims, mask, rng.standard_normal((128, h8, w8)).astype(np.float32))


def _feats(rng, h8, w8):
    return EncoderFeatures(rng.standard_normal((32, 4 * h8, 4 * w8)).astype(np.float32),
                           rng.standard_normal((64, 2 * h8, 2 * w8)).astype(np.float32),
                           rng.standard_normal((128, h8, w8)).astype(np.float32))


class TestDecoderInput:
    def test_channel_count(self, rng):
        inp = _inputs(rng, 3, 4)
        assert inp.channels == decoder_in_channels(N) == 4 * N + 1 + 128
        assert inp.stack().shape == (4 * N + 129, 3, 4)

    def test_extent_mismatch_rejected(self, rng):
        inp = _inputs(rng, 3, 4)
        inp.l_bg = np.zeros((N, 3, 5), np.float32)
        with pytest.raises(ShapeError):
            inp.stack()

    def test_wrong_n_rejected(self, rng, params):
        inp = _inputs(rng, 2, 2)
        inp.g_fg = np.zeros((N + 1, 2, 2), np.float32)
        with pytest.raises(ShapeError):
            fuse(inp, params)


class TestStages:
    def test_fuse_shape(self, rng, params):
        assert fuse(_inputs(rng, 3, 5), params).shape == (FUSE_CHANNELS, 3, 5)

    def test_refine_zero_skip_is_upsampled_projection(self, rng, params):
        prev = rng.standard_normal((FUSE_CHANNELS, 3, 3)).astype(np.float32)
        out = refine(np.zeros((64, 6, 6), np.float32), prev, params.refine4)
        np.testing.assert_allclose(out, bilinear_resize(conv2d(prev, params.refine4.proj), 2), atol=1e-6)

    def test_refine_zero_prev_is_skip_conv(self, rng, params):
        skip = rng.standard_normal((64, 6, 6)).astype(np.float32)
        out = refine(skip, np.zeros((FUSE_CHANNELS, 3, 3), np.float32), params.refine4)
        np.testing.assert_allclose(out, aic2d(skip, params.refine4.skip_aic), atol=1e-6)

    def test_refine_requires_double_extent(self, rng, params):
        with pytest.raises(ShapeError):
            refine(np.zeros((64, 7, 6), np.float32), np.zeros((FUSE_CHANNELS, 3, 3), np.float32),
                   params.refine4)

    def test_zero_head_gives_one_half(self, rng):
        out = segment_head(rng.standard_normal((32, 8, 10)).astype(np.float32),
                           CropRecord(20, 16), _zero_head())
        assert out.shape == (1, 16, 20)
        np.testing.assert_allclose(out, 0.5)

    def test_head_requires_crop(self, rng, params):
        with pytest.raises(ValueError):
            segment_head(np.zeros((32, 4, 4), np.float32), None, params)


class TestDecode:
    def test_output_shape_and_range(self, rng, params):
        prob = decode(_inputs(rng, 2, 3), _feats(rng, 2, 3), CropRecord(21, 13), params)
        assert prob.shape == (1, 13, 21)
        assert prob.dtype == np.float32
        assert prob.min() >= FOCAL_EPS and prob.max() <= 1 - FOCAL_EPS

    def test_deterministic(self, rng, params):
        inp, feats = _inputs(rng, 2, 2), _feats(rng, 2, 2)
        a = decode(inp, feats, CropRecord(16, 16), params)
        b = decode(inp, feats, CropRecord(16, 16), params)
        np.testing.assert_array_equal(a, b)

    def test_feature_extent_mismatch_rejected(self, rng, params):
        with pytest.raises(ShapeError):
            decode(_inputs(rng, 2, 2), _feats(rng, 3, 2), CropRecord(16, 16), params)

    @pytest.mark.parametrize("field", ["g_fg", "g_bg", "l_fg", "l_bg", "prev_mask_s8"])
    def test_zeroing_each_input_changes_output(self, rng, params, field):
        inp, feats = _inputs(rng, 3, 4), _feats(rng, 3, 4)
        crop = CropRecord(30, 22)
        base = decode(inp, feats, crop, params)
        zeroed = replace(inp, **{field: np.zeros_like(getattr(inp, field))})
        prob = decode(zeroed, feats, crop, params)
        assert prob.shape == base.shape == (1, 22, 30)
        assert prob.min() >= FOCAL_EPS and prob.max() <= 1 - FOCAL_EPS
        assert np.abs(prob - base).max() > 0
