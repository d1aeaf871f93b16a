import numpy as np
import pytest

from dataio import seeded_init
from encoder import (BranchParams, EncoderParams, branch, crop_to, encode,
                     encoder_layout, normalize_frame, pad_to_multiple, prepare_frame)
from network import full_layout
from numerics import ShapeError


@pytest.fixture(scope="module")
def encoder_params():
    return EncoderParams.from_weights(seeded_init(0, encoder_layout()))


class TestPadding:
    def test_davis_frame_pads_two_columns(self):
        padded, crop = pad_to_multiple(np.zeros((480, 854, 3), np.uint8))
        assert padded.shape == (480, 856, 3)
        assert (crop.width, crop.height) == (854, 480)

    def test_multiple_unchanged(self):
        frame = np.ones((64, 64, 3), np.uint8)
        padded, _ = pad_to_multiple(frame)
        assert padded.shape == frame.shape

    def test_tiny_frame_rejected(self):
        with pytest.raises(ShapeError):
            pad_to_multiple(np.zeros((1, 1, 3), np.uint8))

    def test_crop_inverts_padding(self, rng):
        frame = rng.integers(0, 255, (13, 21)).astype(np.float32)
        padded, crop = pad_to_multiple(frame)
        np.testing.assert_array_equal(crop_to(padded, crop), frame)

    def test_crop_requires_record(self):
        with pytest.raises(ValueError):
            crop_to(np.zeros((1, 8, 8)), None)

    def test_normalization_constants(self):
        x = normalize_frame(np.full((8, 8, 3), 255, np.uint8))
        np.testing.assert_allclose(x[:, 0, 0], (1 - np.array([0.485, 0.456, 0.406])) /
                                   np.array([0.229, 0.224, 0.225]), rtol=1e-6)


class TestEncode:
    def test_stride_arithmetic(self, encoder_params):
        x, _ = prepare_frame(np.zeros((48, 80, 3), np.uint8))
        f = encode(x, encoder_params)
        assert f.s2.shape == (32, 24, 40)
        assert f.s4.shape == (64, 12, 20)
        assert f.s8.shape == (128, 6, 10)

    def test_deterministic(self, encoder_params, rng):
        x, _ = prepare_frame(rng.integers(0, 255, (32, 40, 3)).astype(np.uint8))
        a, b = encode(x, encoder_params), encode(x, encoder_params)
        for name in ("s2", "s4", "s8"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_zero_input_zero_bias_gives_zero_features(self, encoder_params):
        f = encode(np.zeros((3, 16, 16), np.float32), encoder_params)
        assert not f.s2.any() and not f.s4.any() and not f.s8.any()

    def test_unpadded_input_rejected(self, encoder_params):
        with pytest.raises(ShapeError):
            encode(np.zeros((3, 12, 16), np.float32), encoder_params)

    def test_wrong_channel_count_rejected(self, encoder_params):
        with pytest.raises(ShapeError):
            encode(np.zeros((4, 16, 16), np.float32), encoder_params)


class TestBranch:
    @pytest.fixture(scope="class")
    def weights(self):
        return seeded_init(1, full_layout(16))

    def test_shapes_and_unit_norm(self, weights, rng):
        f = encode(prepare_frame(rng.integers(0, 255, (32, 48, 3)).astype(np.uint8))[0],
                   EncoderParams.from_weights(weights))
        m = branch(f, BranchParams.from_weights(weights))
        assert m.global_feat.shape == m.local_feat.shape == (128, 4, 6)
        for feat in (m.global_feat, m.local_feat):
            norms = np.linalg.norm(feat, axis=0)
            assert np.all((np.abs(norms - 1) < 1e-5) | (norms == 0))

    def test_branches_differ(self, weights, rng):
        s8 = np.abs(rng.standard_normal((128, 4, 4))).astype(np.float32)
        f = type("F", (), {"s8": s8})()
        m = branch(f, BranchParams.from_weights(weights))
        assert not np.allclose(m.global_feat, m.local_feat)
