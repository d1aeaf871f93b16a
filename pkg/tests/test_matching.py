import numpy as np
import pytest

from conftest import unit_features
from matching import (GateMask, MatchConfig, Polarity, SimilarityMap, downsample_mask,
                      long_term_match, long_term_match_backward, long_term_volume,
                      short_term_match, short_term_match_backward, short_term_volume)
from numerics import ShapeError
from oracles import brute_long_term, brute_short_term, check_gradient


def _gate(rng, h, w):
    return GateMask(rng.uniform(0, 1, (1, h, w)).astype(np.float32))


def _ones(h, w):
    return GateMask(np.ones((1, h, w), np.float32))


class TestConfigAndGate:
    def test_defaults(self):
        cfg = MatchConfig()
        assert (cfg.k, cfg.n, cfg.window_candidates) == (8, 256, 289)

    @pytest.mark.parametrize("kwargs", [{"k": -1}, {"n": 0}, {"similarity": "l1"}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            MatchConfig(**kwargs)

    def test_gate_range_enforced(self):
        with pytest.raises(ValueError):
            GateMask(np.full((1, 2, 2), 1.5, np.float32))

    def test_downsample_all_ones(self):
        gate = downsample_mask(np.ones((1, 16, 24), np.float32))
        np.testing.assert_array_equal(gate.values, np.ones((1, 2, 3), np.float32))

    def test_downsample_checkerboard_block(self):
        board = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float32)
        assert downsample_mask(board[None]).values[0, 0, 0] == 0.5

    def test_downsample_davis_extent(self):
        assert downsample_mask(np.zeros((1, 480, 856), np.float32)).shape == (60, 107)

    def test_downsample_rejects_non_divisible(self):
        with pytest.raises(ShapeError):
            downsample_mask(np.zeros((1, 12, 16), np.float32))


class TestShortTermMatch:
    def test_self_similarity_k0(self, rng):
        x = unit_features(rng, 8, 5, 6)
        m = short_term_match(x, x, _ones(5, 6), MatchConfig(k=0, n=1))
        np.testing.assert_allclose(m.values, 1.0, atol=1e-6)

    def test_matches_oracle(self, rng):
        cur, prev = unit_features(rng, 16, 12, 12), unit_features(rng, 16, 12, 12)
        gate = _gate(rng, 12, 12)
        for polarity in Polarity:
            m = short_term_match(cur, prev, gate, MatchConfig(k=2, n=9), polarity)
            want, want_ids = brute_short_term(cur, prev, gate.for_polarity(polarity), 2, 9)
            np.testing.assert_allclose(m.values, want, atol=1e-5)

    def test_random_instances_match_oracle(self, rng):
        for _ in range(10):
            c = int(rng.choice([8, 16]))
            h, w = (int(v) for v in rng.integers(8, 13, 2))
            k = int(rng.integers(0, 4))
            n = int(rng.integers(1, (2 * k + 1) ** 2 + 1))
            cur, prev, gate = unit_features(rng, c, h, w), unit_features(rng, c, h, w), _gate(rng, h, w)
            m = short_term_match(cur, prev, gate, MatchConfig(k, n))
            want, _ = brute_short_term(cur, prev, gate.values[0], k, n)
            np.testing.assert_allclose(m.values, want, atol=1e-5)

    def test_descending_and_bounded(self, rng):
        cur, prev = unit_features(rng, 16, 10, 10), unit_features(rng, 16, 10, 10)
        m = short_term_match(cur, prev, _gate(rng, 10, 10), MatchConfig(k=3, n=20))
        assert (np.diff(m.values, axis=0) <= 0).all()
        assert m.values.min() >= -1.0 - 1e-6 and m.values.max() <= 1.0 + 1e-6

    def test_corner_zero_fill(self, rng):
        cur, prev = unit_features(rng, 8, 8, 8), unit_features(rng, 8, 8, 8)
        m = short_term_match(cur, prev, _ones(8, 8), MatchConfig(k=1, n=9))
        # a corner pixel has 4 in-image candidates
        assert (m.indices[4:, 0, 0] == -1).all()
        assert (m.values[4:, 0, 0] == 0).all()
        assert (m.indices[:, 4, 4] >= 0).all()

    def test_translation_leaves_interior_unchanged(self, rng):
        c, h, w, k = 8, 14, 14, 2
        cur, prev = unit_features(rng, c, h, w), unit_features(rng, c, h, w)
        gate = rng.uniform(0, 1, (1, h, w)).astype(np.float32)
        shift = lambda x: np.concatenate([np.zeros_like(x[:, :1]), x[:, :-1]], axis=1)
        cfg = MatchConfig(k=k, n=9, similarity="dot")
        base = short_term_match(cur, prev, GateMask(gate), cfg)
        moved = short_term_match(shift(cur), shift(prev), GateMask(shift(gate)), cfg)
        inner = slice(k + 1, h - k - 1)
        np.testing.assert_allclose(moved.values[:, k + 2:h - k, k:w - k],
                                   base.values[:, inner, k:w - k], atol=1e-6)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            short_term_match(unit_features(rng, 8, 6, 6), unit_features(rng, 8, 6, 7),
                             _ones(6, 6), MatchConfig(k=1, n=2))

    def test_gate_mismatch_rejected(self, rng):
        x = unit_features(rng, 8, 6, 6)
        with pytest.raises(ShapeError):
            short_term_match(x, x, _ones(5, 6), MatchConfig(k=1, n=2))

    def test_cosine_mode_rejects_unnormalized(self, rng):
        x = rng.standard_normal((8, 4, 4)).astype(np.float32) * 3
        with pytest.raises(ValueError):
            short_term_match(x, x, _ones(4, 4), MatchConfig(k=1, n=2))

    def test_precomputed_volume_gives_same_map(self, rng):
        cur, prev = unit_features(rng, 8, 9, 9), unit_features(rng, 8, 9, 9)
        gate = _gate(rng, 9, 9)
        cfg = MatchConfig(k=2, n=7)
        vol = short_term_volume(cur, prev, 2)
        np.testing.assert_array_equal(short_term_match(cur, prev, gate, cfg, volume=vol).values,
                                      short_term_match(cur, prev, gate, cfg).values)

    def test_thread_count_does_not_change_bits(self, rng):
        cur, prev = unit_features(rng, 16, 24, 20), unit_features(rng, 16, 24, 20)
        gate = _gate(rng, 24, 20)
        cfg = MatchConfig(k=3, n=12)
        serial = short_term_match(cur, prev, gate, cfg, threads=1)
        parallel = short_term_match(cur, prev, gate, cfg, threads=4)
        np.testing.assert_array_equal(serial.values, parallel.values)
        np.testing.assert_array_equal(serial.indices, parallel.indices)


class TestLongTermMatch:
    def test_zero_gate_zero_foreground(self, rng):
        cur, ref = unit_features(rng, 8, 6, 6), unit_features(rng, 8, 5, 7)
        m = long_term_match(cur, ref, GateMask(np.zeros((1, 5, 7), np.float32)), MatchConfig(n=10))
        assert not m.values.any()

    def test_single_gated_position_self_match(self, rng):
        x = unit_features(rng, 8, 6, 6)
        gate = np.zeros((1, 6, 6), np.float32)
        gate[0, 2, 3] = 1.0
        m = long_term_match(x, x, GateMask(gate), MatchConfig(n=4))
        assert m.values[0, 2, 3] == pytest.approx(1.0, abs=1e-6)

    def test_matches_oracle_asymmetric_extents(self, rng):
        cur, ref = unit_features(rng, 16, 12, 12), unit_features(rng, 16, 10, 10)
        gate = _gate(rng, 10, 10)
        for polarity in Polarity:
            m = long_term_match(cur, ref, gate, MatchConfig(n=16), polarity)
            want, _ = brute_long_term(cur, ref, gate.for_polarity(polarity), 16)
            np.testing.assert_allclose(m.values, want, atol=1e-5)

    def test_zero_fill_when_reference_is_small(self, rng):
        cur, ref = unit_features(rng, 8, 4, 4), unit_features(rng, 8, 2, 2)
        m = long_term_match(cur, ref, _ones(2, 2), MatchConfig(n=6))
        assert (m.indices[4:] == -1).all()
        assert not m.values[4:].any()

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            long_term_match(unit_features(rng, 8, 4, 4), unit_features(rng, 16, 4, 4),
                            _ones(4, 4), MatchConfig(n=2))

    def test_window_covering_image_equals_global(self, rng):
        cur, prev = unit_features(rng, 16, 12, 12), unit_features(rng, 16, 12, 12)
        short = short_term_match(cur, prev, _ones(12, 12), MatchConfig(k=12, n=144))
        glob = long_term_match(cur, prev, _ones(12, 12), MatchConfig(k=12, n=144))
        np.testing.assert_array_equal(short.values, glob.values)

    def test_volume_shape(self, rng):
        vol = long_term_volume(unit_features(rng, 8, 3, 5), unit_features(rng, 8, 2, 4))
        assert vol.shape == (8, 3, 5)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self, rng):
        cur, prev = unit_features(rng, 8, 6, 6), unit_features(rng, 8, 6, 6)
        cfg = MatchConfig(k=1, n=4)
        m = short_term_match(cur, prev, _gate(rng, 6, 6), cfg)
        g_cur, g_prev = short_term_match_backward(np.zeros_like(m.values), m, cfg)
        assert not g_cur.any() and not g_prev.any()

    def test_single_pixel_hand_derivative(self):
        cur = np.array([0.6, 0.8], np.float32).reshape(2, 1, 1)
        prev = np.array([1.0, 0.0], np.float32).reshape(2, 1, 1)
        gate = GateMask(np.full((1, 1, 1), 0.5, np.float32))
        cfg = MatchConfig(k=0, n=1)
        m = short_term_match(cur, prev, gate, cfg)
        g_cur, g_prev = short_term_match_backward(np.full((1, 1, 1), 2.0, np.float32), m, cfg)
        np.testing.assert_allclose(g_cur.ravel(), 2.0 * 0.5 * prev.ravel())
        np.testing.assert_allclose(g_prev.ravel(), 2.0 * 0.5 * cur.ravel())

    def test_missing_indices_rejected(self):
        m = SimilarityMap(np.zeros((1, 2, 2), np.float32))
        with pytest.raises(ValueError):
            short_term_match_backward(np.zeros((1, 2, 2), np.float32), m, MatchConfig(k=0, n=1))
        with pytest.raises(ValueError):
            long_term_match_backward(np.zeros((1, 2, 2), np.float32), m, MatchConfig(n=1))

    @pytest.mark.parametrize("long", [False, True])
    def test_matches_finite_differences(self, rng, long):
        cfg = MatchConfig(k=2, n=6, similarity="dot")
        cur = rng.standard_normal((8, 6, 6)).astype(np.float32)
        other = rng.standard_normal((8, 6, 6)).astype(np.float32)
        gate = _gate(rng, 6, 6)
        match = long_term_match if long else short_term_match
        backward = long_term_match_backward if long else short_term_match_backward
        m = match(cur, other, gate, cfg)
        upstream = rng.standard_normal(m.values.shape).astype(np.float32)
        g_cur, g_other = backward(upstream, m, cfg)

        def loss(a, b):
            r = match(a, b, gate, cfg)
            return float(np.sum(upstream.astype(np.float64) * r.values)), r.indices

        for x, grad, fwd in ((cur, g_cur, lambda v: loss(v, other)),
                             (other, g_other, lambda v: loss(cur, v))):
            result = check_gradient(fwd, x, grad, rng)
            assert result.checked == 100
            assert result.rel_error < 1e-3
