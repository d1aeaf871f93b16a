import os

import numpy as np
import pytest
from PIL import Image

from dataio import (ChecksumError, LayoutEntry, SequenceError, WeightsContainer, WeightsFormatError,
                    davis_palette, load_sequence, load_weights, read_label_map, save_weights,
                    seeded_init, write_frame, write_label_map)
from network import Network, full_layout


@pytest.fixture
def weights_file(tmp_path):
    w = WeightsContainer()
    w.add("a.weight", np.arange(6, dtype=np.float32).reshape(2, 3))
    w.add("a.bias", np.array([0.5, -1.5], np.float32))
    path = tmp_path / "w.lsmw"
    save_weights(str(path), w)
    return path


class TestWeightsContainer:
    def test_save_load(self, weights_file):
        w = load_weights(str(weights_file))
        assert w.names() == ["a.weight", "a.bias"]
        np.testing.assert_array_equal(w.tensor("a.weight"), np.arange(6).reshape(2, 3))
        assert w.tensor("a.bias").dtype == np.float32

    def test_truncated_file_rejected(self, weights_file):
        data = weights_file.read_bytes()
        weights_file.write_bytes(data[:-4])
        with pytest.raises(ChecksumError):
            load_weights(str(weights_file))

    def test_corrupted_blob_rejected(self, weights_file):
        data = bytearray(weights_file.read_bytes())
        data[-1] ^= 0xFF
        weights_file.write_bytes(bytes(data))
        with pytest.raises(ChecksumError):
            load_weights(str(weights_file))

    def test_bad_magic_rejected(self, weights_file):
        data = weights_file.read_bytes()
        weights_file.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(WeightsFormatError):
            load_weights(str(weights_file))

    def test_duplicate_and_missing_entries(self):
        w = WeightsContainer()
        w.add("x", np.zeros(2))
        with pytest.raises(ValueError):
            w.add("x", np.zeros(2))
        with pytest.raises(KeyError):
            w.tensor("y")
        with pytest.raises(ValueError):
            w.tensor("x", (3,))

    def test_tensors_are_read_only(self, weights_file):
        w = load_weights(str(weights_file))
        with pytest.raises(ValueError):
            w.tensor("a.bias")[0] = 1.0


class TestSeededInit:
    def test_deterministic(self):
        layout = full_layout(8)
        a, b = seeded_init(7, layout), seeded_init(7, layout)
        for name in a.names():
            np.testing.assert_array_equal(a.tensor(name), b.tensor(name))

    def test_seed_changes_values(self):
        layout = [LayoutEntry("w", (16, 16), 16, "weight")]
        assert not np.array_equal(seeded_init(1, layout).tensor("w"), seeded_init(2, layout).tensor("w"))

    def test_scale_and_zero_bias(self):
        w = seeded_init(0, full_layout(16))
        for entry in full_layout(16):
            t = w.tensor(entry.name)
            if entry.kind == "bias":
                assert not t.any()
            elif t.size >= 256:
                expected = 1.0 / np.sqrt(entry.fan_in)
                assert abs(t.std() - expected) < 0.2 * expected

    def test_assembles_network(self, small_weights):
        assert Network.from_weights(small_weights).n == 16

    def test_round_trip_through_file(self, tmp_path, small_weights):
        path = tmp_path / "seeded.lsmw"
        save_weights(str(path), small_weights)
        loaded = load_weights(str(path))
        assert loaded.names() == small_weights.names()
        name = "decoder.fuse.proj.weight"
        np.testing.assert_array_equal(loaded.tensor(name), small_weights.tensor(name))


class TestLabelMaps:
    def test_palette(self):
        palette = davis_palette()
        assert len(palette) == 768
        assert palette[3:6] == [128, 0, 0]
        assert palette[6:9] == [0, 128, 0]

    def test_indexed_png_round_trip(self, tmp_path):
        mask = np.array([[0, 1, 2], [3, 0, 255]], np.uint8)
        path = str(tmp_path / "m.png")
        write_label_map(path, mask)
        with Image.open(path) as img:
            assert img.mode == "P"
        np.testing.assert_array_equal(read_label_map(path), mask)

    def test_rgb_png_rejected(self, tmp_path):
        path = str(tmp_path / "rgb.png")
        write_frame(path, np.zeros((4, 4, 3), np.uint8))
        with pytest.raises(ValueError):
            read_label_map(path)

    def test_out_of_range_ids_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_label_map(str(tmp_path / "bad.png"), np.array([[0, 300]]))


class TestSequences:
    def test_load_fixture(self, davis_root, clip):
        seq = load_sequence(str(davis_root), "480p", "squares")
        assert len(seq) == len(clip.frames)
        assert seq.resolution == (40, 32)
        assert seq.annotation_for(0) is not None
        assert seq.annotation_for(1) is None
        np.testing.assert_array_equal(seq.frames()[2], clip.frames[2])
        np.testing.assert_array_equal(read_label_map(seq.annotation_for(0)), clip.labels[0])

    def test_missing_sequence(self, davis_root):
        with pytest.raises(SequenceError):
            load_sequence(str(davis_root), "480p", "nope")

    def test_missing_first_annotation(self, davis_root):
        os.remove(davis_root / "Annotations" / "480p" / "squares" / "00000.png")
        with pytest.raises(SequenceError, match="first frame"):
            load_sequence(str(davis_root), "480p", "squares")

    def test_mixed_resolutions(self, davis_root):
        write_frame(str(davis_root / "JPEGImages" / "480p" / "squares" / "00009.png"),
                    np.zeros((16, 16, 3), np.uint8))
        with pytest.raises(SequenceError, match="mixed"):
            load_sequence(str(davis_root), "480p", "squares")
