import gzip
import struct

import numpy as np
import pytest

from cyclic_bnn.data import Dataset, batches, load_idx, read_idx, save_idx, synth_dataset, write_idx
from cyclic_bnn.errors import BnnError


def write_pair(tmp_path, pixels, labels):
    write_idx(tmp_path / "img", pixels)
    write_idx(tmp_path / "lbl", labels)
    return tmp_path / "img", tmp_path / "lbl"


class TestIdx:
    def test_endpoints(self, tmp_path):
        pixels = np.array([[[0, 255], [255, 0]], [[255, 255], [0, 0]]], np.uint8)
        d = load_idx(*write_pair(tmp_path, pixels, np.array([0, 1], np.uint8)))
        assert d.images.shape == (2, 1, 2, 2)
        assert set(np.unique(d.images)) == {-1.0, 1.0}
        assert d.images[0, 0, 0, 1] == 1.0 and d.images[0, 0, 0, 0] == -1.0

    def test_header_is_big_endian(self, tmp_path):
        write_idx(tmp_path / "img", np.zeros((3, 28, 28), np.uint8))
        raw = (tmp_path / "img").read_bytes()
        assert struct.unpack(">IIII", raw[:16]) == (0x803, 3, 28, 28) and len(raw) == 16 + 3 * 784

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(struct.pack(">I", 0x804) + bytes(16))
        with pytest.raises(BnnError, match="bad-idx-magic"):
            read_idx(tmp_path / "x", 0x803)

    def test_truncated(self, tmp_path):
        img, _ = write_pair(tmp_path, np.zeros((4, 3, 3), np.uint8), np.zeros(4, np.uint8))
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(BnnError, match="truncated-file"):
            read_idx(img, 0x803)

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(BnnError, match="label-count-mismatch"):
            load_idx(*write_pair(tmp_path, np.zeros((3, 2, 2), np.uint8), np.zeros(2, np.uint8)))

    def test_gzip(self, tmp_path):
        img, lbl = write_pair(tmp_path, np.full((2, 2, 2), 128, np.uint8), np.array([1, 0], np.uint8))
        gz = tmp_path / "img.gz"
        gz.write_bytes(gzip.compress(img.read_bytes()))
        assert np.array_equal(load_idx(gz, lbl).images, load_idx(img, lbl).images)

    def test_reserialize_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        img, lbl = write_pair(tmp_path, rng.integers(0, 256, (5, 4, 4), dtype=np.uint8),
                              rng.integers(0, 10, 5, dtype=np.uint8))
        save_idx(load_idx(img, lbl), tmp_path / "img2", tmp_path / "lbl2")
        assert (tmp_path / "img2").read_bytes() == img.read_bytes()
        assert (tmp_path / "lbl2").read_bytes() == lbl.read_bytes()


class TestSynth:
    def test_deterministic(self):
        a, b = synth_dataset(50, 3), synth_dataset(50, 3)
        assert a.images.tobytes() == b.images.tobytes() and np.array_equal(a.labels, b.labels)

    def test_balanced_and_in_range(self):
        d = synth_dataset(100, 42)
        assert np.bincount(d.labels).tolist() == [50, 50]
        assert d.images.min() >= -1 and d.images.max() <= 1 and d.images.dtype == np.float32

    def test_linearly_separable(self):
        # Full-precision logistic regression by plain gradient descent.
        d = synth_dataset(200, 7)
        x = d.images.reshape(200, -1).astype(np.float64)
        y = d.labels
        w, b = np.zeros(x.shape[1]), 0.0
        for _ in range(100):
            p = 1 / (1 + np.exp(-(x @ w + b)))
            w -= 0.5 * x.T @ (p - y) / 200
            b -= 0.5 * np.mean(p - y)
        assert np.mean(((x @ w + b) > 0) == y) == 1.0


class TestBatches:
    def test_sizes(self):
        d = synth_dataset(10, 0)
        assert [len(l) for _, l in batches(d, 4, 0, 0)] == [4, 4, 2]

    def test_single_batch_is_permutation(self):
        d = Dataset(np.arange(8, dtype=np.float32).reshape(8, 1, 1, 1), np.arange(8), 8)
        ((imgs, labels),) = batches(d, 8, 1, 0)
        assert sorted(labels.tolist()) == list(range(8)) and labels.tolist() != list(range(8))
        assert np.array_equal(imgs[:, 0, 0, 0], labels)

    def test_order_fixed_per_seed_epoch(self):
        d = synth_dataset(30, 0)

        def order(seed, epoch):
            return np.concatenate([l for _, l in batches(d, 7, seed, epoch)])

        def first_pixels(seed, epoch):
            return np.concatenate([im[:, 0, 0, 0] for im, _ in batches(d, 7, seed, epoch)])

        assert np.array_equal(order(5, 2), order(5, 2)) and len(order(5, 2)) == 30
        assert not np.array_equal(first_pixels(5, 2), first_pixels(5, 3))
