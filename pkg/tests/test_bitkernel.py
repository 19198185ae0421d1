import itertools

import numpy as np
import pytest

from cyclic_bnn.bitkernel import (PackedBits, PackedConvWeights, pack, pack_network, packed_conv2d,
                                  packed_linear, raw_bitcount, read_packed_model, unpack, unpack_bits,
                                  write_packed_model, xnor_popcount_dot)
from cyclic_bnn.errors import BnnError
from cyclic_bnn.tensor import conv2d_ref


def signs(rng, shape):
    return np.where(rng.random(shape) < 0.5, -1.0, 1.0).astype(np.float32)


class TestPack:
    def test_lsb_first(self):
        p = pack([1, -1, 1])
        assert p.logical_len == 3 and p.words.tolist() == [0b101]

    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            v = signs(rng, int(rng.integers(1, 258)))
            assert np.array_equal(unpack(pack(v)), v)

    def test_not_binarized(self):
        with pytest.raises(BnnError, match="not-binarized"):
            pack([0.5])

    def test_word_boundary(self):
        v = np.ones(65)
        p = pack(v)
        assert len(p.words) == 2 and p.words[1] == 1 and unpack_bits(p).sum() == 65

    def test_invalid_word_count(self):
        with pytest.raises(BnnError, match="invalid-packed-bits"):
            PackedBits(np.zeros(2, np.uint64), 10)


class TestDot:
    def test_three_element(self):
        a, w = pack([1, -1, 1]), pack([1, 1, -1])
        assert raw_bitcount(a, w) == 2 and xnor_popcount_dot(a, w) == -1

    @pytest.mark.parametrize("n", [1, 63, 64, 65, 200])
    def test_agreement_and_disagreement(self, n):
        v = signs(np.random.default_rng(n), n)
        assert xnor_popcount_dot(pack(v), pack(v)) == n
        assert xnor_popcount_dot(pack(v), pack(-v)) == -n

    def test_random_against_float(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 300))
            a, w = signs(rng, n), signs(rng, n)
            assert xnor_popcount_dot(pack(a), pack(w)) == int(a @ w)

    def test_length_mismatch(self):
        with pytest.raises(BnnError, match="length-mismatch"):
            xnor_popcount_dot(pack([1, 1]), pack([1, 1, 1]))


class TestPackedConv:
    def test_all_ones(self):
        out = packed_conv2d(pack(np.ones(9)), (1, 3, 3), PackedConvWeights.from_signs(np.ones((1, 1, 3, 3))))
        assert out.tolist() == [[[9.0]]]

    def test_exhaustive_kernels(self):
        x = signs(np.random.default_rng(2), (1, 5, 5))
        packed_x = pack(x)
        for pattern in itertools.product((-1.0, 1.0), repeat=9):
            w = np.array(pattern, np.float32).reshape(1, 1, 3, 3)
            assert np.array_equal(packed_conv2d(packed_x, x.shape, PackedConvWeights.from_signs(w)),
                                  conv2d_ref(x, w))

    def test_spec_shape_stride_two_pad_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x, w = signs(rng, (2, 8, 8)), signs(rng, (4, 2, 3, 3))
            out = packed_conv2d(pack(x), x.shape, PackedConvWeights.from_signs(w), 2, 1)
            assert np.array_equal(out, conv2d_ref(x, w, 2, 1))

    def test_batched_bits_input(self):
        rng = np.random.default_rng(4)
        x, w = signs(rng, (3, 2, 6, 5)), signs(rng, (5, 2, 3, 3))
        out = packed_conv2d((x > 0).astype(np.uint8), x.shape, PackedConvWeights.from_signs(w), 1, 1)
        assert np.array_equal(out, conv2d_ref(x, w, 1, 1))

    def test_linear(self):
        rng = np.random.default_rng(5)
        x, w = signs(rng, (7, 130)), signs(rng, (3, 130))
        out = packed_linear(pack(x), x.shape, PackedConvWeights.from_signs(w))
        assert np.array_equal(out, x @ w.T)

    def test_channel_mismatch(self):
        with pytest.raises(BnnError, match="incompatible-shapes"):
            packed_conv2d(pack(np.ones(18)), (2, 3, 3), PackedConvWeights.from_signs(np.ones((1, 1, 3, 3))))


class TestPackedFile:
    def _records(self):
        rng = np.random.default_rng(6)
        return {"0.fp_conv.weight": rng.standard_normal((2, 1, 3, 3)).astype(np.float32),
                "1.binary_conv.weight": rng.standard_normal((4, 2, 3, 3)).astype(np.float32)}

    def test_roundtrip_and_size(self, tmp_path):
        model = pack_network(self._records(), ["1.binary_conv.weight"])
        path = tmp_path / "m.cbnp"
        write_packed_model(path, model)
        back = read_packed_model(path)
        np.testing.assert_array_equal(back.floats["0.fp_conv.weight"], self._records()["0.fp_conv.weight"])
        bits, shape = back.packed["1.binary_conv.weight"]
        assert shape == (4, 2, 3, 3) and np.array_equal(bits.words, model.packed["1.binary_conv.weight"][0].words)
        # header 12 + two table entries (name, enc, rank, dims, offset, length) + payloads
        table = sum(2 + len(n) + 2 + 8 * 4 + 16 for n in self._records())
        assert path.stat().st_size == 12 + table + 18 * 4 + 16  # 72 sign bits -> 2 words

    def test_deterministic(self, tmp_path):
        model = pack_network(self._records(), ["1.binary_conv.weight"])
        write_packed_model(tmp_path / "a", model)
        write_packed_model(tmp_path / "b", model)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(BnnError, match="bad-packed-magic"):
            read_packed_model(tmp_path / "x")

    def test_zero_variance_layer(self):
        with pytest.raises(BnnError, match="zero-variance-weights"):
            pack_network({"w": np.ones((2, 2), np.float32)}, ["w"])
