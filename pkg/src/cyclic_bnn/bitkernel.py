"""Bit-packed inference for binary layers.

A ±1 tensor is packed row-major into 64-bit words, LSB first, with bit 1
standing for +1 and bit 0 for -1; padding bits past ``logical_len`` are zero.
A ±1 dot product of length n is recovered from the XOR mismatch count as
``n - 2 * popcount(a ^ w)``.

Zero padding in convolutions is handled by a per-window validity mask: taps
that fall outside the input contribute nothing (neither +1 nor -1), so the
packed result equals the float reference with zero padding exactly.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BnnError
from .nn import Network, PrecisionContext
from .quant import sign, standardize
from .tensor import DTYPE, conv_output_size, im2col

WORD_BITS = 64


@dataclass(frozen=True)
class PackedBits:
    words: np.ndarray  # uint64
    logical_len: int

    def __post_init__(self):
        if self.words.dtype != np.uint64 or len(self.words) != -(-self.logical_len // WORD_BITS):
            raise BnnError("invalid-packed-bits", f"{len(self.words)} words for {self.logical_len} bits")


def _pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a 2-D 0/1 array row-wise into ``[rows, ceil(cols/64)]`` uint64 words."""
    rows, cols = bits.shape
    n_words = -(-cols // WORD_BITS)
    padded = np.zeros((rows, n_words * WORD_BITS), dtype=np.uint8)
    padded[:, :cols] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64, copy=False).reshape(rows, n_words)


def _check_signs(signs: np.ndarray):
    if not np.all((signs == 1) | (signs == -1)):
        raise BnnError("not-binarized")


def pack(signs) -> PackedBits:
    s = np.asarray(signs).ravel()
    _check_signs(s)
    return PackedBits(_pack_rows((s > 0).astype(np.uint8)[None, :])[0], s.size)


def unpack_bits(p: PackedBits) -> np.ndarray:
    """The raw 0/1 bit vector of length ``logical_len``."""
    raw = p.words.astype("<u8").view(np.uint8)
    return np.unpackbits(raw, bitorder="little")[:p.logical_len]


def unpack(p: PackedBits, shape=None) -> np.ndarray:
    out = unpack_bits(p).astype(DTYPE) * 2 - 1
    return out.reshape(shape) if shape is not None else out


def _popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).astype(np.int64)


def _tail_mask(logical_len: int) -> np.ndarray:
    mask = np.full(-(-logical_len // WORD_BITS), np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    rem = logical_len % WORD_BITS
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


def raw_bitcount(a: PackedBits, w: PackedBits) -> int:
    """Number of mismatching positions, ``popcount(a ^ w)``."""
    if a.logical_len != w.logical_len:
        raise BnnError("length-mismatch", f"{a.logical_len} vs {w.logical_len}")
    return int(_popcount((a.words ^ w.words) & _tail_mask(a.logical_len)).sum())


def xnor_popcount_dot(a: PackedBits, w: PackedBits) -> int:
    """±1 dot product of two packed vectors."""
    return a.logical_len - 2 * raw_bitcount(a, w)


@dataclass(frozen=True)
class PackedConvWeights:
    """Per-output-channel packed ``[c_in, k_h, k_w]`` sign filters."""

    rows: np.ndarray  # [c_out, words] uint64
    shape: tuple  # (c_out, c_in, k_h, k_w)

    @classmethod
    def from_signs(cls, w_bin) -> "PackedConvWeights":
        w_bin = np.asarray(w_bin)
        _check_signs(w_bin)
        flat = w_bin.reshape(w_bin.shape[0], -1)
        return cls(_pack_rows((flat > 0).astype(np.uint8)), tuple(w_bin.shape))


def _batched_bits(a, in_shape):
    in_shape = tuple(in_shape)
    single = len(in_shape) == 3
    if single:
        in_shape = (1, *in_shape)
    if len(in_shape) != 4:
        raise BnnError("incompatible-shapes", f"activation shape {in_shape}")
    if isinstance(a, PackedBits):
        if a.logical_len != int(np.prod(in_shape)):
            raise BnnError("incompatible-shapes", f"{a.logical_len} bits for shape {in_shape}")
        bits = unpack_bits(a).reshape(in_shape)
    else:
        bits = np.asarray(a, dtype=np.uint8).reshape(in_shape)
    return bits, single


def _xnor_rows(act_words, mask_words, n_valid, w_rows, chunk=4096):
    """dot[i, o] = n_valid[i] - 2 * popcount((act[i] ^ w[o]) & mask[i])."""
    out = np.empty((act_words.shape[0], w_rows.shape[0]), dtype=np.int64)
    for start in range(0, act_words.shape[0], chunk):
        a = act_words[start:start + chunk, None, :]
        m = mask_words[start:start + chunk, None, :]
        mism = _popcount((a ^ w_rows[None, :, :]) & m).sum(axis=-1)
        out[start:start + chunk] = n_valid[start:start + chunk, None] - 2 * mism
    return out


def packed_conv2d(a, in_shape, w: PackedConvWeights, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Binary convolution via XNOR + popcount.

    ``a`` is a :class:`PackedBits` of a ±1 activation laid out ``in_shape``
    (``[c,h,w]`` or ``[n,c,h,w]``). Returns float32 integer values with the
    same rank as ``in_shape``.
    """
    bits, single = _batched_bits(a, in_shape)
    n, c, h, wd = bits.shape
    c_out, c_in, k_h, k_w = w.shape
    if c != c_in:
        raise BnnError("incompatible-shapes", f"input has {c} channels, weight expects {c_in}")
    out_h = conv_output_size(h, k_h, stride, padding)
    out_w = conv_output_size(wd, k_w, stride, padding)
    k = c_in * k_h * k_w
    act = im2col(bits, k_h, k_w, stride, padding).reshape(-1, k)
    valid = im2col(np.ones((1, c, h, wd), dtype=np.uint8), k_h, k_w, stride, padding).reshape(-1, k)
    act_words = _pack_rows(act)
    valid_words = np.tile(_pack_rows(valid), (n, 1))
    n_valid = np.tile(valid.sum(axis=1, dtype=np.int64), n)
    dots = _xnor_rows(act_words, valid_words, n_valid, w.rows)
    out = np.ascontiguousarray(dots.reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2)).astype(DTYPE)
    return out[0] if single else out


def packed_linear(a, in_shape, w: PackedConvWeights) -> np.ndarray:
    """``[n, in]`` ±1 activations times ``[out, in]`` ±1 weights."""
    n, k = in_shape
    bits = unpack_bits(a).reshape(n, k) if isinstance(a, PackedBits) else np.asarray(a, np.uint8)
    act_words = _pack_rows(bits)
    mask = np.tile(_tail_mask(k), (n, 1))
    return _xnor_rows(act_words, mask, np.full(n, k, dtype=np.int64), w.rows).astype(DTYPE)


# ------------------------------------------------------------------ CBNP file

PACKED_MAGIC = b"CBNP"
PACKED_VERSION = 1
ENC_SIGN_BITS = 0
ENC_FLOAT32 = 1


@dataclass
class PackedModel:
    floats: dict  # name -> float32 array
    packed: dict  # name -> (PackedBits, shape)


def pack_network(records: dict[str, np.ndarray], binary_weight_names) -> PackedModel:
    """Standardize and binarize the named weights; keep every other record as float32."""
    binary_weight_names = set(binary_weight_names)
    floats, packed = {}, {}
    for name, arr in records.items():
        if name in binary_weight_names:
            w_bin = sign(standardize(arr))
            packed[name] = (pack(w_bin), tuple(arr.shape))
        else:
            floats[name] = np.asarray(arr, dtype=np.float32)
    return PackedModel(floats, packed)


def write_packed_model(path, model: PackedModel):
    """Serialize ``model``; see ``docs/formats.md`` for the byte layout."""
    entries = []
    for name, arr in model.floats.items():
        entries.append((name, ENC_FLOAT32, arr.shape, np.ascontiguousarray(arr, dtype="<f4").tobytes()))
    for name, (bits, shape) in model.packed.items():
        entries.append((name, ENC_SIGN_BITS, shape, bits.words.astype("<u8").tobytes()))
    entries.sort(key=lambda e: e[0])
    # u16 name length + name + u8 encoding + u8 rank + dims + u64 offset + u64 length
    offset = 12 + sum(2 + len(name.encode("utf-8")) + 2 + 8 * len(shape) + 16 for name, _, shape, _ in entries)
    header = bytearray(PACKED_MAGIC + struct.pack("<II", PACKED_VERSION, len(entries)))
    table = bytearray()
    for name, enc, shape, payload in entries:
        raw = name.encode("utf-8")
        table += struct.pack("<H", len(raw)) + raw + struct.pack("<BB", enc, len(shape))
        table += struct.pack(f"<{len(shape)}Q", *shape) + struct.pack("<QQ", offset, len(payload))
        offset += len(payload)
    with open(path, "wb") as f:
        f.write(header + table)
        for *_, payload in entries:
            f.write(payload)


def read_packed_model(path) -> PackedModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != PACKED_MAGIC:
        raise BnnError("bad-packed-magic")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != PACKED_VERSION:
            raise BnnError("bad-packed-version", str(version))
        pos = 12
        floats, packed = {}, {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            enc, rank = struct.unpack_from("<BB", data, pos)
            shape = struct.unpack_from(f"<{rank}Q", data, pos + 2)
            pos += 2 + 8 * rank
            offset, length = struct.unpack_from("<QQ", data, pos)
            pos += 16
            if offset + length > len(data):
                raise BnnError("truncated-file", name)
            count_el = int(np.prod(shape))
            if enc == ENC_FLOAT32:
                floats[name] = np.frombuffer(data, "<f4", count_el, offset).reshape(shape).astype(np.float32)
            elif enc == ENC_SIGN_BITS:
                words = np.frombuffer(data, "<u8", length // 8, offset).astype(np.uint64)
                packed[name] = (PackedBits(words, count_el), tuple(shape))
            else:
                raise BnnError("bad-packed-encoding", f"{name}: {enc}")
    except struct.error as exc:
        raise BnnError("truncated-file", str(exc)) from None
    return PackedModel(floats, packed)


# ------------------------------------------------------------------ inference

def packed_forward(net: Network, model: PackedModel, x: np.ndarray) -> np.ndarray:
    """Inference-mode forward pass running binary layers on packed operands.

    Non-binary layers use ``net`` as-is, so ``net`` must already hold the
    model's full-precision parameters and buffers.
    """
    ctx = PrecisionContext()
    for layer in net.layers:
        s = layer.spec
        if s.kind == "binary_conv":
            bits, _ = model.packed[layer.weight.name]
            w = PackedConvWeights.from_signs(unpack(bits, layer.weight.real.shape))
            x = packed_conv2d((x >= 0).astype(np.uint8), x.shape, w, s.stride, s.padding)
        elif s.kind == "binary_linear":
            bits, _ = model.packed[layer.weight.name]
            w = PackedConvWeights.from_signs(unpack(bits, layer.weight.real.shape))
            x = packed_linear((x >= 0).astype(np.uint8), x.shape, w) + layer.bias.real
        else:
            x = layer.forward(x, ctx, training=False)
    return x
