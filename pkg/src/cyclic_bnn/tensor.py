"""Dense tensor substrate.

Tensors are plain ``numpy.ndarray`` objects, row-major, ``float32`` by default.
The helpers here are the ground truth every other module is checked against:
a reference 2-D convolution (im2col + matrix product), its two adjoints, a
validated matrix product and population statistics.

Functions never mutate their arguments. Summation inside the matrix products
is delegated to BLAS, which is deterministic run-to-run for a fixed shape on a
fixed platform; integer-valued products (the binary path) are exact in
``float32`` as long as every partial sum stays below 2**24.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BnnError

DTYPE = np.float32


def as_tensor(values, shape=None) -> np.ndarray:
    """Copy ``values`` into a fresh float32 array, optionally reshaped."""
    t = np.array(values, dtype=DTYPE)
    if shape is not None:
        if math.prod(shape) != t.size:
            raise BnnError("incompatible-shapes", f"{t.size} values for shape {tuple(shape)}")
        t = t.reshape(shape)
    if any(d < 1 for d in t.shape):
        raise BnnError("incompatible-shapes", f"non-positive dimension in {t.shape}")
    return t


def _work_dtype(*arrays):
    return np.result_type(*(a.dtype for a in arrays), DTYPE)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    if stride < 1 or padding < 0:
        raise BnnError("incompatible-shapes", f"stride={stride}, padding={padding}")
    if kernel > size + 2 * padding:
        raise BnnError("kernel-too-large", f"kernel {kernel} > padded input {size + 2 * padding}")
    return (size + 2 * padding - kernel) // stride + 1


def _batched(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise BnnError("incompatible-shapes", f"conv input must be [c,h,w] or [n,c,h,w], got {x.shape}")


def _check_conv(x: np.ndarray, weight: np.ndarray):
    if weight.ndim != 4:
        raise BnnError("incompatible-shapes", f"conv weight must be [c_out,c_in,k_h,k_w], got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise BnnError("incompatible-shapes", f"input has {x.shape[1]} channels, weight expects {weight.shape[1]}")


def im2col(x: np.ndarray, k_h: int, k_w: int, stride: int, padding: int) -> np.ndarray:
    """Patches of a batched input as ``[n, h', w', c*k_h*k_w]`` (channel-major per patch)."""
    n, c, h, w = x.shape
    out_h = conv_output_size(h, k_h, stride, padding)
    out_w = conv_output_size(w, k_w, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k_h, k_w), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :out_h, :out_w]
    # [n, c, h', w', kh, kw] -> [n, h', w', c, kh, kw]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, out_h, out_w, c * k_h * k_w)


def conv2d_ref(x: np.ndarray, weight: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded cross-correlation, ``out[o,y,x] = sum_{i,u,v} in[i, y*s-p+u, x*s-p+v] * w[o,i,u,v]``.

    Accepts ``[c,h,w]`` or ``[n,c,h,w]`` input and returns the matching rank.
    """
    xb, single = _batched(np.asarray(x))
    weight = np.asarray(weight)
    _check_conv(xb, weight)
    dtype = _work_dtype(xb, weight)
    c_out, _, k_h, k_w = weight.shape
    cols = im2col(xb.astype(dtype, copy=False), k_h, k_w, stride, padding)
    n, out_h, out_w, k = cols.shape
    out = cols.reshape(-1, k) @ weight.astype(dtype, copy=False).reshape(c_out, k).T
    out = np.ascontiguousarray(out.reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2))
    return out[0] if single else out


def conv2d_grad_weight(x: np.ndarray, upstream: np.ndarray, kernel_shape, stride: int = 1,
                       padding: int = 0) -> np.ndarray:
    """Gradient of ``conv2d_ref(x, w)`` w.r.t. ``w`` given ``upstream = dL/dout``."""
    xb, _ = _batched(np.asarray(x))
    gb, _ = _batched(np.asarray(upstream))
    c_out, c_in, k_h, k_w = kernel_shape
    dtype = _work_dtype(xb, gb)
    cols = im2col(xb.astype(dtype, copy=False), k_h, k_w, stride, padding)
    k = cols.shape[-1]
    g = gb.astype(dtype, copy=False).transpose(1, 0, 2, 3).reshape(c_out, -1)
    return (g @ cols.reshape(-1, k)).reshape(c_out, c_in, k_h, k_w)


def conv2d_grad_input(upstream: np.ndarray, weight: np.ndarray, input_shape, stride: int = 1,
                      padding: int = 0) -> np.ndarray:
    """Gradient of ``conv2d_ref(x, w)`` w.r.t. ``x`` (col2im scatter of ``upstream @ w``)."""
    gb, single = _batched(np.asarray(upstream))
    weight = np.asarray(weight)
    c_out, c_in, k_h, k_w = weight.shape
    if len(input_shape) == 3:
        input_shape = (1, *input_shape)
    n, _, h, w = input_shape
    dtype = _work_dtype(gb, weight)
    _, _, out_h, out_w = gb.shape
    g = gb.astype(dtype, copy=False).transpose(0, 2, 3, 1).reshape(-1, c_out)
    dcols = (g @ weight.astype(dtype, copy=False).reshape(c_out, -1)).reshape(n, out_h, out_w, c_in, k_h, k_w)
    padded = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding), dtype=dtype)
    for u in range(k_h):
        for v in range(k_w):
            padded[:, :, u:u + stride * out_h:stride, v:v + stride * out_w:stride] += \
                dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    grad = padded[:, :, padding:padding + h, padding:padding + w]
    grad = np.ascontiguousarray(grad)
    return grad[0] if single else grad


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise BnnError("incompatible-shapes", f"cannot multiply {a.shape} by {b.shape}")
    dtype = _work_dtype(a, b)
    return a.astype(dtype, copy=False) @ b.astype(dtype, copy=False)


def stats(t) -> tuple[float, float]:
    """Mean and population standard deviation (divisor n), accumulated in float64."""
    v = np.asarray(t, dtype=np.float64).ravel()
    if v.size == 0:
        raise BnnError("empty-tensor")
    mean = float(v.sum() / v.size)
    std = math.sqrt(float(((v - mean) ** 2).sum() / v.size))
    return mean, std


def check_finite(t: np.ndarray, code: str = "non-finite-input") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise BnnError(code)
    return t
