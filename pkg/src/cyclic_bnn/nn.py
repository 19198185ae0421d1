"""Layers with hand-written backward passes.

Binary layers binarize both operands in the forward pass (weights are first
standardized) and run the backward pass at reduced precision: the incoming
gradient is fake-quantized to ``grad_bits`` and the activation derivative is
the piecewise-polynomial surrogate evaluated at the activation quantized to
the scheduled ``backward_bits``. Weight gradients pass straight through the
binarization and the standardization.
"""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import BnnError
from .quant import QuantSpec, quantize, sign, standardize
from .tensor import (DTYPE, conv2d_grad_input, conv2d_grad_weight, conv2d_ref,
                     conv_output_size)


@dataclass
class Parameter:
    name: str
    real: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.real)

    def zero_grad(self):
        self.grad = np.zeros_like(self.real)


@dataclass(frozen=True)
class PrecisionContext:
    """Precision used by binary layers for one epoch.

    ``grad_bits=None`` disables fake quantization of incoming gradients.
    """

    backward_bits: int = 8
    grad_bits: int | None = 8
    act_min: float = -1.0
    act_max: float = 1.0
    grad_quant_mode: Literal["per-tensor-symmetric"] = "per-tensor-symmetric"

    def __post_init__(self):
        if not 1 <= self.backward_bits <= 8:
            raise BnnError("invalid-precision", f"backward_bits={self.backward_bits}")
        if self.grad_bits is not None and not 1 <= self.grad_bits <= 32:
            raise BnnError("invalid-precision", f"grad_bits={self.grad_bits}")

    @property
    def act_spec(self) -> QuantSpec:
        return QuantSpec(self.backward_bits, self.act_min, self.act_max)


@dataclass
class BinaryCache:
    """Operands a binary layer keeps for its backward pass."""

    w_std: np.ndarray
    w_bin: np.ndarray
    a_1: np.ndarray
    a_ps: np.ndarray


# ---------------------------------------------------------------- elementwise

def surrogate_grad(a):
    """2 + 2a on [-1, 0), 2 - 2a on [0, 1), 0 elsewhere."""
    a = np.asarray(a)
    out = np.where((a >= -1) & (a < 0), 2 + 2 * a, np.where((a >= 0) & (a < 1), 2 - 2 * a, 0.0))
    return float(out) if out.ndim == 0 else out.astype(a.dtype if a.dtype.kind == "f" else DTYPE)


def hardtanh_forward(a: np.ndarray) -> np.ndarray:
    return np.clip(a, -1.0, 1.0)


def hardtanh_backward(upstream: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.where((a > -1.0) & (a < 1.0), upstream, 0.0).astype(upstream.dtype)


def quantize_gradient(g: np.ndarray, bits: int | None) -> np.ndarray:
    """Per-tensor symmetric fake quantization on ``[-max|g|, max|g|]``."""
    if bits is None:
        return g
    gmax = float(np.max(np.abs(g))) if g.size else 0.0
    if gmax == 0.0:
        return np.zeros_like(g)
    return quantize(g, QuantSpec(bits, -gmax, gmax))


def binarize_weights(p: Parameter) -> tuple[np.ndarray, np.ndarray]:
    w_std = standardize(p.real)
    return w_std, sign(w_std)


# ---------------------------------------------------------------- binary conv

def binary_conv_forward(a_32: np.ndarray, p: Parameter, ctx: PrecisionContext,
                        stride: int = 1, padding: int = 0) -> tuple[np.ndarray, BinaryCache]:
    """Sign-activation, sign-weight convolution emulated in float arithmetic."""
    w_std, w_bin = binarize_weights(p)
    a_1 = sign(a_32)
    out = conv2d_ref(a_1, w_bin, stride, padding)
    cache = BinaryCache(w_std, w_bin, a_1, quantize(a_32, ctx.act_spec))
    return out, cache


def binary_conv_backward(upstream: np.ndarray, cache: BinaryCache | None, ctx: PrecisionContext,
                         stride: int = 1, padding: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if cache is None:
        raise BnnError("stale-cache")
    g = quantize_gradient(upstream, ctx.grad_bits)
    grad_weight = conv2d_grad_weight(cache.a_1, g, cache.w_bin.shape, stride, padding)
    grad_a1 = conv2d_grad_input(g, cache.w_bin, cache.a_1.shape, stride, padding)
    return grad_a1 * surrogate_grad(cache.a_ps), grad_weight


def binary_linear_forward(a_32: np.ndarray, p: Parameter, ctx: PrecisionContext):
    w_std, w_bin = binarize_weights(p)
    a_1 = sign(a_32)
    return a_1 @ w_bin.T, BinaryCache(w_std, w_bin, a_1, quantize(a_32, ctx.act_spec))


def binary_linear_backward(upstream: np.ndarray, cache: BinaryCache | None, ctx: PrecisionContext):
    if cache is None:
        raise BnnError("stale-cache")
    g = quantize_gradient(upstream, ctx.grad_bits)
    return (g @ cache.w_bin) * surrogate_grad(cache.a_ps), g.T @ cache.a_1


# ---------------------------------------------------------------- batch norm

def _bn_axes(a: np.ndarray):
    if a.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if a.ndim == 2:
        return (0,), (1, -1)
    raise BnnError("incompatible-shapes", f"batchnorm expects [n,c] or [n,c,h,w], got {a.shape}")


def batchnorm_forward(a, gamma, beta, running_mean, running_var, eps=1e-5, momentum=0.1,
                      training=True):
    """Per-channel batch normalization.

    Returns ``(out, cache)``; in training mode ``running_mean``/``running_var``
    are updated in place (unbiased variance, PyTorch convention).
    """
    axes, bshape = _bn_axes(a)
    if a.shape[1] != gamma.shape[0]:
        raise BnnError("incompatible-shapes", f"{a.shape[1]} channels vs {gamma.shape[0]} gammas")
    count = a.size // a.shape[1]
    if training:
        if count == 1 and eps == 0:
            raise BnnError("degenerate-batch")
        mean = a.mean(axis=axes)
        var = a.var(axis=axes)
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (a - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * x_hat + beta.reshape(bshape)
    return out.astype(a.dtype), (x_hat, inv_std, gamma, training)


def batchnorm_backward(upstream, cache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    x_hat, inv_std, gamma, training = cache
    axes, bshape = _bn_axes(upstream)
    grad_gamma = (upstream * x_hat).sum(axis=axes)
    grad_beta = upstream.sum(axis=axes)
    g_hat = upstream * gamma.reshape(bshape)
    if not training:
        return (g_hat * inv_std.reshape(bshape)).astype(upstream.dtype), grad_gamma, grad_beta
    count = upstream.size // upstream.shape[1]
    grad = (inv_std.reshape(bshape) / count) * (
        count * g_hat
        - g_hat.sum(axis=axes).reshape(bshape)
        - x_hat * (g_hat * x_hat).sum(axis=axes).reshape(bshape)
    )
    return grad.astype(upstream.dtype), grad_gamma, grad_beta


# ---------------------------------------------------------------- loss

def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient ``(softmax - onehot) / b``."""
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise BnnError("bad-label")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_z
    loss = float(-log_p[np.arange(b), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(b), labels] -= 1.0
    return loss, (grad / b).astype(logits.dtype)


# ---------------------------------------------------------------- layers

LayerKind = Literal["fp_conv", "binary_conv", "fp_linear", "binary_linear",
                    "batchnorm", "hardtanh", "maxpool", "flatten"]


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    out_features: int = 0  # channels for convs, units for linears
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    eps: float = 1e-5
    momentum: float = 0.1

    @property
    def is_binary(self) -> bool:
        return self.kind in ("binary_conv", "binary_linear")

    @property
    def has_macs(self) -> bool:
        return self.kind in ("fp_conv", "binary_conv", "fp_linear", "binary_linear")


class Layer:
    spec: LayerSpec

    def __init__(self, spec: LayerSpec, name: str):
        self.spec = spec
        self.name = name
        self.cache = None

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, in_shape):
        return in_shape

    def _take_cache(self):
        if self.cache is None:
            raise BnnError("stale-cache", self.name)
        cache, self.cache = self.cache, None
        return cache


def _kaiming(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DTYPE)


class Conv(Layer):
    def __init__(self, spec, name, in_shape, rng):
        super().__init__(spec, name)
        c_in = in_shape[0]
        k = spec.kernel
        self.weight = Parameter(f"{name}.weight", _kaiming(rng, (spec.out_features, c_in, k, k), c_in * k * k))
        self.in_shape = tuple(in_shape)

    def parameters(self):
        return [self.weight]

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.weight.real.shape[1]:
            raise BnnError("incompatible-shapes", f"{self.name}: {c} input channels")
        s = self.spec
        return (s.out_features, conv_output_size(h, s.kernel, s.stride, s.padding),
                conv_output_size(w, s.kernel, s.stride, s.padding))

    def forward(self, x, ctx, training=True):
        s = self.spec
        if s.kind == "binary_conv":
            out, self.cache = binary_conv_forward(x, self.weight, ctx, s.stride, s.padding)
            return out
        self.cache = x
        return conv2d_ref(x, self.weight.real, s.stride, s.padding)

    def backward(self, g, ctx):
        s = self.spec
        cache = self._take_cache()
        if s.kind == "binary_conv":
            grad_in, grad_w = binary_conv_backward(g, cache, ctx, s.stride, s.padding)
        else:
            grad_w = conv2d_grad_weight(cache, g, self.weight.real.shape, s.stride, s.padding)
            grad_in = conv2d_grad_input(g, self.weight.real, cache.shape, s.stride, s.padding)
        self.weight.grad += grad_w
        return grad_in


class Linear(Layer):
    def __init__(self, spec, name, in_shape, rng):
        super().__init__(spec, name)
        (n_in,) = in_shape
        self.weight = Parameter(f"{name}.weight", _kaiming(rng, (spec.out_features, n_in), n_in))
        self.bias = Parameter(f"{name}.bias", np.zeros(spec.out_features, dtype=DTYPE))

    def parameters(self):
        return [self.weight, self.bias]

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.weight.real.shape[1],):
            raise BnnError("incompatible-shapes", f"{self.name}: input {in_shape}")
        return (self.spec.out_features,)

    def forward(self, x, ctx, training=True):
        if self.spec.kind == "binary_linear":
            out, self.cache = binary_linear_forward(x, self.weight, ctx)
        else:
            self.cache = x
            out = x @ self.weight.real.T
        return out + self.bias.real

    def backward(self, g, ctx):
        cache = self._take_cache()
        if self.spec.kind == "binary_linear":
            grad_in, grad_w = binary_linear_backward(g, cache, ctx)
        else:
            grad_in, grad_w = g @ self.weight.real, g.T @ cache
        self.weight.grad += grad_w
        self.bias.grad += g.sum(axis=0)
        return grad_in


class BatchNorm(Layer):
    def __init__(self, spec, name, in_shape, rng=None):
        super().__init__(spec, name)
        c = in_shape[0]
        self.gamma = Parameter(f"{name}.weight", np.ones(c, dtype=DTYPE))
        self.beta = Parameter(f"{name}.bias", np.zeros(c, dtype=DTYPE))
        self.running_mean = np.zeros(c, dtype=DTYPE)
        self.running_var = np.ones(c, dtype=DTYPE)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def forward(self, x, ctx, training=True):
        out, self.cache = batchnorm_forward(x, self.gamma.real, self.beta.real, self.running_mean,
                                            self.running_var, self.spec.eps, self.spec.momentum, training)
        return out

    def backward(self, g, ctx):
        grad, gg, gb = batchnorm_backward(g, self._take_cache())
        self.gamma.grad += gg
        self.beta.grad += gb
        return grad


class Hardtanh(Layer):
    def __init__(self, spec, name, in_shape=None, rng=None):
        super().__init__(spec, name)

    def forward(self, x, ctx, training=True):
        self.cache = x
        return hardtanh_forward(x)

    def backward(self, g, ctx):
        return hardtanh_backward(g, self._take_cache())


class MaxPool(Layer):
    def __init__(self, spec, name, in_shape=None, rng=None):
        super().__init__(spec, name)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        k = self.spec.kernel
        if h < k or w < k:
            raise BnnError("kernel-too-large", self.name)
        return (c, h // k, w // k)

    def forward(self, x, ctx, training=True):
        k = self.spec.kernel
        n, c, h, w = x.shape
        ho, wo = h // k, w // k
        win = x[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, ho, wo, k * k)
        idx = win.argmax(axis=-1)
        self.cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, g, ctx):
        idx, shape = self._take_cache()
        k = self.spec.kernel
        n, c, h, w = shape
        ho, wo = h // k, w // k
        win = np.zeros((n, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(win, idx[..., None], g[..., None], axis=-1)
        win = win.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        grad = np.zeros(shape, dtype=g.dtype)
        grad[:, :, :ho * k, :wo * k] = win
        return grad


class Flatten(Layer):
    def __init__(self, spec, name, in_shape=None, rng=None):
        super().__init__(spec, name)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx, training=True):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g, ctx):
        return g.reshape(self._take_cache())


_LAYER_TYPES = {
    "fp_conv": Conv, "binary_conv": Conv, "fp_linear": Linear, "binary_linear": Linear,
    "batchnorm": BatchNorm, "hardtanh": Hardtanh, "maxpool": MaxPool, "flatten": Flatten,
}


class Network:
    """Sequential stack of layers built from :class:`LayerSpec` entries."""

    def __init__(self, specs, input_shape, seed=0, allow_binary_ends=False):
        specs = list(specs)
        mac_layers = [s for s in specs if s.has_macs]
        if not allow_binary_ends and mac_layers and (mac_layers[0].is_binary or mac_layers[-1].is_binary):
            raise BnnError("binary-end-layer", "first and last MAC layers must be full precision")
        rng = np.random.default_rng(seed)
        self.specs = specs
        self.input_shape = tuple(input_shape)
        self.layers: list[Layer] = []
        self.shapes = [self.input_shape]
        shape = self.input_shape
        for i, spec in enumerate(specs):
            layer = _LAYER_TYPES[spec.kind](spec, f"{i}.{spec.kind}", shape, rng)
            shape = layer.output_shape(shape)
            self.layers.append(layer)
            self.shapes.append(shape)

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def state(self) -> dict[str, np.ndarray]:
        """Latent parameters and buffers, in layer order."""
        out = {}
        for layer in self.layers:
            for p in layer.parameters():
                out[p.name] = p.real
            out.update(layer.buffers())
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        mine = self.state()
        if set(mine) != set(state):
            raise BnnError("architecture-mismatch", f"missing/unexpected: {sorted(set(mine) ^ set(state))}")
        for name, arr in mine.items():
            if arr.shape != state[name].shape:
                raise BnnError("architecture-mismatch", f"{name}: {state[name].shape} vs {arr.shape}")
            arr[...] = state[name]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x, ctx: PrecisionContext, training=True) -> np.ndarray:
        for layer in self.layers:
            layer.cache = None
        for layer in self.layers:
            x = layer.forward(x, ctx, training)
        return x

    def backward(self, grad_logits, ctx: PrecisionContext):
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g, ctx)
        return g


def convnet_small_specs(num_classes: int, binarize_first_last: bool = False) -> list[LayerSpec]:
    first = "binary_conv" if binarize_first_last else "fp_conv"
    last = "binary_linear" if binarize_first_last else "fp_linear"
    return [
        LayerSpec(first, 16), LayerSpec("batchnorm"), LayerSpec("hardtanh"),
        LayerSpec("binary_conv", 32), LayerSpec("batchnorm"), LayerSpec("hardtanh"),
        LayerSpec("maxpool", kernel=2, stride=2, padding=0),
        LayerSpec("binary_conv", 64), LayerSpec("batchnorm"), LayerSpec("hardtanh"),
        LayerSpec("maxpool", kernel=2, stride=2, padding=0),
        LayerSpec("flatten"), LayerSpec(last, num_classes),
    ]


ARCHITECTURES = {"convnet-small": convnet_small_specs}


def build_network(arch: str, input_shape, num_classes: int, seed: int = 0,
                  binarize_first_last: bool = False) -> Network:
    if arch not in ARCHITECTURES:
        raise BnnError("unknown-architecture", arch)
    specs = ARCHITECTURES[arch](num_classes, binarize_first_last)
    return Network(specs, input_shape, seed, allow_binary_ends=binarize_first_last)
