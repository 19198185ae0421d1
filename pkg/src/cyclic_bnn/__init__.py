"""Binary neural networks trained with a cyclic backward-precision schedule.

Forward passes binarize weights and activations to ±1; backward passes use
fake-quantized gradients whose activation precision follows a per-epoch
cyclic schedule. Trained models can be bit-packed and evaluated with an
XNOR/popcount kernel that reproduces the float path exactly.
"""

from .errors import BnnError
from .quant import GaussianFit, QEConfig, QuantSpec, quantization_error, quantize, sign, standardize
from .schedule import CycleConfig, LrConfig, lr_at, precision_at
from .tensor import conv2d_ref, matmul, stats

__all__ = [
    "BnnError", "GaussianFit", "QEConfig", "QuantSpec", "quantization_error", "quantize", "sign",
    "standardize", "CycleConfig", "LrConfig", "lr_at", "precision_at", "conv2d_ref", "matmul", "stats",
]
