"""Quantization math: sign binarizer, static lattice quantizer, weight
standardization and the numerical quantization-error integral.
"""

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import BnnError
from .tensor import stats


@dataclass(frozen=True)
class QuantSpec:
    """``bits`` bits spread uniformly over ``[min, max]`` (2**bits lattice points)."""

    bits: int
    min: float
    max: float

    def __post_init__(self):
        if not (1 <= self.bits <= 32) or not (self.min < self.max) \
                or not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise BnnError("invalid-quant-spec", repr(self))

    @property
    def levels(self) -> int:
        return 2 ** self.bits - 1

    @property
    def step(self) -> float:
        return (self.max - self.min) / self.levels


def sign(x):
    """-1 for x < 0, +1 for x >= 0. Works on scalars and arrays."""
    a = np.asarray(x)
    if np.isnan(a).any():
        raise BnnError("non-finite-input")
    out = np.where(a < 0, -1.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out.astype(a.dtype if a.dtype.kind == "f" else np.float32)


def _lattice(x, spec: QuantSpec):
    n = spec.levels
    span = spec.max - spec.min
    k = np.floor((x - spec.min) * n / span + 0.5)
    return spec.min + k * span / n


def quantize(x, spec: QuantSpec, clamp: bool = True):
    """Round ``x`` to the nearest point of the ``spec`` lattice.

    With ``clamp`` (the default) inputs are first clipped to ``[min, max]`` so
    the result is always one of the ``2**bits`` lattice points. ``clamp=False``
    evaluates the rounding formula as-is, which extends the lattice past the
    endpoints with the same spacing.

    At ``bits=1`` over ``[-1, 1]`` this coincides with :func:`sign` for every
    ``x != 0`` whose magnitude exceeds float64 resolution around 1.
    """
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise BnnError("non-finite-input")
    if clamp:
        a = np.clip(a, spec.min, spec.max)
    q = _lattice(a, spec)
    if q.ndim == 0:
        return float(q)
    src = np.asarray(x)
    return q.astype(src.dtype) if src.dtype.kind == "f" else q


def standardize(w: np.ndarray) -> np.ndarray:
    """Scale weights to unit (population) standard deviation; no mean subtraction."""
    w = np.asarray(w)
    _, sigma = stats(w)
    if sigma == 0.0:
        raise BnnError("zero-variance-weights")
    dtype = w.dtype if w.dtype.kind == "f" else np.float32
    return (w / sigma).astype(dtype)


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    mean: float
    sigma: float

    def __post_init__(self):
        if not (self.amplitude > 0 and self.sigma > 0):
            raise BnnError("invalid-gaussian-fit", repr(self))

    def __call__(self, w):
        return self.amplitude * np.exp(-((w - self.mean) ** 2) / (2.0 * self.sigma ** 2))


@dataclass(frozen=True)
class QEConfig:
    """Settings for :func:`quantization_error`.

    ``lo``/``hi`` bound the integration; ``quant_min``/``quant_max`` define the
    quantizer lattice. The defaults integrate over [-15, 15], wide enough to
    hold any trained weight, with the lattice on [-1, 1] left unclamped; this
    reproduces the reference table in ``tests/data/reference_qe_table.csv``.
    ``density_at`` selects whether the fitted density is evaluated at the
    quantized weight (``"quantized"``) or at the latent weight (``"latent"``).
    """

    alpha: float = 1.0
    lo: float = -15.0
    hi: float = 15.0
    steps: int = 300_000
    quant_min: float = -1.0
    quant_max: float = 1.0
    clamp: bool = False
    density_at: Literal["quantized", "latent"] = "quantized"

    def __post_init__(self):
        if not (self.lo < self.hi) or self.steps < 1000:
            raise BnnError("invalid-qe-config", f"lo={self.lo}, hi={self.hi}, steps={self.steps}")
        if self.density_at not in ("quantized", "latent"):
            raise BnnError("invalid-qe-config", f"density_at={self.density_at!r}")


def quantization_error(fit: GaussianFit, bits: int, qcfg: QEConfig = QEConfig()) -> float:
    """Composite-midpoint estimate of
    ``integral f(.) * (Q(w) - alpha * sign(Q(w)))**2 dw`` over ``[lo, hi]``.

    ``f`` is the unnormalized fitted Gaussian (amplitude included).
    """
    spec = QuantSpec(bits, qcfg.quant_min, qcfg.quant_max)
    h = (qcfg.hi - qcfg.lo) / qcfg.steps
    w = qcfg.lo + (np.arange(qcfg.steps, dtype=np.float64) + 0.5) * h
    q = quantize(w, spec, clamp=qcfg.clamp)
    density = fit(q if qcfg.density_at == "quantized" else w)
    sq = (q - qcfg.alpha * np.where(q < 0, -1.0, 1.0)) ** 2
    total = float(np.sum(density * sq) * h)
    if not math.isfinite(total):
        raise BnnError("integration-failure")
    return total


def quantization_error_table(fits, bits_list, qcfg: QEConfig = QEConfig()) -> np.ndarray:
    """``table[i, j] = quantization_error(fits[j], bits_list[i])``."""
    return np.array([[quantization_error(f, b, qcfg) for f in fits] for b in bits_list])


# Gaussian fits (amplitude, mean, sigma) of the sixteen binarized convolution
# weight histograms of a trained ResNet-18, in layer order a..p.
RESNET18_LAYER_FITS = tuple(GaussianFit(*t) for t in (
    (0.50, -0.11, 0.38), (0.57, 0.14, 0.35), (0.66, 0.05, 0.30), (0.67, -0.05, 0.28),
    (0.61, -0.15, 0.29), (0.57, -0.04, 0.37), (0.64, 0.11, 0.34), (0.58, -0.20, 0.38),
    (0.49, -0.19, 0.47), (0.42, -0.08, 0.61), (0.40, 0.17, 0.67), (0.41, 0.15, 0.65),
    (0.42, 0.13, 0.60), (0.35, 0.09, 0.70), (0.40, 0.14, 0.57), (0.39, -0.02, 0.59),
))
