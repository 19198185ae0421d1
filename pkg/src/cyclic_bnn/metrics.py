"""Training-cost accounting: raw and bit-width-adjusted MAC counts, memory ratio."""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Literal

from .errors import BnnError
from .nn import LayerSpec, Network
from .tensor import conv_output_size


def layer_macs(spec: LayerSpec, in_shape) -> int:
    """Multiply-accumulates of one forward pass over a single sample."""
    in_shape = tuple(in_shape)
    if any(d < 1 for d in in_shape):
        raise BnnError("incompatible-shapes", f"{in_shape}")
    if spec.kind in ("fp_conv", "binary_conv"):
        if len(in_shape) != 3:
            raise BnnError("incompatible-shapes", f"conv input {in_shape}")
        c_in, h, w = in_shape
        out_h = conv_output_size(h, spec.kernel, spec.stride, spec.padding)
        out_w = conv_output_size(w, spec.kernel, spec.stride, spec.padding)
        return spec.out_features * out_h * out_w * c_in * spec.kernel * spec.kernel
    if spec.kind in ("fp_linear", "binary_linear"):
        if len(in_shape) != 1:
            raise BnnError("incompatible-shapes", f"linear input {in_shape}")
        return in_shape[0] * spec.out_features
    return 0


@dataclass(frozen=True)
class MacEntry:
    layer: str
    macs: int
    bit_a: int
    bit_b: int
    multiplicity: int = 1

    def __post_init__(self):
        if self.macs < 0 or self.multiplicity < 0 or not (1 <= self.bit_a <= 32 and 1 <= self.bit_b <= 32):
            raise BnnError("invalid-mac-entry", repr(self))


@dataclass
class MacLedger:
    entries: list[MacEntry] = field(default_factory=list)

    def add(self, *args, **kwargs):
        self.entries.append(MacEntry(*args, **kwargs))


def training_macs(ledger: MacLedger) -> float:
    """Sum of ``macs * multiplicity * (bit_a/32) * (bit_b/32)``."""
    return sum(e.macs * e.multiplicity * (e.bit_a / 32) * (e.bit_b / 32) for e in ledger.entries)


@dataclass(frozen=True)
class MemoryLedger:
    used_bytes: float
    baseline_bytes: float


def memory_usage(ledger: MemoryLedger) -> float:
    if ledger.baseline_bytes <= 0:
        raise BnnError("zero-baseline")
    return ledger.used_bytes / ledger.baseline_bytes


def network_macs(net: Network) -> list[tuple[str, int, bool]]:
    """``(layer name, per-sample forward MACs, is binary)`` for every MAC layer."""
    return [
        (layer.name, layer_macs(layer.spec, shape), layer.spec.is_binary)
        for layer, shape in zip(net.layers, net.shapes)
        if layer.spec.has_macs
    ]


def memory_ledger(net: Network, batch_size: int, bits: int) -> MemoryLedger:
    """Peak training memory with every stored tensor at ``bits`` vs 32 bits.

    Counts weights, their gradients and one batch of layer outputs; allocator
    overhead is ignored.
    """
    weights = sum(p.real.size for p in net.parameters())
    acts = batch_size * sum(math.prod(s) for s in net.shapes[1:])
    elements = 2 * weights + acts
    return MemoryLedger(elements * bits / 8, elements * 32 / 8)


@dataclass(frozen=True)
class AccountingConvention:
    """Which operand bit widths each pass is charged at.

    ``cyclic``: forward passes of binary layers at 1/1 bits, full-precision
    layers at 32/32; every layer's backward pass is ``backward_blocks``
    forward-sized MAC blocks, charged at (scheduled bits)/``grad_bits`` for
    binary layers and 32/32 for full-precision layers.

    ``uniform``: every operand of every pass at the scheduled bit width.
    """

    mode: Literal["cyclic", "uniform"] = "cyclic"
    grad_bits: int = 8
    backward_blocks: int = 2

    def describe(self) -> str:
        if self.mode == "uniform":
            return (f"uniform: all passes at scheduled/scheduled bits; "
                    f"backward = {self.backward_blocks} forward-sized blocks per layer")
        return (f"cyclic: forward binary 1/1, forward fp 32/32; backward = {self.backward_blocks} "
                f"forward-sized blocks per layer, binary at scheduled/{self.grad_bits}, fp at 32/32")

    def epoch_ledger(self, layers, bits: int, samples: int) -> MacLedger:
        ledger = MacLedger()
        for name, macs, is_binary in layers:
            if self.mode == "uniform":
                fwd, bwd = (bits, bits), (bits, bits)
            elif is_binary:
                fwd, bwd = (1, 1), (bits, self.grad_bits)
            else:
                fwd, bwd = (32, 32), (32, 32)
            ledger.add(f"{name}.forward", macs, *fwd, samples)
            ledger.add(f"{name}.backward", macs, *bwd, samples * self.backward_blocks)
        return ledger


def full_precision_ledger(layers, samples: int, backward_blocks: int = 2) -> MacLedger:
    ledger = MacLedger()
    for name, macs, _ in layers:
        ledger.add(f"{name}.forward", macs, 32, 32, samples)
        ledger.add(f"{name}.backward", macs, 32, 32, samples * backward_blocks)
    return ledger


@dataclass
class CostReport:
    convention: str
    epochs: int
    samples_per_epoch: int
    full_precision_macs: float
    scheduled_macs: float
    memory_ratio: float
    per_epoch: list = field(default_factory=list)  # (epoch, bits, adjusted MACs, cumulative)

    @property
    def reduction_pct(self) -> float:
        if self.full_precision_macs == 0:
            return 0.0
        return 100.0 * (1.0 - self.scheduled_macs / self.full_precision_macs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "bits", "adjusted_macs", "cumulative_adjusted_macs"])
        for row in self.per_epoch:
            w.writerow([row[0], row[1], f"{row[2]:.6e}", f"{row[3]:.6e}"])
        w.writerow(["total_full_precision", "", f"{self.full_precision_macs:.6e}", ""])
        w.writerow(["total_scheduled", "", f"{self.scheduled_macs:.6e}", ""])
        w.writerow(["reduction_pct", "", f"{self.reduction_pct:.4f}", ""])
        w.writerow(["memory_ratio", "", f"{self.memory_ratio:.4f}", ""])
        return buf.getvalue()

    def to_text(self) -> str:
        return "\n".join([
            f"# accounting convention: {self.convention}",
            f"epochs: {self.epochs}, samples/epoch: {self.samples_per_epoch}",
            f"training MACs (32-bit baseline): {self.full_precision_macs:.4e}",
            f"training MACs (scheduled):       {self.scheduled_macs:.4e}",
            f"reduction: {self.reduction_pct:.2f}%",
            f"memory usage: {self.memory_ratio:.4f}x",
            "",
        ])


def run_report(bits_per_epoch, layers, samples_per_epoch: int,
               convention: AccountingConvention = AccountingConvention(),
               memory: MemoryLedger | None = None) -> CostReport:
    """Aggregate adjusted training MACs over a run.

    ``layers`` is the output of :func:`network_macs`. Memory defaults to the
    uniform regime at the widest bit width in play.
    """
    bits_per_epoch = list(bits_per_epoch)
    fp_epoch = training_macs(full_precision_ledger(layers, samples_per_epoch, convention.backward_blocks))
    per_epoch, total = [], 0.0
    for e, bits in enumerate(bits_per_epoch):
        macs = training_macs(convention.epoch_ledger(layers, bits, samples_per_epoch))
        total += macs
        per_epoch.append((e, bits, macs, total))
    if memory is None:
        widest = max(bits_per_epoch + ([convention.grad_bits] if convention.mode == "cyclic" else []))
        memory = MemoryLedger(widest, 32)
    return CostReport(convention.describe(), len(bits_per_epoch), samples_per_epoch,
                      fp_epoch * len(bits_per_epoch), total, memory_usage(memory), per_epoch)
