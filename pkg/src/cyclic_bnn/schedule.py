"""Cyclic backward-precision schedule and cosine learning-rate annealing."""

import math
from dataclasses import dataclass
from typing import Literal

from .errors import BnnError


@dataclass(frozen=True)
class CycleConfig:
    """``cycles`` sweeps from ``min_bits`` to ``max_bits`` over ``total_epochs``.

    ``mode="anchored"`` (default) starts each sweep at ``min_bits``;
    ``mode="literal"`` adds ``min_bits`` inside the modulus instead of after
    it, so its values lie in ``[0, max_bits - min_bits]``.
    """

    total_epochs: int = 600
    cycles: int = 8
    min_bits: int = 2
    max_bits: int = 6
    mode: Literal["anchored", "literal"] = "anchored"

    def __post_init__(self):
        ok = (
            isinstance(self.total_epochs, int) and isinstance(self.cycles, int)
            and self.total_epochs >= 1 and 1 <= self.cycles <= self.total_epochs
            and 1 <= self.min_bits <= self.max_bits <= 8
            and self.mode in ("anchored", "literal")
        )
        if not ok:
            raise BnnError("invalid-cycle-config", repr(self))


def precision_at(epoch: int, cfg: CycleConfig) -> int:
    if not 0 <= epoch < cfg.total_epochs:
        raise BnnError("epoch-out-of-range", f"epoch {epoch} not in [0, {cfg.total_epochs})")
    n, v = cfg.total_epochs, cfg.min_bits
    r = cfg.max_bits + 1 - v
    # Integer arithmetic on the numerator keeps the floor exact at cycle boundaries.
    if cfg.mode == "literal":
        return ((v * n + r * epoch * cfg.cycles) % (r * n)) // n
    return v + ((r * epoch * cfg.cycles) % (r * n)) // n


def precision_schedule(cfg: CycleConfig) -> list[int]:
    return [precision_at(e, cfg) for e in range(cfg.total_epochs)]


def count_cycles(bits: list[int]) -> int:
    """Number of maximal non-decreasing runs in ``bits``."""
    if not bits:
        return 0
    return 1 + sum(1 for a, b in zip(bits, bits[1:]) if b < a)


@dataclass(frozen=True)
class LrConfig:
    initial_lr: float = 1e-3
    total_steps: int = 1
    min_lr: float = 0.0

    def __post_init__(self):
        if not (self.initial_lr > 0 and self.total_steps >= 1 and 0 <= self.min_lr < self.initial_lr):
            raise BnnError("invalid-lr-config", repr(self))


def lr_at(step: int, cfg: LrConfig) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise BnnError("step-out-of-range", f"step {step} not in [0, {cfg.total_steps}]")
    cos = math.cos(math.pi * step / cfg.total_steps)
    return cfg.min_lr + 0.5 * (cfg.initial_lr - cfg.min_lr) * (1.0 + cos)
