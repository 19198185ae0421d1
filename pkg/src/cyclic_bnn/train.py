"""Cyclic-precision training loop and its configuration."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .checkpoint import save_checkpoint
from .data import Dataset, batches, load_idx, synth_dataset
from .errors import BnnError
from .nn import Network, PrecisionContext, build_network, softmax_cross_entropy
from .optim import AdamW
from .schedule import CycleConfig, LrConfig, lr_at, precision_at

METRICS_COLUMNS = ["epoch", "bits", "lr", "loss", "train_acc", "test_acc", "cum_adjusted_macs"]
EVAL_BATCH = 256


@dataclass
class TrainConfig:
    arch: str = "convnet-small"
    epochs: int = 10
    cycles: int = 2
    min_bits: int = 2
    max_bits: int = 6
    schedule_mode: str = "anchored"
    batch_size: int = 16
    lr: float = 1e-3
    min_lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    eps: float = 1e-8
    seed: int = 1
    grad_bits: int | None = 8
    binarize_first_last: bool = False
    # dataset: either synthetic (synth_n > 0) or IDX files
    synth_n: int = 0
    synth_test_n: int = 500
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_limit: int = 0
    out_dir: str = "run"
    figures: bool = False

    def __post_init__(self):
        self.cycle_config()
        if self.batch_size < 1 or not self.lr > 0 or self.eps <= 0 or not 0 <= self.beta1 < 1 \
                or not 0 <= self.beta2 < 1 or self.weight_decay < 0:
            raise BnnError("invalid-config", "optimizer or batch settings out of range")
        if self.grad_bits is not None and not 1 <= self.grad_bits <= 32:
            raise BnnError("invalid-config", f"grad_bits={self.grad_bits}")
        if self.synth_n <= 0 and not (self.train_images and self.train_labels):
            raise BnnError("invalid-config", "set synth_n or train_images/train_labels")

    def cycle_config(self) -> CycleConfig:
        return CycleConfig(self.epochs, self.cycles, self.min_bits, self.max_bits, self.schedule_mode)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise BnnError("unknown-config-key", ", ".join(unknown))
        for key, value in raw.items():
            expected = known[key].type
            ok = {
                "int": isinstance(value, int) and not isinstance(value, bool),
                "float": isinstance(value, (int, float)) and not isinstance(value, bool),
                "str": isinstance(value, str),
                "bool": isinstance(value, bool),
                "int | None": value is None or (isinstance(value, int) and not isinstance(value, bool)),
            }[expected]
            if not ok:
                raise BnnError("invalid-config", f"{key} must be {expected}, got {value!r}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BnnError("config-parse-failure", str(exc)) from None
        if not isinstance(raw, dict):
            raise BnnError("config-parse-failure", "top level must be an object")
        return cls.from_dict(raw)


def load_datasets(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    if cfg.synth_n > 0:
        # The test split uses the next seed so it never overlaps the train stream.
        return synth_dataset(cfg.synth_n, cfg.seed), synth_dataset(cfg.synth_test_n, cfg.seed + 1)
    train = load_idx(cfg.train_images, cfg.train_labels)
    if cfg.train_limit > 0:
        train = train.subset(cfg.train_limit)
    if cfg.test_images:
        test = load_idx(cfg.test_images, cfg.test_labels, train.num_classes)
    else:
        test = train
    return train, test


def predict(net: Network, images: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
    """Inference-mode logits, evaluated in fixed-size chunks."""
    ctx = PrecisionContext()
    return np.concatenate([net.forward(images[i:i + batch], ctx, training=False)
                           for i in range(0, len(images), batch)])


def accuracy(net: Network, d: Dataset) -> float:
    return float(np.mean(predict(net, d.images).argmax(axis=1) == d.labels))


def checkpoint_records(net: Network, cfg: TrainConfig) -> dict:
    meta = {
        "meta.input_shape": np.array(net.input_shape, dtype=np.float32),
        "meta.num_classes": np.array([net.num_classes], dtype=np.float32),
        "meta.binarize_first_last": np.array([float(cfg.binarize_first_last)], dtype=np.float32),
        f"meta.arch.{cfg.arch}": np.array([1.0], dtype=np.float32),
    }
    return {**meta, **net.state()}


def network_from_records(records: dict) -> Network:
    try:
        arch = next(k[len("meta.arch."):] for k in records if k.startswith("meta.arch."))
        input_shape = tuple(int(v) for v in records["meta.input_shape"])
        num_classes = int(records["meta.num_classes"][0])
        first_last = bool(records["meta.binarize_first_last"][0])
    except (StopIteration, KeyError) as exc:
        raise BnnError("architecture-mismatch", f"missing metadata {exc}") from None
    net = build_network(arch, input_shape, num_classes, binarize_first_last=first_last)
    state = {k: v for k, v in records.items() if not k.startswith("meta.")}
    net.load_state(state)
    return net


@dataclass
class TrainResult:
    network: Network
    rows: list = field(default_factory=list)
    report: metrics.CostReport | None = None


def format_row(row: dict) -> str:
    return ",".join([
        str(row["epoch"]), str(row["bits"]), f"{row['lr']:.8e}", f"{row['loss']:.8f}",
        f"{row['train_acc']:.6f}", f"{row['test_acc']:.6f}", f"{row['cum_adjusted_macs']:.6e}",
    ])


def run_training(cfg: TrainConfig, train: Dataset | None = None, test: Dataset | None = None,
                 log=None) -> TrainResult:
    """Train, writing ``metrics.csv``, ``checkpoint.cbnn`` and cost reports to ``cfg.out_dir``.

    Raises ``BnnError("diverged")`` on a non-finite loss.
    """
    if train is None:
        train, test = load_datasets(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cycle = cfg.cycle_config()
    net = build_network(cfg.arch, train.images.shape[1:], train.num_classes, cfg.seed, cfg.binarize_first_last)
    opt = AdamW(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    lr_cfg = LrConfig(cfg.lr, cfg.epochs * steps_per_epoch, cfg.min_lr)
    convention = metrics.AccountingConvention(grad_bits=cfg.grad_bits or 32)
    layer_macs = metrics.network_macs(net)

    result = TrainResult(net)
    step, cum_macs, bits_seen = 0, 0.0, []
    lines = [",".join(METRICS_COLUMNS)]
    for epoch in range(cfg.epochs):
        bits = precision_at(epoch, cycle)
        bits_seen.append(bits)
        ctx = PrecisionContext(backward_bits=bits, grad_bits=cfg.grad_bits)
        lr = lr_at(step, lr_cfg)
        losses = []
        for images, labels in batches(train, cfg.batch_size, cfg.seed, epoch):
            logits = net.forward(images, ctx, training=True)
            loss, grad = softmax_cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise BnnError("diverged", f"epoch {epoch}, step {step}")
            losses.append(loss * len(labels))
            net.zero_grad()
            net.backward(grad, ctx)
            opt.step(net.parameters(), lr_at(step, lr_cfg))
            step += 1
        cum_macs += metrics.training_macs(convention.epoch_ledger(layer_macs, bits, len(train)))
        row = {
            "epoch": epoch, "bits": bits, "lr": lr, "loss": sum(losses) / len(train),
            "train_acc": accuracy(net, train), "test_acc": accuracy(net, test),
            "cum_adjusted_macs": cum_macs,
        }
        result.rows.append(row)
        lines.append(format_row(row))
        if log:
            log(format_row(row))

    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    save_checkpoint(out / "checkpoint.cbnn", checkpoint_records(net, cfg))
    memory = metrics.memory_ledger(net, cfg.batch_size, max(bits_seen + [cfg.grad_bits or 32]))
    result.report = metrics.run_report(bits_seen, layer_macs, len(train), convention, memory)
    (out / "cost_report.csv").write_text(result.report.to_csv())
    (out / "cost_report.txt").write_text(result.report.to_text())
    if cfg.figures:
        from .plotting import plot_training
        plot_training(result.rows, out / "training.png")
    return result
