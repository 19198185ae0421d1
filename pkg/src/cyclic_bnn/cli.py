"""``cyclic-bnn`` command-line tool.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure at
runtime (divergence, degenerate weights, packed/float disagreement).
"""

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from .bitkernel import pack_network, packed_forward, read_packed_model, write_packed_model
from .checkpoint import load_checkpoint
from .data import load_idx, synth_dataset
from .errors import BnnError
from .quant import GaussianFit, QEConfig, quantization_error
from .schedule import CycleConfig, LrConfig, lr_at, precision_schedule
from .train import TrainConfig, load_datasets, network_from_records, predict, run_training

RUNTIME_FAILURES = {"diverged", "zero-variance-weights", "integration-failure", "non-finite-gradient",
                    "paths-disagree"}


class UsageError(Exception):
    pass


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def parse_bits(spec: str) -> list[int]:
    """``"2-12"``, ``"1,2,8"`` or a mix of both."""
    bits = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            bits.extend(range(int(lo), int(hi) + 1))
        elif part:
            bits.append(int(part))
    if not bits or any(not 1 <= b <= 32 for b in bits):
        raise UsageError(f"invalid --bits {spec!r}")
    return bits


# ------------------------------------------------------------------ train

def cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.figures:
        cfg.figures = True
    result = run_training(cfg, log=None if args.quiet else print)
    if not args.quiet:
        print(result.report.to_text(), end="")
    return 0


# ------------------------------------------------------------------ eval

def _eval_dataset(args):
    if args.config:
        return load_datasets(TrainConfig.from_file(args.config))[1]
    if args.synth:
        return synth_dataset(args.synth, args.data_seed)
    if args.images and args.labels:
        return load_idx(args.images, args.labels)
    raise UsageError("eval needs --config, --synth or --images/--labels")


def cmd_eval(args) -> int:
    records = load_checkpoint(args.checkpoint)
    net = network_from_records(records)
    data = _eval_dataset(args)
    if tuple(data.images.shape[1:]) != net.input_shape:
        raise BnnError("architecture-mismatch", f"dataset {data.images.shape[1:]} vs model {net.input_shape}")
    t0 = time.perf_counter()
    logits = predict(net, data.images)
    float_s = time.perf_counter() - t0
    print(f"accuracy: {np.mean(logits.argmax(axis=1) == data.labels):.6f}")
    if args.packed is None:
        return 0
    binary = [l.weight.name for l in net.layers if l.spec.is_binary]
    if args.packed == "":
        model = pack_network(records, binary)
    else:
        model = read_packed_model(args.packed)
        missing = set(binary) - set(model.packed)
        if missing:
            raise BnnError("architecture-mismatch", f"packed file lacks {sorted(missing)}")
    t0 = time.perf_counter()
    packed_logits = np.concatenate([packed_forward(net, model, data.images[i:i + 256])
                                    for i in range(0, len(data.images), 256)])
    packed_s = time.perf_counter() - t0
    agree = bool(np.array_equal(logits, packed_logits))
    print(f"paths-agree: {str(agree).lower()}")
    print(f"packed-accuracy: {np.mean(packed_logits.argmax(axis=1) == data.labels):.6f}")
    print(f"throughput-float: {len(data.images) / max(float_s, 1e-9):.1f} images/s")
    print(f"throughput-packed: {len(data.images) / max(packed_s, 1e-9):.1f} images/s")
    if not agree:
        raise BnnError("paths-disagree", f"max |diff| = {np.max(np.abs(logits - packed_logits))}")
    return 0


# ------------------------------------------------------------------ schedule

def cmd_schedule(args) -> int:
    cfg = CycleConfig(args.epochs, args.cycles, args.min_bits, args.max_bits, args.mode)
    bits = precision_schedule(cfg)
    lr_cfg = LrConfig(args.lr, cfg.total_epochs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "bits", "lr"])
    for e, b in enumerate(bits):
        w.writerow([e, b, f"{lr_at(e, lr_cfg):.8e}"])
    _emit(buf.getvalue(), args.out)
    if args.figure:
        from .plotting import plot_schedule
        plot_schedule(bits, args.figure, f"{cfg.mode} schedule, {cfg.min_bits}-{cfg.max_bits} bits, "
                                         f"{cfg.cycles} cycles")
    return 0


# ------------------------------------------------------------------ qe

def read_fits(path) -> tuple[list[str], list[GaussianFit]]:
    """CSV rows of ``amplitude,mean,sigma`` with an optional leading ``name`` column and header."""
    names, fits = [], []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            row = [c.strip() for c in row if c.strip()]
            if not row or row[0].startswith("#"):
                continue
            try:
                values = [float(c) for c in row[-3:]]
            except ValueError:
                continue  # header
            if len(row) not in (3, 4):
                raise UsageError(f"fits row needs 3 or 4 fields: {row}")
            name = row[0] if len(row) == 4 else chr(ord("a") + len(fits) % 26) * (1 + len(fits) // 26)
            names.append(name)
            fits.append(GaussianFit(*values))
    if not fits:
        raise UsageError(f"no fits in {path}")
    return names, fits


def fit_gaussian(values: np.ndarray, bins: int = 60) -> GaussianFit | None:
    """Least-squares Gaussian fit to the density histogram of ``values``; ``None`` if degenerate."""
    from scipy.optimize import curve_fit

    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 3 or np.std(values) == 0:
        return None
    density, edges = np.histogram(values, bins=bins, density=True)
    centres = 0.5 * (edges[:-1] + edges[1:])

    def gauss(x, a, mu, sigma):
        return a * np.exp(-((x - mu) ** 2) / (2 * sigma ** 2))

    try:
        (a, mu, sigma), _ = curve_fit(gauss, centres, density, p0=(density.max(), values.mean(), values.std()))
    except (RuntimeError, ValueError):
        return None
    sigma = abs(sigma)
    if not (np.isfinite([a, mu, sigma]).all() and a > 0 and sigma > 1e-12):
        return None
    return GaussianFit(float(a), float(mu), float(sigma))


def checkpoint_fits(path) -> tuple[list[str], list[GaussianFit | None]]:
    records = load_checkpoint(path)
    net = network_from_records(records)
    names = [l.weight.name for l in net.layers if l.spec.is_binary]
    return names, [fit_gaussian(records[n]) for n in names]


def cmd_qe(args) -> int:
    if args.fits:
        names, fits = read_fits(args.fits)
    else:
        names, fits = checkpoint_fits(args.checkpoint)
    bits_list = parse_bits(args.bits)
    lo, hi = args.range
    qcfg = QEConfig(alpha=args.alpha, lo=lo, hi=hi, steps=args.steps, quant_min=args.quant_range[0],
                    quant_max=args.quant_range[1], clamp=args.clamp, density_at=args.density_at)
    table = [[None if f is None else quantization_error(f, b, qcfg) for f in fits] for b in bits_list]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bits", *names])
    for b, row in zip(bits_list, table):
        w.writerow([b, *("degenerate" if v is None else f"{v:.6f}" for v in row)])
    _emit(buf.getvalue(), args.out)
    if args.figure:
        from .plotting import plot_qe_table
        plot_qe_table(bits_list, table, names, args.figure)
    return 0


# ------------------------------------------------------------------ pack

def cmd_pack(args) -> int:
    records = load_checkpoint(args.checkpoint)
    net = network_from_records(records)
    binary = [l.weight.name for l in net.layers if l.spec.is_binary]
    write_packed_model(args.out, pack_network(records, binary))
    print(f"wrote {args.out} ({Path(args.out).stat().st_size} bytes, {len(binary)} packed layers)")
    return 0


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclic-bnn", description="Train, evaluate and bit-pack binary networks with a cyclic backward-precision schedule.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train with the cyclic backward-precision schedule")
    t.add_argument("config", help="flat JSON config file")
    t.add_argument("--out-dir", help="override out_dir from the config")
    t.add_argument("--figures", action="store_true", help="also render training.png")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--config", help="evaluate on the test split of this training config")
    e.add_argument("--synth", type=int, default=0, help="evaluate on N synthetic samples")
    e.add_argument("--data-seed", type=int, default=0)
    e.add_argument("--images")
    e.add_argument("--labels")
    e.add_argument("--packed", nargs="?", const="", default=None, metavar="CBNP",
                   help="also run the bit-packed path (optionally from a packed file) and compare logits")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("schedule", help="print the per-epoch precision schedule as CSV")
    s.add_argument("epochs", type=int)
    s.add_argument("cycles", type=int)
    s.add_argument("min_bits", type=int)
    s.add_argument("max_bits", type=int)
    s.add_argument("mode", nargs="?", default="anchored", choices=["anchored", "literal"])
    s.add_argument("--lr", type=float, default=1e-3, help="initial learning rate for the lr column")
    s.add_argument("--out")
    s.add_argument("--figure", help="render the schedule to this image file")
    s.set_defaults(func=cmd_schedule)

    q = sub.add_parser("qe", help="quantization-error table over bit widths")
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--fits", help="CSV of amplitude,mean,sigma per row")
    src.add_argument("--checkpoint", help="fit Gaussians to each binary layer's weights")
    q.add_argument("--bits", default="2-12")
    q.add_argument("--alpha", type=float, default=1.0)
    q.add_argument("--range", type=float, nargs=2, default=(-15.0, 15.0), metavar=("LO", "HI"))
    q.add_argument("--quant-range", type=float, nargs=2, default=(-1.0, 1.0), metavar=("MIN", "MAX"))
    q.add_argument("--steps", type=int, default=300_000)
    q.add_argument("--clamp", action="store_true", help="clip weights into the quantizer range first")
    q.add_argument("--density-at", choices=["quantized", "latent"], default="quantized")
    q.add_argument("--out")
    q.add_argument("--figure")
    q.set_defaults(func=cmd_qe)

    k = sub.add_parser("pack", help="write the bit-packed CBNP model")
    k.add_argument("checkpoint")
    k.add_argument("out")
    k.set_defaults(func=cmd_pack)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if exc.code in RUNTIME_FAILURES else 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
