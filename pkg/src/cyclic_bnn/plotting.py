"""Figures rendered next to the CSV outputs when ``--figures`` is given."""

import functools

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _styled(fn):
    """Run a plotting function inside the module's rc context."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with plt.rc_context(STYLE):
            return fn(*args, **kwargs)

    return wrapper


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


@_styled
def plot_schedule(bits, path, title="backward precision schedule"):
    fig, ax = plt.subplots(figsize=(5.0, 3.0))
    ax.step(range(len(bits)), bits, where="post", lw=1.2, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("bits")
    ax.set_yticks(sorted(set(bits)))
    ax.set_title(title)
    return _save(fig, path)


@_styled
def plot_training(rows, path):
    epochs = [r["epoch"] for r in rows]
    fig, (ax_loss, ax_bits, ax_acc) = plt.subplots(
        3, 1, figsize=(5.0, 5.5), sharex=True, gridspec_kw={"height_ratios": [3, 1, 2]})
    ax_loss.semilogy(epochs, [r["loss"] for r in rows], marker="o", ms=3)
    ax_loss.set_ylabel("train loss")
    bits = [r["bits"] for r in rows]
    ax_bits.step(epochs, bits, where="mid", color="tab:gray", lw=1)
    ax_bits.set_yticks(sorted(set(bits)))
    ax_bits.set_ylabel("bits")
    ax_acc.plot(epochs, [r["train_acc"] for r in rows], marker="o", ms=3, label="train")
    ax_acc.plot(epochs, [r["test_acc"] for r in rows], marker="s", ms=3, label="test")
    ax_acc.set_ylim(min(0.5, min(r["test_acc"] for r in rows) - 0.05), 1.02)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("top-1 accuracy")
    ax_acc.legend(frameon=False, loc="lower right")
    ax_acc.xaxis.set_major_locator(MaxNLocator(integer=True))
    fig.align_ylabels()
    return _save(fig, path)


@_styled
def plot_qe_table(bits_list, table, labels, path):
    """One line per fitted layer, quantization error against bit width."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    cmap = plt.get_cmap("viridis")
    for j, label in enumerate(labels):
        column = [row[j] for row in table]
        if any(v is None for v in column):
            continue
        ax.plot(bits_list, column, lw=1, marker=".", color=cmap(j / max(len(labels) - 1, 1)), label=label)
    ax.set_xlabel("bits")
    ax.set_ylabel("quantization error")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    if len(labels) <= 16:
        ax.legend(ncol=2, frameon=False, loc="upper left", bbox_to_anchor=(1.01, 1.0))
    return _save(fig, path)
