"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# keep PNG bytes reproducible across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.png")
    fig.savefig(tmp, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    tmp.replace(path)
    return path


def plot_losses(losses, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if len(losses):
        ax.semilogy(np.arange(1, len(losses) + 1), losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_residual_trace(header, rows, path, floor: float = 1e-20):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    rows = np.asarray(rows, dtype=float)
    if rows.size:
        for j, name in enumerate(header[1:], start=1):
            ax.semilogy(rows[:, 0], np.maximum(rows[:, j], floor), label=name)
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("constraint residual (max norm)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def _frame(x: np.ndarray, chans) -> np.ndarray:
    # first channel of the component; later frames are skipped
    return np.asarray(x)[chans[0]]


def plot_reconstruction(components: dict, mean, std, path, truth=None, mask=None):
    """One row per component: mean, std and, if ``truth`` is given, truth and |error|."""
    cols = ["mean", "std"] + (["truth", "|error|"] if truth is not None else [])
    fig, axes = plt.subplots(len(components), len(cols), figsize=(2.6 * len(cols), 2.4 * len(components)),
                             squeeze=False)
    for r, (name, chans) in enumerate(components.items()):
        panels = [_frame(mean, chans), _frame(std, chans)]
        if truth is not None:
            panels += [_frame(truth, chans), np.abs(_frame(mean, chans) - _frame(truth, chans))]
        for c, (title, img) in enumerate(zip(cols, panels)):
            ax = axes[r, c]
            im = ax.imshow(img, origin="lower", cmap="viridis" if title != "|error|" else "magma")
            if mask is not None and title == "mean":
                yy, xx = np.nonzero(np.asarray(mask)[chans[0]])
                ax.scatter(xx, yy, s=2, c="w", marker=".")
            ax.set_title(f"{name}: {title}", fontsize=8)
            ax.set_xticks([])
            ax.set_yticks([])
            fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _save(fig, path)


def plot_fields(components: dict, x, path, title: str = ""):
    fig, axes = plt.subplots(1, len(components), figsize=(3 * len(components), 2.8), squeeze=False)
    for ax, (name, chans) in zip(axes[0], components.items()):
        im = ax.imshow(_frame(x, chans), origin="lower")
        ax.set_title(f"{title} {name}".strip(), fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _save(fig, path)


def plot_eval_rows(header, rows, path, x_key: str = "row"):
    """Rel-l2 across appended evaluation rows (e.g. a step or k sweep)."""
    idx = header.index("rel_l2")
    y = [float(r[idx]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, len(y) + 1), y, marker="o")
    ax.set_xlabel(x_key)
    ax.set_ylabel("Rel-l2")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
