"""Figure rendering (files only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import STAGES  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confusion(cm, path, labels=None, title="") -> None:
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(3 + 0.4 * len(cm), 2.6 + 0.4 * len(cm)))
    im = ax.imshow(cm, cmap="Blues")
    ticks = np.arange(len(cm))
    labels = labels if labels is not None else [str(k + 1) for k in ticks]
    ax.set_xticks(ticks, labels)
    ax.set_yticks(ticks, labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i, j in np.ndindex(cm.shape):
        ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                color="white" if cm[i, j] > cm.max() / 2 else "black")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    _save(fig, path)


def plot_accuracy_vs_M(rows, path, title="") -> None:
    """``rows``: (label, [(M, accuracy), ...]) pairs, one line each."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, pts in rows:
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], marker="o", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("codebook size M")
    ax.set_ylabel("accuracy (%)")
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title(title)
    _save(fig, path)


def plot_sweep_grid(acc, m_values, tau_values, path, title="") -> None:
    """Heat map of accuracy over (m, tau); NaN marks failed cells."""
    acc = np.asarray(acc, dtype=float)
    fig, ax = plt.subplots(figsize=(1.2 + 0.7 * len(tau_values), 1.2 + 0.6 * len(m_values)))
    im = ax.imshow(100 * acc, cmap="viridis", origin="lower", aspect="auto")
    ax.set_xticks(range(len(tau_values)), [str(t) for t in tau_values])
    ax.set_yticks(range(len(m_values)), [str(m) for m in m_values])
    ax.set_xlabel("tau")
    ax.set_ylabel("m")
    for i, j in np.ndindex(acc.shape):
        if np.isfinite(acc[i, j]):
            ax.text(j, i, f"{100 * acc[i, j]:.1f}", ha="center", va="center", fontsize=7, color="white")
    fig.colorbar(im, ax=ax, label="accuracy (%)")
    ax.set_title(title)
    _save(fig, path)


def plot_runtime(table: dict, path, title="") -> None:
    """Stacked per-stage seconds, one bar per variant."""
    names = list(table)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bottom = np.zeros(len(names))
    for s in STAGES:
        vals = np.array([float(table[n].get(s, 0.0)) for n in names])
        ax.bar(names, vals, bottom=bottom, label=s)
        bottom += vals
    ax.set_ylabel("wall clock (s)")
    ax.legend(fontsize=7)
    ax.set_title(title)
    _save(fig, path)


def plot_images(images, path, titles=None, cols=4) -> None:
    rows = int(np.ceil(len(images) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), squeeze=False)
    for k, ax in enumerate(axes.ravel()):
        ax.axis("off")
        if k < len(images):
            ax.imshow(np.asarray(getattr(images[k], "pixels", images[k])), cmap="gray", vmin=0, vmax=1)
            if titles:
                ax.set_title(titles[k], fontsize=8)
    _save(fig, path)
