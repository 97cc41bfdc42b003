"""Figures written next to the JSON/CSV reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def new(width: float = 4.0, ratio: float = 0.68, nrows: int = 1, ncols: int = 1):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows, ncols, figsize=(width, width * ratio))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def save_image(img: np.ndarray, path) -> Path:
    """Write an H x W x 3 float image in [0, 1] as PNG without axes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0))
    return path


def spatial_heatmap(impact: np.ndarray, path, title: str = "attribution per pixel") -> Path:
    fig, ax = new(3.2, 1.0)
    lim = float(np.abs(impact).max()) or 1.0
    im = ax.imshow(impact, cmap="RdBu_r", vmin=-lim, vmax=lim)
    ax.set_axis_off()
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return save(fig, path)


def spectral_profile(profile: dict, path, title: str = "attribution per wavelength") -> Path:
    fig, ax = new()
    wl = profile["wavelength_nm"]
    ax.plot(wl, profile["absolute"], color="k", lw=1.2, label="absolute")
    ax.plot(wl, profile["signed"], color="tab:red", lw=0.9, label="signed")
    ax.axhline(0, color="0.7", lw=0.6)
    ax.set_xlabel("wavelength [nm]")
    ax.set_ylabel("summed attribution")
    ax.set_title(title)
    ax.legend(frameon=False)
    return save(fig, path)


def confusion(cm, class_names: Sequence[str], path, title: str = "") -> Path:
    cm = np.asarray(cm)
    fig, ax = new(3.2, 1.0)
    ax.imshow(cm, cmap="Blues")
    for (i, j), v in np.ndenumerate(cm):
        ax.text(j, i, str(v), ha="center", va="center", color="white" if v > cm.max() / 2 else "black")
    ax.set_xticks(range(len(class_names)), class_names, rotation=30)
    ax.set_yticks(range(len(class_names)), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    return save(fig, path)


def training_curves(epochs: Sequence[dict], path) -> Path:
    fig, (a1, a2) = new(6.4, 0.4, ncols=2)
    ep = [e["epoch"] for e in epochs]
    a1.plot(ep, [e["train_loss"] for e in epochs], label="train")
    a1.plot(ep, [e["val_loss"] for e in epochs], label="val")
    a1.set_xlabel("epoch")
    a1.set_ylabel("loss")
    a1.legend(frameon=False)
    a2.plot(ep, [e["train_accuracy"] for e in epochs], label="train")
    a2.plot(ep, [e["val_accuracy"] for e in epochs], label="val")
    a2.set_xlabel("epoch")
    a2.set_ylabel("accuracy")
    a2.set_ylim(0, 1.02)
    return save(fig, path)


def accuracy_bars(labels: Sequence[str], accuracies: Sequence[float], path, title: str = "") -> Path:
    fig, ax = new(max(3.0, 0.8 * len(labels) + 1.5))
    x = np.arange(len(labels))
    ax.bar(x, [100 * a for a in accuracies], color="0.45")
    for xi, a in zip(x, accuracies):
        ax.text(xi, 100 * a + 1, f"{100 * a:.1f}", ha="center", fontsize=7)
    ax.set_xticks(x, labels, rotation=30, ha="right")
    ax.set_ylabel("test accuracy [%]")
    ax.set_ylim(0, 110)
    if title:
        ax.set_title(title)
    return save(fig, path)


def ripening_strip(images: Sequence[np.ndarray], labels: Sequence[str], path) -> Path:
    n = len(images)
    fig, axes = new(1.1 * n, 1.2 / n, ncols=n)
    axes = np.atleast_1d(axes)
    for ax, img, lab in zip(axes, images, labels):
        ax.imshow(np.clip(img, 0, 1))
        ax.set_title(lab, fontsize=7)
        ax.set_axis_off()
    return save(fig, path)
