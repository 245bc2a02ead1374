"""Figures written next to the tabular reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_META = {"Software": None}


def class_colors(num_classes):
    """RGB in [0, 1] per train id; id 0 is black."""
    cmap = plt.get_cmap("tab20")
    colors = np.zeros((num_classes + 1, 3))
    for c in range(1, num_classes + 1):
        colors[c] = cmap((c - 1) % 20)[:3]
    return colors


def plot_class_weights(stats, path, t=0.1):
    """Side-by-side bars of the semantic and panoptic normalized weights with
    the long-tail threshold marked."""
    names = stats.names[1:]
    x = np.arange(len(names))
    fig, axes = plt.subplots(1, 2, figsize=(12, 4), sharey=True)
    for ax, w, title in ((axes[0], stats.w_sem[1:], "semantic"), (axes[1], stats.w_pan[1:], "panoptic")):
        colors = np.where(w > t, "tab:red", "tab:gray")
        ax.bar(x, w, color=colors)
        ax.axhline(t, color="k", lw=0.8, ls="--")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=70, ha="right", fontsize=8)
        ax.set_title(f"normalized weight ({title})")
        ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)


def plot_per_class(rows, key, path, title=None):
    """Bar chart of ``row[key]`` per class; missing values are skipped."""
    rows = [r for r in rows if r.get(key) is not None]
    fig, ax = plt.subplots(figsize=(10, 4))
    if rows:
        x = np.arange(len(rows))
        ax.bar(x, [100 * r[key] for r in rows], color="tab:blue")
        ax.set_xticks(x)
        ax.set_xticklabels([r["name"] for r in rows], rotation=70, ha="right", fontsize=8)
    ax.set_ylim(0, 100)
    ax.set_ylabel(f"{key} (%)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)


def render_range_image(img, labels, num_classes, path, alpha=0.6):
    """W x H PNG: range as grayscale (near = bright) with labeled pixels
    tinted by class color."""
    rng = np.where(img.valid, img.range, 0.0).astype(np.float64)
    hi = rng[img.valid].max() if img.valid.any() else 1.0
    gray = np.where(img.valid, 1.0 - rng / hi * 0.8, 0.0)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    labels = np.asarray(labels)
    tint = img.valid & (labels > 0)
    colors = class_colors(num_classes)
    rgb[tint] = (1 - alpha) * rgb[tint] + alpha * colors[labels[tint]]
    plt.imsave(path, np.clip(rgb, 0, 1), metadata=PNG_META)
