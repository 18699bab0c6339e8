"""Static image rendering for masks, spectrograms and sanity-check plots."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import colormaps
from PIL import Image


def _to_image(values: np.ndarray, cmap: str, vmin: float | None, vmax: float | None) -> Image.Image:
    lo = float(values.min()) if vmin is None else vmin
    hi = float(values.max()) if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    norm = np.clip((values - lo) / span, 0.0, 1.0)
    # values are (T, F); display time on x, low frequencies at the bottom
    rgba = (colormaps[cmap](norm.T[::-1]) * 255).astype(np.uint8)
    return Image.fromarray(rgba, mode="RGBA")


def heatmap_png(
    values: np.ndarray,
    path: str | Path | None = None,
    cmap: str = "viridis",
    vmin: float | None = None,
    vmax: float | None = None,
) -> bytes:
    """Render a (T, F) matrix to PNG; returns bytes, optionally writes a file."""
    img = _to_image(np.asarray(values, dtype=np.float64), cmap, vmin, vmax)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def spectrogram_png(values: np.ndarray, path: str | Path | None = None) -> bytes:
    """Grayscale spectrogram display (input may be any real matrix)."""
    return heatmap_png(values, path, cmap="gray")


def scatter_png(x, y, xlabel: str, ylabel: str, title: str, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(x, y, s=12, alpha=0.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def lines_png(series: dict[str, tuple[list, list]], xlabel: str, ylabel: str, title: str, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, (x, y) in series.items():
        ax.plot(x, y, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
