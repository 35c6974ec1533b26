"""Static SVG figures: point clouds, embeddings, reconstructions and sweep curves."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gse.storage import atomic_write_bytes  # noqa: E402

# fixed ids and no timestamp so identical inputs give identical files
_RC = {"svg.hashsalt": "gse", "svg.fonttype": "none"}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(Path(path), buf.getvalue())


def _scatter(ax, P, c, title):
    P = np.atleast_2d(P)
    if P.shape[0] == 0:
        ax.set_title(title + " (empty)")
        return
    if P.shape[1] >= 3 and ax.name == "3d":
        ax.scatter(P[:, 0], P[:, 1], P[:, 2], c=c, s=6, cmap="viridis")
    elif P.shape[1] >= 2:
        ax.scatter(P[:, 0], P[:, 1], c=c, s=6, cmap="viridis")
    else:
        ax.scatter(P[:, 0], np.zeros(P.shape[0]), c=c, s=6, cmap="viridis")
    ax.set_title(title)


def cloud_figure(points, path, color=None, title: str = "Test cloud") -> None:
    with plt.rc_context(_RC):
        fig = plt.figure(figsize=(5, 4))
        ax = fig.add_subplot(projection="3d" if points.shape[1] >= 3 else None)
        _scatter(ax, points, color, title)
        _save(fig, path)


def embedding_figure(Y, path, color=None, title: str = "Embedding") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        _scatter(ax, Y, color, title)
        ax.set_xlabel("y1")
        _save(fig, path)


def sweep_figure(ns, medians, means, path, title: str = "Reconstruction error vs sample size") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(ns, medians, "o-", label="median")
        ax.plot(ns, means, "s--", label="mean")
        ax.set_xlabel("n_train")
        ax.set_ylabel("reconstruction error")
        ax.set_yscale("log")
        ax.legend()
        ax.set_title(title)
        _save(fig, path)
