"""Static figures: Poincare-disk snapshots, score histograms, training curves.

Figures are built with the object API (no pyplot state) and SVG output is
made byte-stable by fixing the id salt and dropping the date stamp.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Circle

from poinhier.errors import UnsupportedDimension
from poinhier.geometry import pairwise_distances
from poinhier.io import atomic_write
from poinhier.model import ModelParams, forward_embed

CLASS_COLORS = {0: "#1f77b4", 1: "#d62728"}
CLASS_NAMES = {0: "bonafide", 1: "spoof"}
_STABLE_RC = {"svg.hashsalt": "poinhier", "svg.fonttype": "path"}


@dataclass
class DiskSnapshot:
    """Coordinates drawn in the unit disk (ball points scaled by sqrt(c))."""

    samples: np.ndarray
    sample_labels: np.ndarray
    prototypes: np.ndarray
    prototype_classes: np.ndarray
    tops: np.ndarray
    chords: np.ndarray  # index of the nearest top prototype for each data prototype


def _save(fig: Figure, path):
    fmt = Path(path).suffix.lstrip(".").lower() or "svg"
    metadata = {"Date": None} if fmt == "svg" else None
    with matplotlib.rc_context(_STABLE_RC), atomic_write(path) as fh:
        fig.savefig(fh, format=fmt, metadata=metadata)


def disk_snapshot(params: ModelParams, X, labels) -> DiskSnapshot:
    g = params.g
    if g.dim != 2:
        raise UnsupportedDimension(f"disk plots need a 2-D model, this one has D={g.dim}")
    X = np.asarray(X, dtype=np.float64).reshape(-1, params.d_in)
    z = forward_embed(X, params) if len(X) else np.zeros((0, 2))
    protos, tops = params.bank.materialize()
    chords = np.argmin(pairwise_distances(protos, tops, g), axis=1)
    s = g.sqrt_c
    return DiskSnapshot(z * s, np.asarray(labels, dtype=int), protos * s, params.bank.class_of.copy(),
                        tops * s, chords)


def render_disk_svg(params: ModelParams, X, labels, path, title: str | None = None) -> DiskSnapshot:
    """Draw samples, prototypes and prototype-to-ancestor chords in the disk."""
    snap = disk_snapshot(params, X, labels)
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    ax.add_patch(Circle((0, 0), 1.0, fill=False, color="0.3", lw=1))
    for cls in (0, 1):
        pts = snap.samples[snap.sample_labels == cls]
        ax.scatter(pts[:, 0], pts[:, 1], s=6, alpha=0.5, color=CLASS_COLORS[cls],
                   label=CLASS_NAMES[cls], linewidths=0)
    for p, top_idx in zip(snap.prototypes, snap.chords):
        t = snap.tops[top_idx]
        ax.plot([p[0], t[0]], [p[1], t[1]], color="0.5", lw=0.6, zorder=1)
    ax.scatter(snap.tops[:, 0], snap.tops[:, 1], s=40, facecolors="none", edgecolors="k",
               linewidths=0.8, label="top prototypes", zorder=2)
    for cls in (0, 1):
        pts = snap.prototypes[snap.prototype_classes == cls]
        ax.scatter(pts[:, 0], pts[:, 1], s=90, marker="*", color=CLASS_COLORS[cls],
                   edgecolors="k", linewidths=0.5, zorder=3)
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_aspect("equal")
    ax.set_axis_off()
    ax.legend(loc="lower right", fontsize=7, frameon=False)
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)
    return snap


def render_score_histogram(scores, labels, path, eer: float | None = None):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    fig = Figure(figsize=(5, 3.2))
    ax = fig.add_subplot()
    bins = np.linspace(0.0, 1.0, 41)
    for cls in (0, 1):
        ax.hist(scores[labels == cls], bins=bins, alpha=0.6, color=CLASS_COLORS[cls],
                label=CLASS_NAMES[cls])
    ax.set_xlabel("P(spoof)")
    ax.set_ylabel("count")
    if eer is not None:
        ax.set_title(f"EER {100 * eer:.2f}%", fontsize=9)
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    _save(fig, path)


def render_training_curves(log: list, path):
    """Per-epoch loss terms (left) and training EER (right)."""
    fig = Figure(figsize=(8, 3.2))
    ax_loss, ax_eer = fig.subplots(1, 2)
    epochs = [e["epoch"] for e in log]
    for key in ("loss_all", "loss_cls", "loss_ppl", "loss_hsl", "loss_pfw"):
        ax_loss.plot(epochs, [e[key] for e in log], label=key[5:])
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=7, frameon=False)
    ax_eer.plot(epochs, [100 * e["train_eer"] for e in log], color="k")
    ax_eer.set_xlabel("epoch")
    ax_eer.set_ylabel("train EER (%)")
    fig.tight_layout()
    _save(fig, path)
