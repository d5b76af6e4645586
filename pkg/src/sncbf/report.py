"""Run-report rendering: summary tables as CSV and matplotlib figures
(barrier level sets, simulated traces) written next to them."""

from __future__ import annotations

import csv
import os
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import nn
from .sim import Trace
from .system import RegionSpec


def fmt(x) -> str:
    """Six significant digits, plain decimal point."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def write_summary_csv(path: str, rows: list, columns: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c, "")) for c in columns])


def render_barrier_figure(
    net: nn.Mlp, regions: RegionSpec, path: str, grid_n: int = 200
):
    """Heatmap of B over the first two state dimensions with the zero level
    set and the region boxes overlaid."""
    X = regions.X
    if X.dim < 2:
        raise ValueError("barrier figure needs at least two state dimensions")
    xs = np.linspace(X.lo[0], X.hi[0], grid_n)
    ys = np.linspace(X.lo[1], X.hi[1], grid_n)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    mid = 0.5 * (X.lo + X.hi)
    pts = np.tile(mid, (grid_n * grid_n, 1))
    pts[:, 0] = XX.ravel()
    pts[:, 1] = YY.ravel()
    Z = nn.forward_batch(net, pts).reshape(grid_n, grid_n)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.pcolormesh(XX, YY, Z, shading="auto", cmap="RdBu")
    fig.colorbar(im, ax=ax, label="B(x)")
    ax.contour(XX, YY, Z, levels=[0.0], colors="k", linewidths=1.5)
    for box, color, label in (
        (regions.X_I, "tab:green", "initial"),
        (regions.safe.box, "tab:orange", "safe/unsafe box"),
    ):
        if box is None:
            continue
        ax.add_patch(
            plt.Rectangle(
                (box.lo[0], box.lo[1]),
                box.hi[0] - box.lo[0],
                box.hi[1] - box.lo[1],
                fill=False,
                edgecolor=color,
                label=label,
            )
        )
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_trace_figure(trace: Trace, path: str):
    """Barrier value along a simulated trajectory."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(trace.times, trace.barrier, label="B(x_t)")
    if trace.barrier_lb is not None:
        ax.plot(trace.times, trace.barrier_lb, label="lower bound", linestyle="--")
    ax.axhline(0.0, color="k", linewidth=0.8)
    if trace.first_exit_time is not None:
        ax.axvline(trace.first_exit_time, color="r", linestyle=":", label="first exit")
    ax.set_xlabel("t")
    ax.set_ylabel("barrier value")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_history_figure(history: list, path: str):
    """Loss curves across training epochs or rounds."""
    if not history:
        return
    keys = [k for k in history[0] if k not in ("epoch", "round", "status")]
    xs = [row.get("epoch", row.get("round", i)) for i, row in enumerate(history)]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in keys:
        vals = [row[k] for row in history]
        if all(isinstance(v, (int, float)) for v in vals):
            ax.plot(xs, vals, label=k)
    ax.set_xlabel("epoch")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
