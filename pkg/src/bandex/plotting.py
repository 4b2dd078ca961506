"""Figure rendering for maps, episodes, training curves and mode comparisons.

Everything draws with the Agg backend and writes PNG files next to the CSV
reports; nothing here opens a window.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .world import FREE, OCCUPIED, UNKNOWN

_CELL_COLORS = {
    int(UNKNOWN): (0.75, 0.75, 0.78),
    int(FREE): (1.0, 1.0, 1.0),
    int(OCCUPIED): (0.15, 0.15, 0.18),
}

_ROBOT_COLORS = ["tab:red", "tab:blue", "tab:orange", "tab:green",
                 "tab:purple", "tab:brown", "tab:pink", "tab:cyan"]


def _grid_rgb(cells: np.ndarray) -> np.ndarray:
    rgb = np.zeros(cells.shape + (3,))
    for label, color in _CELL_COLORS.items():
        rgb[cells == label] = color
    return rgb


def plot_grid(cells: np.ndarray, resolution: float, path, title: str | None = None) -> None:
    h, w = cells.shape
    fig, ax = plt.subplots(figsize=(5, 5), dpi=110)
    ax.imshow(_grid_rgb(cells), origin="lower",
              extent=[0, w * resolution, 0, h * resolution])
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_episode(cells: np.ndarray, resolution: float, trajectories, path,
                 title: str | None = None) -> None:
    """Map with one colored polyline per robot; dots mark start poses."""
    h, w = cells.shape
    fig, ax = plt.subplots(figsize=(5.5, 5.5), dpi=110)
    ax.imshow(_grid_rgb(cells), origin="lower",
              extent=[0, w * resolution, 0, h * resolution])
    for i, traj in enumerate(trajectories):
        pts = np.asarray(traj)
        color = _ROBOT_COLORS[i % len(_ROBOT_COLORS)]
        ax.plot(pts[:, 0], pts[:, 1], "-", lw=1.4, color=color, label=f"robot {i}")
        ax.plot(pts[0, 0], pts[0, 1], "o", ms=6, color=color)
    ax.legend(loc="upper right", fontsize=7)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_training_curves(curve_csv, path) -> None:
    """Makespan, explored rate and loss traces over training episodes."""
    with open(curve_csv) as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return
    ep = np.array([int(r["episode"]) for r in rows])
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), dpi=110)
    panels = [
        ("makespan", "makespan [m]"),
        ("explored_rate", "explored rate"),
        ("critic_loss", "critic loss"),
        ("entropy", "policy entropy"),
    ]
    for ax, (key, label) in zip(axes.ravel(), panels):
        vals = np.array([float(r[key]) for r in rows])
        ax.plot(ep, vals, lw=0.8, alpha=0.5, color="tab:blue")
        if len(vals) >= 10:
            k = max(1, len(vals) // 25)
            smooth = np.convolve(vals, np.ones(k) / k, mode="valid")
            ax.plot(ep[k - 1 :], smooth, lw=1.6, color="tab:red")
        ax.set_xlabel("episode")
        ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_mode_comparison(summaries, path) -> None:
    """Bar chart of worst-robot travel distance and communication volume."""
    modes = [s.mode for s in summaries]
    x = np.arange(len(modes))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4), dpi=110)
    ax1.bar(x, [s.mean_makespan for s in summaries],
            yerr=[s.std_makespan for s in summaries], capsize=4, color="tab:blue")
    ax1.set_xticks(x, modes, rotation=20)
    ax1.set_ylabel("travel distance D [m]")
    width = 0.4
    ax2.bar(x - width / 2, [max(s.mean_uv, 1e-9) for s in summaries], width,
            label="UV", color="tab:orange")
    ax2.bar(x + width / 2, [max(s.mean_dv, 1e-9) for s in summaries], width,
            label="DV", color="tab:green")
    ax2.set_yscale("log")
    ax2.set_xticks(x, modes, rotation=20)
    ax2.set_ylabel("bytes (log scale)")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
