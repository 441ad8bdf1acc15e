"""Matplotlib figures written straight to files (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_TERMS = ("chd", "l_def", "l_ol", "total")


def loss_curves(rows, path) -> None:
    """Log-scale loss curves from training-log rows (dicts keyed by column)."""
    steps = np.array([float(r["step"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in LOSS_TERMS:
        vals = np.array([float(r[name]) for r in rows])
        if np.any(vals > 0):
            ax.plot(steps, np.where(vals > 0, vals, np.nan), label=name, lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def overlap_curve(m_olap: dict, path) -> None:
    ts = sorted(m_olap)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ts, [m_olap[t] for t in ts], "o-")
    ax.axhline(1.0, color="0.6", lw=0.8, ls="--")
    ax.set_xscale("log")
    ax.set_xlabel("threshold t")
    ax.set_ylabel("m_olap")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def patch_areas(areas, path, gt_area=None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(np.arange(len(areas)), areas)
    if gt_area is not None:
        ax.axhline(gt_area / len(areas), color="k", lw=0.8, ls="--", label="GT area / K")
        ax.legend()
    ax.set_xlabel("patch")
    ax.set_ylabel("area")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def distortion_figure(dmap, path, title=None) -> None:
    """Four panels (D_E, D_G, D_sk, D_str) over the UV square."""
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
    for ax, (name, grid) in zip(axes, dmap.items()):
        im = ax.imshow(grid.T, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
        ax.set_title(name)
        ax.set_xlabel("u")
        fig.colorbar(im, ax=ax, fraction=0.046)
    axes[0].set_ylabel("v")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
