"""Matplotlib rendering for the report paths (headless, deterministic output)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_pair", "render_mining", "render_fixture"]

_DPI = 130
# suppress the Software tag so rerenders are byte-identical
_META = {"metadata": {"Software": None}}


def _mip(mask) -> np.ndarray:
    return np.asarray(mask.data).max(axis=0)


def _overlay(gt2d: np.ndarray, pred2d: np.ndarray) -> np.ndarray:
    rgb = np.zeros(gt2d.shape + (3,), dtype=float)
    tp = (gt2d > 0) & (pred2d > 0)
    fn = (gt2d > 0) & (pred2d == 0)
    fp = (gt2d == 0) & (pred2d > 0)
    rgb[tp] = (0.85, 0.85, 0.85)
    rgb[fn] = (0.90, 0.25, 0.20)
    rgb[fp] = (0.25, 0.45, 0.95)
    return rgb


def _panels(path, panels):
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.4))
    if len(panels) == 1:
        axes = [axes]
    for ax, (title, img, kind) in zip(axes, panels):
        if kind == "gray":
            ax.imshow(img, cmap="gray", interpolation="nearest")
        else:
            ax.imshow(img, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, **_META)
    plt.close(fig)


def render_pair(gt_mask, pred_mask, path) -> None:
    """GT / prediction / error-overlay projections for a metrics report."""
    g = _mip(gt_mask)
    p = _mip(pred_mask)
    _panels(
        path,
        [
            ("ground truth", g, "gray"),
            ("prediction", p, "gray"),
            ("overlay (red FN, blue FP)", _overlay(g, p), "rgb"),
        ],
    )


def render_mining(gt_mask, pred_mask, dmask, path) -> None:
    """Prediction overlay with the mined discontinuity windows and their seeds."""
    g = _mip(gt_mask)
    p = _mip(pred_mask)
    rgb = _overlay(g, p)
    win = _mip(dmask.mask) > 0
    rgb[win] = 0.55 * rgb[win] + 0.45 * np.array((1.0, 0.85, 0.1))
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.imshow(rgb, interpolation="nearest")
    if len(dmask.seeds):
        ax.scatter(dmask.seeds[:, 2], dmask.seeds[:, 1], s=22, marker="x", c="k", linewidths=1.0)
    ax.set_title(f"mined windows ({len(dmask.seeds)} seeds)", fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, **_META)
    plt.close(fig)


def render_fixture(fix, path) -> None:
    """Fixture projection: intact network, fragmented copy, cut midpoints."""
    g = _mip(fix.gt_mask)
    f = _mip(fix.frag_mask)
    fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.6))
    axes[0].imshow(g, cmap="gray", interpolation="nearest")
    axes[0].set_title("network", fontsize=9)
    axes[1].imshow(f, cmap="gray", interpolation="nearest")
    if len(fix.cut_midpoints):
        axes[1].scatter(
            fix.cut_midpoints[:, 2], fix.cut_midpoints[:, 1], s=26, marker="x", c="r", linewidths=1.0
        )
    axes[1].set_title(f"fragmented ({len(fix.cut_midpoints)} cuts)", fontsize=9)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, **_META)
    plt.close(fig)
