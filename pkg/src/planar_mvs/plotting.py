"""Report figures rendered to PNG files (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.tmp.png")
    fig.savefig(tmp)
    plt.close(fig)
    tmp.replace(path)
    return path


def depth_figure(est: np.ndarray, gt: Optional[np.ndarray], path, title: str = "", rel_tol: float = 0.01) -> Path:
    """Estimated depth, ground truth and relative error side by side."""
    with plt.rc_context(RC):
        ncol = 3 if gt is not None else 1
        fig, axes = plt.subplots(1, ncol, figsize=(3.2 * ncol, 2.6), squeeze=False)
        axes = axes[0]
        valid = est > 0
        lo, hi = (np.percentile(est[valid], [1, 99]) if valid.any() else (0.0, 1.0))
        if gt is not None and (gt > 0).any():
            lo, hi = np.percentile(gt[gt > 0], [1, 99])
        im = axes[0].imshow(np.where(valid, est, np.nan), cmap="viridis", vmin=lo, vmax=hi)
        axes[0].set_title("estimate")
        fig.colorbar(im, ax=axes[0], fraction=0.046)
        if gt is not None:
            im = axes[1].imshow(np.where(gt > 0, gt, np.nan), cmap="viridis", vmin=lo, vmax=hi)
            axes[1].set_title("ground truth")
            fig.colorbar(im, ax=axes[1], fraction=0.046)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(gt > 0, np.abs(est - gt) / gt, np.nan)
            im = axes[2].imshow(rel, cmap="magma", vmin=0, vmax=5 * rel_tol)
            axes[2].set_title(f"relative error (tol {rel_tol:g})")
            fig.colorbar(im, ax=axes[2], fraction=0.046)
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def threshold_curve(errors: Sequence[np.ndarray], labels: Sequence[str], path, relative: bool = True) -> Path:
    """Cumulative fraction of pixels below an error threshold, one line per run."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 2.6))
        ts = np.logspace(-4, 0, 100) if relative else np.logspace(-4, 0.5, 100)
        for err, lab in zip(errors, labels):
            err = np.asarray(err).ravel()
            ax.plot(ts, [(err < t).mean() for t in ts], label=lab)
        ax.set_xscale("log")
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("relative depth error" if relative else "absolute depth error")
        ax.set_ylabel("fraction of pixels")
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        return _save(fig, path)


def timing_figure(timings: dict, path) -> Path:
    """Horizontal bars of per-stage wall-clock time."""
    keys = [k for k in timings if k != "total"]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 0.35 * len(keys) + 0.8))
        ax.barh(keys[::-1], [timings[k] for k in keys][::-1], color="0.4")
        ax.set_xlabel("seconds")
        return _save(fig, path)
