"""Rendered outputs: confidence grids, PGM dumps, and report figures.

Figures are written to files (Agg backend); every report-style CSV the CLI
emits gets a companion PNG from here.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import CcuModel

__all__ = [
    "confidence_grid",
    "write_grid_csv",
    "write_pgm",
    "save_grid_figure",
    "save_attack_figure",
    "save_eval_figure",
    "save_radius_histogram",
]


def confidence_grid(
    model: CcuModel,
    bounds: tuple[float, float, float, float],
    resolution: int,
    softmax_only: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Confidence on a resolution x resolution grid of a 2-d model.

    Returns (xs, ys, conf) with conf[i, j] at (xs[j], ys[i]).
    """
    if model.dim != 2:
        raise ValueError("confidence grids require a 2-d model")
    xmin, xmax, ymin, ymax = bounds
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    conf = model.softmax_confidence(pts) if softmax_only else model.confidence(pts)
    return xs, ys, np.asarray(conf).reshape(resolution, resolution)


def write_grid_csv(path: str, xs: np.ndarray, ys: np.ndarray, conf: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("x,y,confidence\n")
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                fh.write(f"{x:.17g},{y:.17g},{conf[i, j]:.17g}\n")


def write_pgm(path: str, conf: np.ndarray, n_classes: int) -> None:
    """8-bit binary PGM; confidence is mapped linearly from [1/M, 1] onto
    the 0..255 gray ramp.  The top pixel row is the largest y row.
    """
    lo = 1.0 / n_classes
    gray = np.clip(np.rint((conf - lo) / (1.0 - lo) * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray[::-1].tobytes())


def save_grid_figure(
    path: str,
    xs: np.ndarray,
    ys: np.ndarray,
    conf: np.ndarray,
    n_classes: int,
    points: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    title: str = "confidence",
) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(
        conf,
        origin="lower",
        extent=(xs[0], xs[-1], ys[0], ys[-1]),
        vmin=1.0 / n_classes,
        vmax=1.0,
        cmap="viridis",
        aspect="auto",
    )
    fig.colorbar(im, ax=ax, label="max class probability")
    if points is not None:
        c = labels if labels is not None else "k"
        ax.scatter(points[:, 0], points[:, 1], c=c, s=6, cmap="coolwarm",
                   edgecolors="none", alpha=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_attack_figure(path: str, bounds: np.ndarray, attacked: np.ndarray) -> None:
    """Attacked confidence against the certified bound, with the y = x line."""
    fig, ax = plt.subplots(figsize=(4.8, 4.4))
    lim_lo = min(float(np.min(bounds)), float(np.min(attacked)))
    lim_hi = max(float(np.max(bounds)), float(np.max(attacked)))
    pad = 0.05 * max(lim_hi - lim_lo, 1e-3)
    ax.plot([lim_lo - pad, lim_hi + pad], [lim_lo - pad, lim_hi + pad],
            color="gray", lw=1, label="bound = attacked")
    ax.scatter(bounds, attacked, s=12, alpha=0.7)
    ax.set_xlabel("certified bound")
    ax.set_ylabel("attacked confidence")
    ax.set_title("attack vs certificate")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_eval_figure(path: str, names: list[str], aucs: list[float], auprs: list[float]) -> None:
    fig, ax = plt.subplots(figsize=(max(4.0, 1.3 * len(names)), 4.0))
    pos = np.arange(len(names))
    width = 0.38
    ax.bar(pos - width / 2, aucs, width, label="AUC")
    ax.bar(pos + width / 2, auprs, width, label="AUPR")
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("area")
    ax.set_title("in- vs out-distribution separation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_radius_histogram(path: str, radii: np.ndarray) -> None:
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.hist(np.asarray(radii, dtype=float), bins=30, color="#4878d0")
    ax.set_xlabel("certified radius (metric units)")
    ax.set_ylabel("count")
    ax.set_title("certified radii")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
