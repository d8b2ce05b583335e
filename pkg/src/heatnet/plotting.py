"""Optional PNG rendering of predictions in the global frame (requires matplotlib)."""

from __future__ import annotations

from typing import Sequence

from .scene import to_global


def render_predictions(samples: Sequence, preds: Sequence, path, max_panels: int = 6) -> None:
    """One panel per sample: map raster, observed histories, predicted and true futures."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise OSError("rendering figures needs matplotlib (pip install heatnet[plot])") from exc

    pairs = list(zip(samples, preds))[:max_panels]
    cols = min(3, len(pairs)) or 1
    rows = (len(pairs) + cols - 1) // cols or 1
    fig, axes = plt.subplots(rows, cols, figsize=(4.5 * cols, 4.5 * rows), squeeze=False)
    for ax in axes.flat[len(pairs):]:
        ax.axis("off")
    for ax, (sample, ps) in zip(axes.flat, pairs):
        if sample.map is not None:
            he = sample.map.half_extent
            cx, cy = sample.map.center
            ax.imshow(sample.map.pixels, cmap="Greys", extent=(cx - he, cx + he, cy - he, cy + he), alpha=0.5)
        for hist, anchor in zip(sample.histories, sample.current):
            past = to_global(hist[:, :2], anchor)
            ax.plot(past[:, 0], past[:, 1], color="0.3", lw=1.5)
        glob = ps.global_trajectories()
        truth = [to_global(f, a) for f, a in zip(sample.futures, sample.current[sample.target_mask])]
        for k, (pred, true) in enumerate(zip(glob, truth)):
            ax.plot(true[:, 0], true[:, 1], color="tab:green", lw=1.2, label="truth" if k == 0 else None)
            ax.plot(pred[:, 0], pred[:, 1], "--", color="tab:red", lw=1.2, label="prediction" if k == 0 else None)
        ax.set_title(f"{sample.scene_id} t={sample.tick}")
        ax.set_aspect("equal")
        ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
