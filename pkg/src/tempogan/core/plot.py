"""Loss curves, ablation charts and augmentation previews."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.ndimage import uniform_filter1d  # noqa: E402

from tempogan.core.fields import GridField  # noqa: E402
from tempogan.db.database import LOSS_COLUMNS, fetch_losses  # noqa: E402

logger = logging.getLogger(__name__)

SMOOTHING_WINDOW = 101


def moving_average(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Centered moving average with edge padding; output length equals input length."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr
    window = max(1, min(window, arr.size))
    if window % 2 == 0:
        window -= 1
    return uniform_filter1d(arr, size=window, mode="nearest")


def plot_metrics(
    db_path: str | Path,
    out_dir: str | Path,
    run: str | None = None,
    window: int = SMOOTHING_WINDOW,
) -> list[Path]:
    """One image per logged loss: raw series light, smoothed series dark.

    Raises:
        ValueError: the metrics store holds no loss rows.
    """
    rows = fetch_losses(db_path, run)
    if not rows:
        raise ValueError(f"no loss rows in {db_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = sorted({r["run"] for r in rows})
    written = []
    for column in LOSS_COLUMNS:
        if column == "lr":
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        plotted = False
        for name in runs:
            series = [(r["iteration"], r[column]) for r in rows if r["run"] == name and r[column] is not None]
            if not series:
                continue
            it, val = map(np.asarray, zip(*series))
            line = ax.plot(it, val, alpha=0.25, linewidth=0.8)[0]
            ax.plot(it, moving_average(val, window), color=line.get_color(), linewidth=1.6, label=name)
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_xlabel("iteration")
        ax.set_ylabel(column)
        if len(runs) > 1:
            ax.legend()
        fig.tight_layout()
        path = out_dir / f"{column}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    logger.info(f"Wrote {len(written)} loss plots to {out_dir}")
    return written


def plot_ablation(
    table: Mapping[str, Mapping[str, float]], out_path: str | Path
) -> Path:
    """Bar chart per metric for an ablation report (config -> metric -> value)."""
    configs = list(table)
    metrics = sorted({m for row in table.values() for m in row})
    fig, axes = plt.subplots(1, max(1, len(metrics)), figsize=(3.2 * max(1, len(metrics)), 3.2))
    axes = np.atleast_1d(axes)
    for ax, metric in zip(axes, metrics):
        values = [table[c].get(metric, np.nan) for c in configs]
        ax.bar(range(len(configs)), values)
        ax.set_xticks(range(len(configs)), configs, rotation=45, ha="right")
        ax.set_title(metric)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def _image(field: GridField) -> np.ndarray:
    data = field.data
    if field.dim == 3:
        data = data[:, :, :, data.shape[3] // 2]
    if field.channels == 1:
        return data[0].T
    return np.linalg.norm(data, axis=0).T


def plot_preview(
    before: GridField, after: GridField, out_path: str | Path, title: str = ""
) -> Path:
    """Side-by-side image of a field and its augmented tile (magnitude for vectors)."""
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.5))
    for ax, fld, name in zip(axes, (before, after), ("source", "augmented")):
        ax.imshow(_image(fld), origin="lower", cmap="magma")
        ax.set_title(name)
        ax.set_axis_off()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
