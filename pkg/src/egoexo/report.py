"""Report emission: JSON summaries, CSV tables, and matplotlib figures.

Every evaluation command writes the delimited data next to the rendered
figure so plots can be regenerated (and diffed) from the CSVs alone.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import SchemaError
from .metrics import CMCCurve, chance_cmc


def write_json(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", "utf-8")
    return path


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_cmc_csv(curve: CMCCurve, path: str | Path) -> Path:
    return write_csv(path, ["k", "cmc"], [(k + 1, v) for k, v in enumerate(curve.values)])


def read_cmc_csv(path: str | Path) -> CMCCurve:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["k", "cmc"]:
            raise SchemaError(f"{path}: expected a 'k,cmc' header")
        values = [float(row[1]) for row in reader if row]
    if not values:
        raise SchemaError(f"{path}: no curve points")
    return CMCCurve.from_values(np.asarray(values), len(values))


def plot_cmc(
    curves: Sequence[tuple[str, CMCCurve]],
    path: str | Path,
    title: str = "Cumulative matching curve",
    include_chance: bool = True,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for label, curve in curves:
        ks = np.arange(1, curve.gallery_size + 1)
        ax.plot(ks, curve.values, label=f"{label} (AUC {curve.auc:.3f})")
    if include_chance and curves:
        n = curves[0][1].gallery_size
        ch = chance_cmc(n)
        ax.plot(np.arange(1, n + 1), ch.values, "--", color="purple",
                label=f"chance (AUC {ch.auc:.3f})")
    ax.set_xlabel("rank k")
    ax.set_ylabel("CMC(k)")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_probe_grid(accuracies: dict, chance: float, path: str | Path) -> Path:
    """Heatmap of the 3x3 view-invariance accuracy grid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(accuracies.keys())
    cols = list(next(iter(accuracies.values())).keys())
    grid = np.array([[accuracies[r][c] for c in cols] for r in rows])
    fig, ax = plt.subplots(figsize=(4.6, 3.8))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(cols)), [f"eval {c}" for c in cols])
    ax.set_yticks(range(len(rows)), rows)
    for i in range(len(rows)):
        for j in range(len(cols)):
            ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                    color="white" if grid[i, j] < 0.6 else "black", fontsize=9)
    ax.set_title(f"View-invariance probe (chance {chance:.3f})")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_synthesis_samples(
    triplets: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    path: str | Path,
    max_cols: int = 6,
) -> Path:
    """Qualitative grid: exo conditioning / ground-truth ego / synthesized
    ego, one column per example."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = min(len(triplets), max_cols)
    if n == 0:
        raise SchemaError("no samples to plot")
    fig, axes = plt.subplots(3, n, figsize=(1.9 * n, 5.8), squeeze=False)
    row_names = ("exocentric", "ego ground truth", "ego synthesized")
    for col in range(n):
        for row in range(3):
            ax = axes[row][col]
            ax.imshow(triplets[col][row])
            ax.set_xticks([])
            ax.set_yticks([])
            if col == 0:
                ax.set_ylabel(row_names[row], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_loss_history(history: Sequence[dict], keys: Sequence[str], path: str | Path,
                      title: str = "Training loss") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    epochs = [h["epoch"] for h in history]
    for key in keys:
        values = [h.get(key) for h in history]
        if any(v is not None for v in values):
            ax.plot(epochs, values, label=key)
    ax.set_xlabel("epoch")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


class JsonlLogger:
    """Append-only JSON-lines event log; also mirrors events to stdout
    logging when verbose."""

    def __init__(self, path: Optional[str | Path], echo: bool = False):
        self.path = Path(path) if path is not None else None
        self.echo = echo
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self._fh = None

    def __call__(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True, default=str)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
        if self.echo:
            print(line)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
