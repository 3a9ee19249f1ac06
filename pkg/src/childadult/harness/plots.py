"""Figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"child": "#d95f02", "adult": "#1b9e77"}
# PNG text chunks carry the matplotlib version by default; drop it so files stay byte-stable
_PNG_META = {"Software": None}


def _figure(width: float = 5.0, ratio: float = 0.75):
    fig, ax = plt.subplots(figsize=(width, width * ratio), dpi=100)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def scatter_by_class(points: np.ndarray, labels: Sequence[str], path: str | Path, title: str = "") -> Path:
    fig, ax = _figure(5.0, 1.0)
    labels = np.asarray(labels)
    for cls in ("child", "adult"):
        sel = labels == cls
        if sel.any():
            ax.scatter(points[sel, 0], points[sel, 1], s=9, alpha=0.7, c=COLORS[cls], label=cls, linewidths=0)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def loss_curves(train: Sequence[float], val: Sequence[float], path: str | Path,
                best_epoch: int | None = None, ylabel: str = "NT-Xent loss") -> Path:
    fig, ax = _figure()
    epochs = np.arange(1, len(train) + 1)
    ax.plot(epochs, train, marker="o", ms=3, label="train")
    ax.plot(epochs, val, marker="s", ms=3, label="validation")
    if best_epoch is not None and best_epoch >= 0:
        ax.axvline(best_epoch + 1, color="0.6", ls="--", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def subgroup_bars(subgroups: Mapping[str, Mapping], path: str | Path, overall: float | None = None) -> Path:
    keys = list(subgroups)
    fig, ax = _figure(max(4.0, 0.8 * len(keys) + 1.5))
    values = [subgroups[k]["macro_f1"] for k in keys]
    bars = ax.bar(range(len(keys)), values, color="#7570b3")
    for bar, k in zip(bars, keys):
        ax.annotate(f"n={subgroups[k]['support']}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=7)
    if overall is not None:
        ax.axhline(overall, color="0.3", ls="--", lw=1, label="overall")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xticks(range(len(keys)), keys, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("macro F1")
    return _save(fig, path)
