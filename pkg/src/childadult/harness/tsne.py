"""2-D t-SNE export of segment embeddings with a silhouette summary."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.manifold import TSNE
from sklearn.metrics import silhouette_score

from . import plots

logger = logging.getLogger(__name__)

MIN_POINTS = 10


@dataclass
class TsneResult:
    points: np.ndarray
    silhouette: float
    csv_path: Path
    image_path: Path


def tsne_points(embeddings: np.ndarray, seed: int = 0) -> np.ndarray:
    n = len(embeddings)
    perplexity = min(30.0, (n - 1) / 3)
    tsne = TSNE(n_components=2, perplexity=perplexity, init="pca", random_state=seed)
    return tsne.fit_transform(np.asarray(embeddings, dtype=np.float64))


def class_silhouette(points: np.ndarray, labels: Sequence[str]) -> float:
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2 or np.ptp(points, axis=0).max() == 0:
        warnings.warn("silhouette undefined for degenerate points or a single class", RuntimeWarning, stacklevel=2)
        return float("nan")
    return float(silhouette_score(points, labels))


def tsne_export(embeddings, labels: Sequence[str], out_prefix: str | Path, seed: int = 0,
                title: str = "") -> TsneResult:
    """Write ``<prefix>.csv`` (x, y, label) and ``<prefix>.png``."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = [str(v) for v in labels]
    if x.ndim != 2 or len(x) < MIN_POINTS:
        raise ValueError(f"t-SNE export needs at least {MIN_POINTS} embeddings, got {len(x)}")
    if len(labels) != len(x):
        raise ValueError(f"{len(labels)} labels for {len(x)} embeddings")
    if np.ptp(x, axis=0).max() == 0:
        warnings.warn("all embeddings are identical; emitting a collapsed layout", RuntimeWarning, stacklevel=2)
        points = np.zeros((len(x), 2))
    else:
        points = tsne_points(x, seed)
    sil = class_silhouette(points, labels)
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_name(prefix.name + ".csv")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "label"])
        for (px, py), lab in zip(points, labels):
            w.writerow([repr(float(px)), repr(float(py)), lab])
    image = plots.scatter_by_class(points, labels, prefix.with_name(prefix.name + ".png"),
                                   title or f"silhouette {sil:.3f}")
    logger.info("t-SNE export: %d points, silhouette %.4f", len(x), sil)
    return TsneResult(points, sil, csv_path, image)
