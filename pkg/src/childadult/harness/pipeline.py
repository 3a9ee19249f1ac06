"""Manifest-level glue shared by the CLI and the end-to-end checks."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..corpus import SessionManifest, split_sessions
from ..encoder import Encoder, pool
from .metrics import EvalReport, evaluate_subgroups
from .plots import subgroup_bars
from .training import (
    FinetuneConfig,
    FinetuneResult,
    LabeledSegments,
    encode_segments,
    extract_segments,
    finetune,
    predict_logits,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def split_corpus(sessions: Sequence[SessionManifest], seed: int = 0) -> dict[str, list[SessionManifest]]:
    assignment = split_sessions(sessions, seed=seed)
    return {name: [s for s in sessions if s.session_id in assignment[name]] for name in SPLITS}


class SegmentFeatures:
    """Labeled segments of one split plus their frozen-backbone layer stacks."""

    def __init__(self, encoder: Encoder, sessions: Sequence[SessionManifest]):
        self.segments: LabeledSegments = extract_segments(sessions)
        self.layers = encode_segments(encoder, self.segments.waveforms)

    @property
    def labels(self) -> np.ndarray:
        return self.segments.labels

    def pooled(self) -> np.ndarray:
        """Mean-pooled final-layer embeddings, (N, model_dim)."""
        return pool(self.layers[:, -1]).numpy()


def finetune_on_splits(encoder: Encoder, splits: dict[str, list[SessionManifest]],
                       config: FinetuneConfig) -> FinetuneResult:
    train = SegmentFeatures(encoder, splits["train"])
    val = SegmentFeatures(encoder, splits["val"])
    return finetune(train.layers, train.labels, val.layers, val.labels, config)


def evaluate_head(encoder: Encoder, head: torch.nn.Module, sessions: Sequence[SessionManifest],
                  split: str = "test", features: SegmentFeatures | None = None) -> EvalReport:
    features = features or SegmentFeatures(encoder, sessions)
    pred = (predict_logits(head, features.layers) > 0).numpy().astype(int)
    return evaluate_subgroups(pred, features.labels, features.segments.demographics, split)


def write_report(report: EvalReport, path: str | Path) -> dict[str, Path]:
    """JSON report plus a subgroup CSV and bar chart alongside it."""
    path = report.write(path)
    csv_path = path.with_suffix(".subgroups.csv")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "macro_f1", "support"])
        w.writerow(["overall", repr(report.macro_f1), sum(map(sum, report.confusion))])
        for key, v in report.subgroups.items():
            w.writerow([key, repr(v["macro_f1"]), v["support"]])
    png = subgroup_bars(report.subgroups, path.with_suffix(".subgroups.png"), overall=report.macro_f1)
    return {"report": path, "csv": csv_path, "figure": png}
