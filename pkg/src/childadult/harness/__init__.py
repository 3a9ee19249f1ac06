from .metrics import EvalReport, F1Result, age_group, evaluate_subgroups, macro_f1
from .pipeline import SegmentFeatures, evaluate_head, split_corpus, write_report
from .training import (
    EarlyStopState,
    FinetuneConfig,
    PretrainConfig,
    TrainingDivergence,
    early_stop_update,
    finetune,
    pretrain,
)
from .tsne import tsne_export

__all__ = [
    "EarlyStopState",
    "EvalReport",
    "F1Result",
    "FinetuneConfig",
    "PretrainConfig",
    "SegmentFeatures",
    "TrainingDivergence",
    "age_group",
    "early_stop_update",
    "evaluate_head",
    "evaluate_subgroups",
    "finetune",
    "macro_f1",
    "pretrain",
    "split_corpus",
    "tsne_export",
    "write_report",
]
