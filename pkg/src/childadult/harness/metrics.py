"""Macro-F1 and demographic-stratified evaluation reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import Demographics

CLASSES = ("child", "adult")
AGE_GROUPS = ("AG1", "AG2", "AG3")


def _as_child_flags(values) -> np.ndarray:
    """Map labels ("child"/"adult" or 1/0) to a boolean child mask."""
    arr = np.asarray(list(values), dtype=object)
    out = np.empty(len(arr), dtype=bool)
    for i, v in enumerate(arr):
        if v in ("child", 1, True):
            out[i] = True
        elif v in ("adult", 0, False):
            out[i] = False
        else:
            raise ValueError(f"unrecognized label {v!r}")
    return out


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


@dataclass
class F1Result:
    macro_f1: float
    per_class_f1: dict[str, float]
    # rows: true class, columns: predicted class, both ordered (child, adult)
    confusion: list[list[int]]

    @property
    def support(self) -> int:
        return sum(map(sum, self.confusion))


def macro_f1(predictions, labels) -> F1Result:
    pred = _as_child_flags(predictions)
    true = _as_child_flags(labels)
    if len(pred) != len(true):
        raise ValueError(f"{len(pred)} predictions for {len(true)} labels")
    if len(true) == 0:
        raise ValueError("cannot score an empty set")
    cc = int(np.sum(true & pred))
    ca = int(np.sum(true & ~pred))
    ac = int(np.sum(~true & pred))
    aa = int(np.sum(~true & ~pred))
    child = _f1(cc, ac, ca)
    adult = _f1(aa, ca, ac)
    return F1Result((child + adult) / 2, {"child": child, "adult": adult}, [[cc, ca], [ac, aa]])


def age_group(age_months: int | None) -> str:
    if age_months is None:
        return "unknown"
    if age_months <= 90:
        return "AG1"
    if age_months <= 118:
        return "AG2"
    return "AG3"


def subgroup_keys(demo: Demographics) -> tuple[str, str]:
    return f"age:{age_group(demo.age_months)}", f"gender:{demo.gender or 'unknown'}"


@dataclass
class EvalReport:
    split: str
    macro_f1: float
    per_class_f1: dict[str, float]
    confusion: list[list[int]]
    subgroups: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "macro_f1": self.macro_f1,
            "per_class_f1": dict(self.per_class_f1),
            "confusion": [list(r) for r in self.confusion],
            "subgroups": {k: dict(v) for k, v in self.subgroups.items()},
        }

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        return path


def evaluate_subgroups(predictions, labels, demographics: Sequence[Demographics], split: str = "test") -> EvalReport:
    """Overall and per-bin scores; each segment carries its session's demographics.

    Age bins are AG1 (<= 90 months), AG2 (91-118) and AG3 (>= 119); gender
    bins are male/female. Missing metadata lands in an ``unknown`` bin.
    """
    pred = list(predictions)
    true = list(labels)
    if not len(pred) == len(true) == len(demographics):
        raise ValueError("predictions, labels and demographics must have equal lengths")
    overall = macro_f1(pred, true)
    members: dict[str, list[int]] = {}
    for i, demo in enumerate(demographics):
        for key in subgroup_keys(demo):
            members.setdefault(key, []).append(i)

    def order(key):
        dim, _, name = key.partition(":")
        names = AGE_GROUPS if dim == "age" else ("male", "female")
        return (dim != "age", names.index(name) if name in names else len(names))

    subgroups = {}
    for key in sorted(members, key=order):
        idx = members[key]
        r = macro_f1([pred[i] for i in idx], [true[i] for i in idx])
        subgroups[key] = {"macro_f1": r.macro_f1, "support": len(idx)}
    return EvalReport(split, overall.macro_f1, overall.per_class_f1, overall.confusion, subgroups)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["split", "macro_f1", "per_class_f1", "confusion", "subgroups"],
    "additionalProperties": False,
    "properties": {
        "split": {"type": "string"},
        "macro_f1": {"type": "number", "minimum": 0, "maximum": 1},
        "per_class_f1": {
            "type": "object",
            "required": ["child", "adult"],
            "additionalProperties": False,
            "properties": {c: {"type": "number", "minimum": 0, "maximum": 1} for c in CLASSES},
        },
        "confusion": {
            "type": "array",
            "minItems": 2,
            "maxItems": 2,
            "items": {
                "type": "array",
                "minItems": 2,
                "maxItems": 2,
                "items": {"type": "integer", "minimum": 0},
            },
        },
        "subgroups": {
            "type": "object",
            "propertyNames": {"pattern": r"^(age:(AG1|AG2|AG3|unknown)|gender:(male|female|unknown))$"},
            "additionalProperties": {
                "type": "object",
                "required": ["macro_f1", "support"],
                "additionalProperties": False,
                "properties": {
                    "macro_f1": {"type": "number", "minimum": 0, "maximum": 1},
                    "support": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}
