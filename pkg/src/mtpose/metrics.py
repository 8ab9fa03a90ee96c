"""Outcome classification (TP/FP/FN) and precision/recall/F1 per test case cell."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from mtpose.adapters import Prediction
from mtpose.dataset import BoundingBox, HandLandmarks, tight_bbox
from mtpose.testgen import tc_rank

TASKS = ("segmentation", "localisation")
OUTCOMES = ("TP", "FP", "FN")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        # both boxes have zero area
        return 1.0 if a == b else 0.0
    return min(max(inter / union, 0.0), 1.0)


def mean_ed(pred: HandLandmarks, gt: HandLandmarks) -> float:
    """Mean over the 21 keypoints of the per-point Euclidean distance."""
    d = np.hypot(*(pred.points - gt.points).T)
    return math.fsum(d.tolist()) / len(d)


def classify(pred: Prediction, gt: HandLandmarks, iou_threshold: float = 0.5,
             ed_threshold: float = 10.0) -> tuple[str, str]:
    """(segmentation, localisation) outcome for one prediction.

    Every test image holds exactly one hand, so a miss is FN and a detection
    is TP or FP; there is no TN.
    """
    if iou_threshold <= 0 or ed_threshold <= 0:
        raise ValueError("thresholds must be positive")
    if not pred.detected:
        return "FN", "FN"
    seg = "TP" if iou(pred.bbox, tight_bbox(gt)) > iou_threshold else "FP"
    loc = "TP" if mean_ed(pred.keypoints, gt) < ed_threshold else "FP"
    return seg, loc


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn


def accumulate(outcomes: Iterable[str]) -> ConfusionCounts:
    tally = {"TP": 0, "FP": 0, "FN": 0}
    for o in outcomes:
        if o not in tally:
            raise ValueError(f"unknown outcome {o!r}")
        tally[o] += 1
    return ConfusionCounts(tally["TP"], tally["FP"], tally["FN"])


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


@dataclass(frozen=True)
class MetricRecord:
    model_id: str
    tc_id: str
    task: str
    counts: ConfusionCounts

    @property
    def precision(self) -> float:
        return _ratio(self.counts.tp, self.counts.tp + self.counts.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.counts.tp, self.counts.tp + self.counts.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def metric(self, name: str) -> float:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {
            "model": self.model_id, "tc_id": self.tc_id, "task": self.task,
            "tp": self.counts.tp, "fp": self.counts.fp, "fn": self.counts.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> MetricRecord:
        return cls(raw["model"], raw["tc_id"], raw["task"],
                   ConfusionCounts(int(raw["tp"]), int(raw["fp"]), int(raw["fn"])))


def derive(counts: ConfusionCounts, model_id: str, tc_id: str, task: str) -> MetricRecord:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    return MetricRecord(model_id, tc_id, task, counts)


def record_key(rec: MetricRecord):
    return (rec.model_id, tc_rank(rec.tc_id), TASKS.index(rec.task))


def score_outcomes(model_id: str, outcomes: Iterable[tuple[str, str, str]]) -> list[MetricRecord]:
    """Aggregate (tc_id, segmentation outcome, localisation outcome) triples into records."""
    cells: dict[tuple[str, str], list[str]] = defaultdict(list)
    for tc_id, seg, loc in outcomes:
        cells[(tc_id, "segmentation")].append(seg)
        cells[(tc_id, "localisation")].append(loc)
    records = [derive(accumulate(v), model_id, tc, task) for (tc, task), v in cells.items()]
    return sorted(records, key=record_key)
