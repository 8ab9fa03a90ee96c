"""Verdicts for the four metamorphic relations.

MR1 (performance tracks the number of occluded keypoints) is judged by a
sign-constrained Spearman correlation between occlusion level and score.
MR2-MR4 (finger occlusion, exposure change and motion blur should not hurt)
are judged by the worst relative drop from the baseline score.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from mtpose.dataset import NUM_KEYPOINTS
from mtpose.metrics import TASKS, MetricRecord
from mtpose.testgen import ALL_MRS, BASELINE, MR_TCS, mr_of, tc1_level, tc_rank

PRIMARY_METRIC = "f1"
SUPPLEMENTARY_METRICS = ("precision", "recall")
METRICS = (PRIMARY_METRIC,) + SUPPLEMENTARY_METRICS
SATISFIED, VIOLATED = "satisfied", "violated"


class InsufficientDataError(ValueError):
    pass


class IncompleteSeriesError(InsufficientDataError):
    pass


@dataclass(frozen=True)
class MRVerdict:
    mr_id: str
    model_id: str
    task: str
    metric: str
    verdict: str
    statistic: float
    threshold: float
    method: str
    records: tuple[str, ...] = ()
    vacuous: bool = False

    @property
    def satisfied(self) -> bool:
        return self.verdict == SATISFIED

    @property
    def primary(self) -> bool:
        return self.metric == PRIMARY_METRIC

    def to_dict(self) -> dict:
        return {
            "mr_id": self.mr_id, "model": self.model_id, "task": self.task, "metric": self.metric,
            "primary": self.primary, "verdict": self.verdict, "statistic": self.statistic,
            "threshold": self.threshold, "method": self.method, "vacuous": self.vacuous,
            "records": list(self.records),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> MRVerdict:
        return cls(raw["mr_id"], raw["model"], raw["task"], raw["metric"], raw["verdict"],
                   float(raw["statistic"]), float(raw["threshold"]), raw["method"],
                   tuple(raw.get("records", ())), bool(raw.get("vacuous", False)))


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def spearman(levels: Sequence[float], scores: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    A series with no spread (all values tied) yields 0.
    """
    if len(levels) != len(scores):
        raise ValueError(f"length mismatch: {len(levels)} levels vs {len(scores)} scores")
    n = len(levels)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 points for a rank correlation, got {n}")
    rx, ry = average_ranks(levels), average_ranks(scores)
    mean = (n + 1) / 2.0
    sxy = sxx = syy = 0.0
    for a, b in zip(rx, ry):
        sxy += (a - mean) * (b - mean)
        sxx += (a - mean) ** 2
        syy += (b - mean) ** 2
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    rho = sxy / (sxx * syy) ** 0.5
    return max(-1.0, min(1.0, rho))


def _single_cell(records: Sequence[MetricRecord]) -> tuple[str, str]:
    cells = {(r.model_id, r.task) for r in records}
    if len(cells) != 1:
        raise ValueError(f"records span several (model, task) cells: {sorted(cells)}")
    return cells.pop()


def verify_mr1(records: Sequence[MetricRecord], min_abs_rho: float = 0.8, metric: str = PRIMARY_METRIC,
               baseline: MetricRecord | None = None) -> MRVerdict:
    """Satisfied when the score falls strongly with occlusion level (rho <= -min_abs_rho).

    If the series is flat and equals the baseline score, occlusion had no
    effect at all and the relation holds vacuously.
    """
    if not records:
        raise IncompleteSeriesError("no TC1 records")
    model_id, task = _single_cell(records)
    by_level = {}
    for r in records:
        level = tc1_level(r.tc_id)
        if level in by_level:
            raise ValueError(f"duplicate record for {r.tc_id}")
        by_level[level] = r
    missing = sorted(set(range(1, NUM_KEYPOINTS + 1)) - set(by_level))
    if missing:
        raise IncompleteSeriesError(f"TC1 series for {model_id}/{task} lacks levels {missing}")
    levels = list(range(1, NUM_KEYPOINTS + 1))
    scores = [by_level[n].metric(metric) for n in levels]
    rho = spearman(levels, scores)
    flat = all(s == scores[0] for s in scores)
    vacuous = flat and baseline is not None and baseline.metric(metric) == scores[0]
    ok = vacuous or rho <= -min_abs_rho
    return MRVerdict("MR1", model_id, task, metric, SATISFIED if ok else VIOLATED, rho, min_abs_rho,
                     "spearman", tuple(by_level[n].tc_id for n in levels), vacuous)


def verify_non_degradation(baseline: MetricRecord, followups: Sequence[MetricRecord], epsilon: float = 0.05,
                           mr_id: str | None = None, metric: str = PRIMARY_METRIC) -> MRVerdict:
    """Satisfied when no follow-up drops more than ``epsilon`` (relative) below the baseline."""
    if not followups:
        raise InsufficientDataError("no follow-up records")
    model_id, task = _single_cell([baseline, *followups])
    if mr_id is None:
        mrs = {mr_of(r.tc_id) for r in followups}
        mr_id = mrs.pop() if len(mrs) == 1 else "+".join(sorted(m for m in mrs if m))
    base = baseline.metric(metric)
    ordered = sorted(followups, key=lambda r: tc_rank(r.tc_id))
    if base > 0:
        stat = max((base - r.metric(metric)) / base for r in ordered)
        vacuous = False
    else:
        stat, vacuous = 0.0, True
    return MRVerdict(mr_id, model_id, task, metric, SATISFIED if stat <= epsilon else VIOLATED, stat,
                     epsilon, "max_relative_degradation",
                     (baseline.tc_id,) + tuple(r.tc_id for r in ordered), vacuous)


@dataclass(frozen=True)
class VerifyConfig:
    min_abs_rho: float = 0.8
    epsilon: float = 0.05
    epsilons: Mapping[str, float] = field(default_factory=dict)

    def epsilon_for(self, mr_id: str) -> float:
        return self.epsilons.get(mr_id, self.epsilon)

    def to_dict(self) -> dict:
        return {"min_abs_rho": self.min_abs_rho, "epsilon": self.epsilon, "epsilons": dict(self.epsilons)}


def verify_all(records: Iterable[MetricRecord], config: VerifyConfig = VerifyConfig()) -> list[MRVerdict]:
    """One verdict per (model, MR, task, metric) present in the records.

    F1 verdicts are primary; precision and recall verdicts are supplementary.
    """
    cells: dict[tuple[str, str], dict[str, MetricRecord]] = defaultdict(dict)
    for r in records:
        cells[(r.model_id, r.task)][r.tc_id] = r
    verdicts = []
    for model_id in sorted({m for m, _ in cells}):
        for mr in ALL_MRS:
            for task in TASKS:
                cell = cells.get((model_id, task), {})
                present = [cell[tc] for tc in MR_TCS[mr] if tc in cell]
                if not present:
                    continue
                baseline = cell.get(BASELINE)
                for metric in METRICS:
                    if mr == "MR1":
                        verdicts.append(verify_mr1(present, config.min_abs_rho, metric, baseline))
                    else:
                        if baseline is None:
                            raise InsufficientDataError(f"{model_id}/{task}: {mr} records without a baseline")
                        verdicts.append(verify_non_degradation(baseline, present, config.epsilon_for(mr),
                                                               mr, metric))
    return verdicts


def any_violated(verdicts: Iterable[MRVerdict]) -> bool:
    return any(v.primary and not v.satisfied for v in verdicts)
