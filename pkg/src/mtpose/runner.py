"""End-to-end runs: generate the suite, query the model, score, verify and write reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from mtpose.adapters import (
    PROTOCOL_VERSION,
    AdapterConfig,
    AdapterError,
    AdapterTimeout,
    Prediction,
    ProtocolError,
    spawn_adapter,
)
from mtpose.dataset import DatasetManifest, load_manifest, tight_bbox
from mtpose.metrics import TASKS, MetricRecord, classify, iou, mean_ed, record_key, score_outcomes
from mtpose.testgen import (
    BLUR_TCS,
    EXPOSURE_TCS,
    FINGER_TCS,
    MR_TCS,
    GenerationConfig,
    SuiteEntry,
    generate_suite_dir,
    load_suite,
    load_suite_identity,
    normalize_mrs,
    tc1_level,
)
from mtpose.verify import MRVerdict, VerifyConfig, verify_all

log = logging.getLogger(__name__)

PREDICTIONS_FILE = "predictions.jsonl"
METRICS_FILE = "metrics.csv"
VERDICTS_FILE = "verdicts.json"
RUN_FILE = "run.json"
SERIES_DIR = "series"
METRIC_COLUMNS = ("model", "tc_id", "task", "tp", "fp", "fn", "precision", "recall", "f1")


class RunAborted(RuntimeError):
    def __init__(self, message: str, record: RunRecord):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class ScoringConfig:
    iou_threshold: float = 0.5
    ed_threshold: float = 10.0

    def to_dict(self) -> dict:
        return {"iou_threshold": self.iou_threshold, "ed_threshold": self.ed_threshold,
                "ed_units": "annotation pixels"}


@dataclass(frozen=True)
class RunConfig:
    generation: GenerationConfig = GenerationConfig()
    scoring: ScoringConfig = ScoringConfig()
    verification: VerifyConfig = VerifyConfig()
    mrs: tuple[str, ...] = ("MR1", "MR2", "MR3", "MR4")
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "generation": self.generation.to_dict(),
            "scoring": self.scoring.to_dict(),
            "verification": self.verification.to_dict(),
            "mrs": list(self.mrs),
        }


@dataclass(frozen=True)
class CaseOutcome:
    case_id: str
    tc_id: str
    status: str  # detection | no_detection | timeout
    segmentation: str | None = None
    localisation: str | None = None
    iou: float | None = None
    ed: float | None = None

    def to_dict(self) -> dict:
        return {"id": self.case_id, "tc_id": self.tc_id, "status": self.status,
                "segmentation": self.segmentation, "localisation": self.localisation,
                "iou": self.iou, "ed": self.ed}

    @classmethod
    def from_dict(cls, raw: dict) -> CaseOutcome:
        return cls(raw["id"], raw["tc_id"], raw["status"], raw.get("segmentation"),
                   raw.get("localisation"), raw.get("iou"), raw.get("ed"))


@dataclass
class RunRecord:
    run_id: str
    config: dict
    adapter: dict
    model_id: str
    suite: dict
    outcomes: list[CaseOutcome]
    metrics: list[MetricRecord]
    verdicts: list[MRVerdict]
    complete: bool = True
    error: str | None = None
    timing: dict = field(default_factory=dict)

    @property
    def timeouts(self) -> list[str]:
        return [o.case_id for o in self.outcomes if o.status == "timeout"]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "complete": self.complete,
            "error": self.error,
            "config": self.config,
            "adapter": self.adapter,
            "model": self.model_id,
            "suite": self.suite,
            "timeouts": self.timeouts,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "metrics": [m.to_dict() for m in self.metrics],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> RunRecord:
        return cls(raw["run_id"], raw["config"], raw["adapter"], raw["model"], raw["suite"],
                   [CaseOutcome.from_dict(o) for o in raw["outcomes"]],
                   [MetricRecord.from_dict(m) for m in raw["metrics"]],
                   [MRVerdict.from_dict(v) for v in raw["verdicts"]],
                   raw.get("complete", True), raw.get("error"), raw.get("timing", {}))

    def verify_config(self) -> VerifyConfig:
        v = self.config["verification"]
        return VerifyConfig(v["min_abs_rho"], v["epsilon"], v.get("epsilons", {}))


def load_run(path: str | Path) -> RunRecord:
    return RunRecord.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- prediction --------------------------------------------------------------

def _chunks(items: Sequence, n: int) -> list[Sequence]:
    n = max(1, min(n, len(items)))
    size, extra = divmod(len(items), n)
    out, start = [], 0
    for i in range(n):
        stop = start + size + (1 if i < extra else 0)
        out.append(items[start:stop])
        start = stop
    return out


def collect_predictions(entries: Sequence[SuiteEntry], adapter_config: AdapterConfig,
                        workers: int = 1) -> tuple[str, dict[str, Prediction | None], AdapterError | None]:
    """Query the model for every entry.

    Each worker owns one adapter instance and serves its slice sequentially.
    Returns (model id, predictions keyed by case id with None for timeouts,
    fatal error or None). On a fatal error the mapping holds whatever was
    answered before it.
    """
    results: dict[str, Prediction | None] = {}
    models: set[str] = set()
    errors: list[AdapterError] = []

    def serve(chunk):
        try:
            with spawn_adapter(adapter_config) as handle:
                models.add(handle.model_id)
                for entry in chunk:
                    try:
                        results[entry.case_id] = handle.predict(entry)
                    except AdapterTimeout as exc:
                        log.warning("%s", exc)
                        results[entry.case_id] = None
        except AdapterError as exc:
            errors.append(exc)

    chunks = _chunks(entries, workers)
    if len(chunks) == 1:
        serve(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(serve, chunks))
    if len(models) > 1:
        errors.append(ProtocolError(f"adapter instances report different models: {sorted(models)}"))
    model_id = models.pop() if len(models) == 1 else "unknown"
    return model_id, results, (errors[0] if errors else None)


def write_predictions(path: str | Path, model_id: str, entries: Sequence[SuiteEntry],
                      predictions: dict[str, Prediction | None]) -> None:
    lines = [json.dumps({"type": "hello", "version": PROTOCOL_VERSION, "model": model_id})]
    for e in entries:
        if e.case_id not in predictions:
            continue
        pred = predictions[e.case_id]
        msg = {"type": "timeout", "id": e.case_id} if pred is None else pred.to_wire(e.case_id)
        lines.append(json.dumps(msg))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path: str | Path) -> tuple[str, dict[str, Prediction | None]]:
    model_id = "unknown"
    out: dict[str, Prediction | None] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        msg = json.loads(line)
        kind = msg.get("type")
        if kind == "hello":
            model_id = msg.get("model", model_id)
        elif kind == "timeout":
            out[msg["id"]] = None
        elif kind == "result":
            out[msg["id"]] = Prediction.from_wire(msg)
        else:
            raise ProtocolError(f"{path}:{n}: unknown record type {kind!r}")
    return model_id, out


# -- scoring -----------------------------------------------------------------

def score_cases(entries: Sequence[SuiteEntry], predictions: dict[str, Prediction | None], model_id: str,
                scoring: ScoringConfig = ScoringConfig()) -> tuple[list[CaseOutcome], list[MetricRecord]]:
    """Classify every answered case and fold the outcomes into metric records.

    Timeouts are listed as outcomes but contribute to no confusion count.
    """
    outcomes = []
    for e in entries:
        if e.case_id not in predictions:
            continue
        pred = predictions[e.case_id]
        if pred is None:
            outcomes.append(CaseOutcome(e.case_id, e.tc_id, "timeout"))
            continue
        seg, loc = classify(pred, e.landmarks, scoring.iou_threshold, scoring.ed_threshold)
        if pred.detected:
            outcomes.append(CaseOutcome(e.case_id, e.tc_id, "detection", seg, loc,
                                        iou(pred.bbox, tight_bbox(e.landmarks)),
                                        mean_ed(pred.keypoints, e.landmarks)))
        else:
            outcomes.append(CaseOutcome(e.case_id, e.tc_id, "no_detection", seg, loc))
    records = score_outcomes(model_id, ((o.tc_id, o.segmentation, o.localisation)
                                        for o in outcomes if o.status != "timeout"))
    return outcomes, records


def reconcile(record: RunRecord) -> None:
    """Raise if the metric cells do not account for every scored case exactly once."""
    scored = sum(1 for o in record.outcomes if o.status != "timeout")
    for task in TASKS:
        total = sum(m.counts.total for m in record.metrics if m.task == task)
        if total != scored:
            raise AssertionError(f"{task}: metric cells count {total} cases, run scored {scored}")


# -- orchestration -----------------------------------------------------------

def _run_id(config: dict, adapter: dict, suite_identity: dict) -> str:
    blob = json.dumps([config, adapter, suite_identity], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run(manifest: DatasetManifest | str | Path, adapter_config: AdapterConfig, out_dir: str | Path,
        config: RunConfig = RunConfig()) -> RunRecord:
    """Generate (or reuse) the suite, predict, score, verify and write every report file.

    Raises RunAborted after writing an incomplete ``run.json`` if the adapter
    fails for a reason other than a per-request timeout.
    """
    started = time.perf_counter()
    t0 = datetime.now(timezone.utc)
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mrs = normalize_mrs(config.mrs)
    suite_dir = out_dir / "suite"
    regenerated = generate_suite_dir(manifest, suite_dir, mrs, config.generation, config.workers)
    t_gen = time.perf_counter()
    entries = load_suite(suite_dir)
    identity = load_suite_identity(suite_dir)
    suite_ref = {"path": "suite", "cases": len(entries), "identity": identity}

    model_id, predictions, error = collect_predictions(entries, adapter_config, config.workers)
    t_pred = time.perf_counter()
    write_predictions(out_dir / PREDICTIONS_FILE, model_id, entries, predictions)

    outcomes, records = score_cases(entries, predictions, model_id, config.scoring)
    cfg = config.to_dict()
    adapter = adapter_config.to_dict()
    record = RunRecord(_run_id(cfg, adapter, identity), cfg, adapter, model_id, suite_ref, outcomes,
                       records, [], complete=error is None, error=None if error is None else str(error))
    if error is None:
        record.verdicts = verify_all(records, config.verification)
        reconcile(record)
    record.timing = {
        "started": t0.isoformat(),
        "suite_regenerated": regenerated,
        "generate_s": round(t_gen - started, 3),
        "predict_s": round(t_pred - t_gen, 3),
        "total_s": round(time.perf_counter() - started, 3),
    }
    if error is not None:
        write_json(out_dir / RUN_FILE, record.to_dict())
        raise RunAborted(f"run aborted: {error}", record)
    emit_reports(record, out_dir)
    return record


# -- report files ------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_json(path: str | Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def metrics_csv(records: Iterable[MetricRecord]) -> str:
    rows = []
    for m in sorted(records, key=record_key):
        rows.append([m.model_id, m.tc_id, m.task, m.counts.tp, m.counts.fp, m.counts.fn,
                     _fmt(m.precision), _fmt(m.recall), _fmt(m.f1)])
    return _csv_text(METRIC_COLUMNS, rows)


def read_metrics_csv(path: str | Path) -> list[MetricRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [MetricRecord.from_dict(row) for row in csv.DictReader(fh)]


def verdicts_json(verdicts: Iterable[MRVerdict]) -> str:
    return json.dumps([v.to_dict() for v in verdicts], indent=2) + "\n"


def read_verdicts(path: str | Path) -> list[MRVerdict]:
    return [MRVerdict.from_dict(v) for v in json.loads(Path(path).read_text(encoding="utf-8"))]


_SERIES_X = {
    "MR1": ("level", lambda tc: tc1_level(tc)),
    "MR2": ("finger", lambda tc: FINGER_TCS[tc]),
    "MR3": ("gamma", lambda tc: EXPOSURE_TCS[tc]),
    "MR4": ("direction", lambda tc: BLUR_TCS[tc]),
}


def series_csvs(records: Sequence[MetricRecord]) -> dict[str, str]:
    """Plot-ready x/y tables, one per MR present: one row per (model, test case)."""
    cells = {(m.model_id, m.tc_id, m.task): m for m in records}
    models = sorted({m.model_id for m in records})
    out = {}
    for mr, (x_name, x_of) in _SERIES_X.items():
        header = ["model", "tc_id", x_name] + [f"{t}_{k}" for t in TASKS for k in ("precision", "recall", "f1")]
        rows = []
        for model in models:
            for tc in MR_TCS[mr]:
                if not any((model, tc, t) in cells for t in TASKS):
                    continue
                row = [model, tc, x_of(tc)]
                for t in TASKS:
                    m = cells.get((model, tc, t))
                    row += ["", "", ""] if m is None else [_fmt(m.precision), _fmt(m.recall), _fmt(m.f1)]
                rows.append(row)
        if rows:
            out[mr.lower()] = _csv_text(header, rows)
    return out


def emit_reports(record: RunRecord, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / METRICS_FILE
    path.write_text(metrics_csv(record.metrics), encoding="utf-8", newline="\n")
    written.append(path)
    path = out_dir / VERDICTS_FILE
    path.write_text(verdicts_json(record.verdicts), encoding="utf-8", newline="\n")
    written.append(path)
    series_dir = out_dir / SERIES_DIR
    series_dir.mkdir(exist_ok=True)
    for name, text in series_csvs(record.metrics).items():
        path = series_dir / f"{name}.csv"
        path.write_text(text, encoding="utf-8", newline="\n")
        written.append(path)
    path = out_dir / RUN_FILE
    write_json(path, record.to_dict())
    written.append(path)
    return written


def reverify(record: RunRecord) -> list[MRVerdict]:
    """Recompute verdicts from a record's stored metrics and its own config."""
    return verify_all(record.metrics, record.verify_config())
