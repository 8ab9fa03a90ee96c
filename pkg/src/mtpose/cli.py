"""Command line entry point.

Exit status: 0 success, 3 at least one primary MR verdict violated, 1 error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from pathlib import Path

from mtpose.adapters import DEFAULT_TIMEOUT_MS, AdapterConfig
from mtpose.dataset import load_manifest
from mtpose.runner import (
    METRICS_FILE,
    VERDICTS_FILE,
    RunAborted,
    RunConfig,
    ScoringConfig,
    emit_reports,
    load_run,
    metrics_csv,
    read_metrics_csv,
    read_predictions,
    run,
    score_cases,
    verdicts_json,
)
from mtpose.testgen import GenerationConfig, generate_suite_dir, load_suite, normalize_mrs
from mtpose.verify import VerifyConfig, any_violated, verify_all

EXIT_OK, EXIT_ERROR, EXIT_VIOLATED = 0, 1, 3

log = logging.getLogger("mtpose")


def _default_out(sub: str = "") -> Path:
    root = Path(os.environ.get("MTPOSE_OUT", "mtpose_out"))
    return root / sub if sub else root


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("harness options")
    g.add_argument("--iou-threshold", type=float, default=0.5, help="segmentation TP needs IoU above this")
    g.add_argument("--ed-threshold", type=float, default=10.0,
                   help="localisation TP needs mean keypoint distance below this (annotation units)")
    g.add_argument("--epsilon", type=float, default=0.05, help="allowed relative F1 drop for MR2-MR4")
    g.add_argument("--rho", type=float, default=0.8, help="required |Spearman rho| for MR1")
    g.add_argument("--radius", type=float, default=10.0, help="occlusion disc radius in pixels")
    g.add_argument("--kernel-size", type=int, default=20, help="motion blur kernel side")
    g.add_argument("--image-side", type=int, default=244, help="resize inputs to this square side (0: keep)")
    g.add_argument("--crop-scale", type=float, default=None,
                   help="crop a square patch of this many hand-box extents before resizing")
    g.add_argument("--all-categories", action="store_true",
                   help="derive follow-ups for with_object samples too")
    g.add_argument("--seed", type=int, default=0, help="degrader seed")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--mrs", default="MR1,MR2,MR3,MR4", help="comma-separated MR ids")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _generation(args) -> GenerationConfig:
    cats = ("with_object", "without_object") if args.all_categories else ("without_object",)
    return GenerationConfig(radius=args.radius, kernel_size=args.kernel_size,
                            image_side=args.image_side or None, crop_scale=args.crop_scale,
                            followup_categories=cats)


def _verification(args) -> VerifyConfig:
    return VerifyConfig(min_abs_rho=args.rho, epsilon=args.epsilon)


def _failure_table(spec: str | None) -> dict:
    if not spec:
        return {}
    text = Path(spec).read_text(encoding="utf-8") if Path(spec).is_file() else spec
    table = json.loads(text)
    if not isinstance(table, dict):
        raise ValueError("failure table must be a JSON object mapping test case ids to probabilities")
    return {str(k): float(v) for k, v in table.items()}


def _adapter(args) -> AdapterConfig:
    return AdapterConfig(
        kind=args.adapter,
        command=tuple(shlex.split(args.adapter_cmd)) if args.adapter_cmd else (),
        cwd=args.adapter_cwd,
        timeout_ms=args.timeout_ms,
        failure_table=_failure_table(args.failure_table),
        occlusion_coef=args.occlusion_coef,
        noise=args.noise,
        seed=args.seed,
    )


def cmd_generate(args) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out) if args.out else _default_out("suite")
    generate_suite_dir(manifest, out, normalize_mrs(args.mrs), _generation(args), args.workers,
                       reuse=not args.force)
    print(f"suite written to {out} ({len(load_suite(out))} cases)")
    return EXIT_OK


def cmd_run(args) -> int:
    config = RunConfig(
        generation=_generation(args),
        scoring=ScoringConfig(args.iou_threshold, args.ed_threshold),
        verification=_verification(args),
        mrs=normalize_mrs(args.mrs),
        workers=args.workers,
    )
    out = Path(args.out) if args.out else _default_out()
    try:
        record = run(args.manifest, _adapter(args), out, config)
    except RunAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if record.timeouts:
        print(f"{len(record.timeouts)} request(s) timed out; see run.json", file=sys.stderr)
    _print_verdicts(record.verdicts)
    return EXIT_VIOLATED if any_violated(record.verdicts) else EXIT_OK


def cmd_score(args) -> int:
    entries = load_suite(args.suite)
    model_id, predictions = read_predictions(args.predictions)
    missing = [e.case_id for e in entries if e.case_id not in predictions]
    if missing:
        log.warning("%d suite cases have no recorded prediction", len(missing))
    _, records = score_cases(entries, predictions, model_id,
                             ScoringConfig(args.iou_threshold, args.ed_threshold))
    out = Path(args.out) if args.out else _default_out(METRICS_FILE)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(metrics_csv(records), encoding="utf-8", newline="\n")
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    verdicts = verify_all(read_metrics_csv(args.metrics), _verification(args))
    out = Path(args.out) if args.out else Path(args.metrics).with_name(VERDICTS_FILE)
    out.write_text(verdicts_json(verdicts), encoding="utf-8", newline="\n")
    _print_verdicts(verdicts)
    return EXIT_VIOLATED if any_violated(verdicts) else EXIT_OK


def cmd_report(args) -> int:
    record = load_run(args.run)
    out = Path(args.out) if args.out else Path(args.run).parent
    for path in emit_reports(record, out):
        print(path)
    return EXIT_OK


def cmd_synth(args) -> int:
    from mtpose.synthetic import write_synthetic_dataset

    path = write_synthetic_dataset(args.out, args.n, args.seed, args.image_side or 244, args.with_object)
    print(path)
    return EXIT_OK


def _print_verdicts(verdicts) -> None:
    for v in verdicts:
        if not v.primary:
            continue
        flag = " (vacuous)" if v.vacuous else ""
        print(f"{v.model_id:>12} {v.mr_id} {v.task:<13} {v.verdict}{flag}  "
              f"{v.method}={v.statistic:.4f} threshold={v.threshold}")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="mtpose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="manifest -> suite directory")
    p.add_argument("manifest")
    p.add_argument("--out", help="suite directory (default $MTPOSE_OUT/suite)")
    p.add_argument("--force", action="store_true", help="regenerate even if an identical suite exists")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", parents=[common], help="generate, predict, score, verify, report")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default $MTPOSE_OUT)")
    p.add_argument("--adapter", choices=("oracle", "degrader", "external"), default="oracle")
    p.add_argument("--adapter-cmd", help="launch command for an external adapter")
    p.add_argument("--adapter-cwd")
    p.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS)
    p.add_argument("--failure-table", help="degrader: JSON object or file mapping tc_id -> miss probability")
    p.add_argument("--occlusion-coef", type=float, default=0.0,
                   help="degrader: TC1 level n misses with probability min(1, c*n)")
    p.add_argument("--noise", type=float, default=0.0, help="degrader: keypoint jitter radius in pixels")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", parents=[common], help="suite + recorded predictions -> metrics.csv")
    p.add_argument("suite")
    p.add_argument("predictions")
    p.add_argument("--out", help="metrics csv path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("verify", parents=[common], help="metrics.csv -> verdicts.json")
    p.add_argument("metrics")
    p.add_argument("--out", help="verdicts json path (default next to the metrics)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", parents=[common], help="run.json -> report files")
    p.add_argument("run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic manifest for smoke tests")
    p.add_argument("out")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--with-object", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
