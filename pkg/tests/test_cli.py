import json
import subprocess
import sys

import pytest

from mtpose.cli import build_parser, main


@pytest.fixture(scope="module")
def manifest3(tmp_path_factory):
    from mtpose.synthetic import write_synthetic_dataset

    return write_synthetic_dataset(tmp_path_factory.mktemp("cli"), 3, seed=2)


def test_generate_three_samples(manifest3, tmp_path):
    assert main(["generate", str(manifest3), "--out", str(tmp_path / "suite")]) == 0
    assert len(list((tmp_path / "suite").glob("*.png"))) == 102


def test_default_constants():
    args = build_parser().parse_args(["run", "m.json"])
    assert args.iou_threshold == 0.5
    assert args.ed_threshold == 10
    assert args.radius == 10
    assert args.kernel_size == 20
    assert args.image_side == 244
    assert args.epsilon == 0.05 and args.rho == 0.8
    assert args.timeout_ms == 30000


def test_unknown_flag_is_usage_error():
    proc = subprocess.run([sys.executable, "-m", "mtpose", "run", "m.json", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert "usage" in proc.stderr


def test_missing_argument_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["verify"])
    assert exc.value.code != 0


def test_run_score_verify_pipeline(manifest3, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(manifest3), "--out", str(out)]) == 0
    assert main(["verify", str(out / "metrics.csv"), "--out", str(tmp_path / "v.json")]) == 0
    assert json.loads((tmp_path / "v.json").read_text()) == json.loads((out / "verdicts.json").read_text())
    assert main(["score", str(out / "suite"), str(out / "predictions.jsonl"),
                 "--out", str(tmp_path / "m.csv")]) == 0
    assert (tmp_path / "m.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    assert main(["report", str(out / "run.json"), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "series" / "mr1.csv").read_bytes() == (out / "series" / "mr1.csv").read_bytes()


def test_violation_exit_status(manifest3, tmp_path):
    out = tmp_path / "run"
    table = tmp_path / "table.json"
    table.write_text(json.dumps({"TC12": 1.0}))
    code = main(["run", str(manifest3), "--out", str(out), "--adapter", "degrader",
                 "--failure-table", str(table), "--mrs", "MR4"])
    assert code == 3
    assert main(["verify", str(out / "metrics.csv")]) == 3


def test_external_adapter_flag(manifest3, tmp_path):
    cmd = f"{sys.executable} -m mtpose.echo_adapter"
    assert main(["run", str(manifest3), "--out", str(tmp_path), "--adapter", "external",
                 "--adapter-cmd", cmd, "--mrs", "MR2"]) == 0


def test_bad_external_command_is_error(manifest3, tmp_path, capsys):
    code = main(["run", str(manifest3), "--out", str(tmp_path), "--adapter", "external",
                 "--adapter-cmd", str(tmp_path / "missing-model"), "--mrs", "MR2"])
    assert code == 1
    assert "cannot launch" in capsys.readouterr().err


def test_out_root_from_environment(manifest3, tmp_path, monkeypatch):
    monkeypatch.setenv("MTPOSE_OUT", str(tmp_path / "root"))
    assert main(["generate", str(manifest3), "--mrs", "MR3"]) == 0
    assert len(list((tmp_path / "root" / "suite").glob("*.png"))) == 15


def test_synth(tmp_path):
    assert main(["synth", str(tmp_path / "d"), "-n", "4", "--with-object", "1"]) == 0
    entries = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert [e["category"] for e in entries] == ["without_object"] * 3 + ["with_object"]
