import json
from pathlib import Path

import pytest

from camadapt import cli, harness

TINY = Path(__file__).resolve().parent.parent / "configs" / "tiny.json"
BENCH = TINY.parent / "benchmark.json"


def artifacts(root: Path) -> dict[str, bytes]:
    keep = (".ckpt", ".jsonl", ".csv", "report.json", "adapt.json", "stage.json")
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name.endswith(keep) and p.name != "log.jsonl"}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["report", "--config", str(TINY), "--out", str(out)]) == 0
    return out


def test_shipped_configs_validate():
    for path in (TINY, BENCH):
        cli.load_config(path)


def test_report_contents(tiny_run):
    report = json.loads((tiny_run / "report.json").read_text())
    assert [r["method"] for r in report["table"]] == ["baseline", "baseline", "maml", "at"]
    for runs in report["runs"].values():
        for ev in runs:
            assert ev["navigator_unchanged"] and not ev["at_layers_used"]
    csv = (tiny_run / "report.csv").read_text().splitlines()
    assert csv[0].startswith("method,camera,seeds,seen_tl") and len(csv) == 5


def test_cli_is_deterministic(tiny_run, tmp_path):
    assert cli.main(["report", "--config", str(TINY), "--out", str(tmp_path)]) == 0
    a, b = artifacts(tiny_run), artifacts(tmp_path)
    assert a.keys() == b.keys() and any(k.endswith(".ckpt") for k in a)
    assert a == b


def test_staged_commands_match_report(tiny_run, tmp_path, capsys):
    for cmd in (["gen-data"], ["pretrain"], ["meta-train", "--method", "maml"], ["adapt"],
                ["eval", "--method", "maml"]):
        assert cli.main(cmd + ["--config", str(TINY), "--out", str(tmp_path)]) == 0
    staged = json.loads((tmp_path / "eval" / "maml" / "seed0" / "report.json").read_text())
    full = json.loads((tiny_run / "report.json").read_text())
    assert staged["runs"]["maml"][0] == full["runs"]["maml"][0]
    for name in ("navigator.ckpt", "reference_encoder.ckpt"):
        assert (tmp_path / "pretrain" / name).read_bytes() == (tiny_run / "pretrain" / name).read_bytes()
    assert str(tmp_path / "adapt" / "seed0") in capsys.readouterr().out


def test_stage_is_skipped_when_up_to_date(tiny_run):
    ckpt = tiny_run / "pretrain" / "navigator.ckpt"
    mtime = ckpt.stat().st_mtime_ns
    assert cli.main(["pretrain", "--config", str(TINY), "--out", str(tiny_run)]) == 0
    assert ckpt.stat().st_mtime_ns == mtime


def _write(tmp_path, cfg):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_config_errors_name_the_key(tmp_path, capsys):
    cfg = json.loads(TINY.read_text())
    cfg["test_cam"]["height"] = 2.5
    assert cli.main(["gen-data", "--config", _write(tmp_path, cfg)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.startswith("error: config: test_cam.height") and err.count("\n") == 1

    cfg = json.loads(TINY.read_text())
    del cfg["maml"]["alpha"]
    cli.main(["gen-data", "--config", _write(tmp_path, cfg)])
    assert "maml.alpha" in capsys.readouterr().err

    cfg = json.loads(TINY.read_text())
    cfg["extra"] = 1
    cli.main(["gen-data", "--config", _write(tmp_path, cfg)])
    assert "extra" in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path, capsys):
    assert cli.main(["gen-data", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG
    (tmp_path / "bad.json").write_text("{")
    assert cli.main(["gen-data", "--config", str(tmp_path / "bad.json")]) == cli.EXIT_CONFIG
    assert "not valid JSON" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["train", "--config", str(TINY)]) == cli.EXIT_USAGE
    assert cli.main(["gen-data"]) == cli.EXIT_USAGE


def test_meta_train_rejects_baseline(tmp_path, capsys):
    code = cli.main(["meta-train", "--method", "baseline", "--config", str(TINY), "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG


def test_stage_error_wraps_cause(tmp_path):
    cfg = json.loads(TINY.read_text())
    cfg["data"]["world_size"] = 3
    with pytest.raises(harness.StageError, match="gen-data"):
        harness.run_experiment(cfg, tmp_path, "baseline")
