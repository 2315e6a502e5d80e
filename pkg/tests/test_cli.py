import json
import os

import numpy as np
import pytest

from liemem import tasks
from liemem.cli import cli_dispatch


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "c.cfg"
    cfg.write_text(
        "task.low = 2\n"
        "task.high = 3\n"
        "task.vocab = 8\n"
        "model.cells = 12\n"
        "model.embed = 6\n"
        "model.memory_width = 6\n"
        "train.total_samples = 64\n"
        "train.passes = 2\n"
        "train.eval_every = 0\n"
        "train.final_eval_size = 32\n"
    )
    code = cli_dispatch(
        ["train", "--task", "copy", "--model", "lantm", "--seed", "1",
         "--config", str(cfg), "--out", str(out / "run1")]
    )
    assert code == 0
    return out


def test_train_outputs(trained_dir):
    run_dir = trained_dir / "run1"
    assert (run_dir / "checkpoint.ckpt").exists()
    assert (run_dir / "run.json").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 1
    assert "config_hash" in manifest and "numpy_version" in manifest
    record = json.loads((run_dir / "run.json").read_text())
    assert record["status"] == "ok"
    assert record["task"] == "copy"


def test_eval_prints_report(trained_dir, capsys):
    code = cli_dispatch(
        ["eval", "--checkpoint", str(trained_dir / "run1" / "checkpoint.ckpt"),
         "--task", "copy", "--regime", "2x", "--count", "16", "--seed", "0"]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(report) >= {"fine", "coarse", "count", "per_task"}
    assert report["count"] == 16
    assert report["coarse"] <= report["fine"] + 1e-12


def test_eval_uses_checkpoint_task_by_default(trained_dir, capsys):
    code = cli_dispatch(
        ["eval", "--checkpoint", str(trained_dir / "run1" / "checkpoint.ckpt"),
         "--count", "8", "--regime", "in-sample"]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "copy" in report["per_task"]


def test_trace_and_pca(trained_dir, capsys):
    trace_path = trained_dir / "trace.jsonl"
    code = cli_dispatch(
        ["trace", "--checkpoint", str(trained_dir / "run1" / "checkpoint.ckpt"),
         "--instance-seed", "7", "--out", str(trace_path)]
    )
    assert code == 0
    lines = trace_path.read_text().strip().splitlines()
    events = [json.loads(l) for l in lines]
    assert all(e["phase"] in ("encode", "decode") for e in events)
    assert (trained_dir / "trace.jsonl.manifest.json").exists()

    out_path = trained_dir / "proj.json"
    code = cli_dispatch(
        ["pca", "--trace", str(trace_path), "--dim", "1", "--events", "write",
         "--out", str(out_path)]
    )
    assert code == 0
    payload = json.loads(out_path.read_text())
    assert payload["dim"] == 1
    assert payload["count"] == len([e for e in events if e["head"] == "write"])
    assert all(len(row) == 1 for row in payload["coords"])


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "data.tsv"
    code = cli_dispatch(
        ["gen-data", "--task", "priority_sort", "--count", "25", "--regime", "2x",
         "--seed", "3", "--out", str(out)]
    )
    assert code == 0
    rows = tasks.read_dataset(out)
    assert len(rows) == 25
    spec = tasks.task_spec("priority_sort")
    for inst in rows:
        assert inst.targets == tasks.oracle(spec, inst.inputs)
    assert (tmp_path / "data.tsv.manifest.json").exists()


def test_usage_errors_exit_1():
    assert cli_dispatch(["train", "--task", "copy"]) == 1          # missing args
    assert cli_dispatch(["train", "--task", "copy", "--model", "lantm",
                         "--bogus-flag", "--out", "/tmp/x"]) == 1  # unknown flag
    assert cli_dispatch(["no-such-command"]) == 1


def test_missing_config_exits_2(tmp_path):
    code = cli_dispatch(
        ["train", "--task", "copy", "--model", "lantm",
         "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")]
    )
    assert code == 2


def test_eval_bad_checkpoint_exits_2(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert cli_dispatch(["eval", "--checkpoint", str(bad), "--task", "copy"]) == 2


def test_grid_cli(tmp_path, capsys):
    cfg = tmp_path / "grid.cfg"
    cfg.write_text(
        "task.low = 2\ntask.high = 3\ntask.vocab = 8\n"
        "model.cells = 8\nmodel.embed = 4\nmodel.memory_width = 4\n"
        "train.total_samples = 32\ntrain.passes = 1\ntrain.eval_every = 0\n"
        "train.final_eval_size = 8\n"
        "grid.train.lr = [0.01, 0.02]\n"
    )
    out = tmp_path / "grid_out"
    code = cli_dispatch(
        ["grid", "--task", "copy", "--model", "ram", "--seeds", "1",
         "--config", str(cfg), "--out", str(out)]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["cells"] == 2
    assert summary["best"] is not None
    lines = (out / "records.jsonl").read_text().strip().splitlines()
    assert len(lines) == 2
    assert (out / "manifest.json").exists()
