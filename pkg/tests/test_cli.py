from __future__ import annotations

import json
from pathlib import Path

import pytest

from rlvrlab.cli import main

FIXTURES = Path(__file__).parent / "fixtures"

SMALL = """\
seed = 1
[task]
pool_size = 96
heldout_size = 16
[update]
total_steps = 60
batch_prompts = 8
[eval]
interval = 10
[judge]
prompts = 2
samples = 8
"""

PIPELINE = ["gen-tasks", "probe", "filter", "train", "eval", "diversity", "faithfulness", "analyze", "report"]


def run_pipeline(out: Path, config: Path, extra=()) -> None:
    for cmd in PIPELINE:
        argv = [cmd, "--config", str(config), "--out", str(out), *extra]
        if cmd == "analyze":
            argv += ["--guard", "10"]
        assert main(argv) == 0, cmd


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_pipeline_is_byte_deterministic(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    run_pipeline(a, small_config)
    run_pipeline(b, small_config)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in ("runlog_shared-verifier-mean-n8-s1.jsonl", "table.csv", "curves.svg", "analysis.csv"):
        assert name in names
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_missing_artifact_names_producer(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["type"] == "error" and "gen-tasks" in err["reason"]


def test_analyze_ramp_fixture(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["analyze", str(FIXTURES / "ramp.jsonl"), "--out", str(tmp_path), "--csv", str(out)]) == 0
    text = out.read_text()
    assert text.splitlines()[0].startswith("run_id,n,metric,t_sat")
    assert ",99," in text


def test_analyze_with_companion(tmp_path):
    out = tmp_path / "t.csv"
    argv = ["analyze", str(FIXTURES / "small_n8.jsonl"), "--companion", str(FIXTURES / "large_n2048.jsonl"),
            "--out", str(tmp_path), "--csv", str(out)]
    assert main(argv) == 0
    rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
    math500 = next(r for r in rows if r[2] == "math500/avg@16")
    assert math500[3] == "302"
    assert round(float(math500[4]), 1) == 29.7 and round(float(math500[5]), 1) == 1.5
    assert round(float(math500[6]), 1) == -1.4


def test_corrupt_and_flag_mapping(tmp_path, small_config):
    for cmd in ("gen-tasks", "probe", "filter"):
        assert main([cmd, "--config", str(small_config), "--out", str(tmp_path)]) == 0
    assert main(["corrupt", "--config", str(small_config), "--out", str(tmp_path), "--gamma", "0.5"]) == 0
    labels = (tmp_path / "labels_n8_g0.5.jsonl").read_text().splitlines()[1:]
    assert sum(json.loads(l)["corrupted"] for l in labels) == 4
    argv = ["train", "--config", str(small_config), "--out", str(tmp_path), "--gamma", "0.5", "--steps", "3",
            "--baseline", "neg"]
    assert main(argv) == 0
    log = tmp_path / "runlog_shared-corrupted0.5-neg-n8-s1.jsonl"
    head = json.loads(log.read_text().splitlines()[0])
    assert head["meta"]["config"]["length_norm"] is False
    assert head["meta"]["config"]["baseline_mode"] == "const_1"


def test_bad_config_is_an_error(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("[update]\nnope = 1\n")
    assert main(["gen-tasks", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert "nope" in capsys.readouterr().err
