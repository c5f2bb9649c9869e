"""End-to-end CLI flows through the public entry point."""

import json

import numpy as np
import pytest

from profiti.cli import main
from profiti.data import load_jsonl


@pytest.fixture()
def spec_file(tmp_path):
    spec = {
        "n_series": 30,
        "n_channels": 2,
        "family": "gaussian-ou",
        "obs_rate": 4.0,
        "n_query_times": 1,
        "missing_fraction": 0.2,
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


@pytest.fixture()
def train_config_file(tmp_path):
    config = {
        "model": {
            "encoder": {"dim": 8, "n_heads": 1, "n_layers": 1, "time_dim": 5,
                        "channel_dim": 3, "value_dim": 2},
            "n_blocks": 1,
        },
        "synthetic": {"n_series": 40, "n_channels": 2, "obs_rate": 4.0,
                      "n_query_times": 1, "missing_fraction": 0.2},
        "epochs": 1,
        "batch_size": 8,
        "seed": 3,
        "n_eval_samples": 8,
    }
    path = tmp_path / "train.json"
    path.write_text(json.dumps(config))
    return path


def test_generate_data_roundtrip(tmp_path, spec_file):
    out = tmp_path / "data.jsonl"
    assert main(["generate-data", "--spec", str(spec_file),
                 "--out", str(out), "--seed", "4"]) == 0
    dataset = load_jsonl(out)
    assert len(dataset) == 30


def test_missing_input_files_exit_2(tmp_path):
    assert main(["generate-data", "--spec", str(tmp_path / "absent.json"),
                 "--out", str(tmp_path / "x.jsonl"), "--seed", "1"]) == 2
    assert main(["evaluate", "--ckpt", str(tmp_path / "no_ckpt"),
                 "--data", str(tmp_path / "absent.jsonl"),
                 "--report", str(tmp_path / "r.json")]) == 2


def test_generate_data_bad_spec_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"missing_fraction": 1.0}')
    assert main(["generate-data", "--spec", str(bad),
                 "--out", str(tmp_path / "x.jsonl"), "--seed", "1"]) == 2


def test_generate_data_unknown_key_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_serie": 10}')
    assert main(["generate-data", "--spec", str(bad),
                 "--out", str(tmp_path / "x.jsonl"), "--seed", "1"]) == 2


def test_train_evaluate_sample_flow(tmp_path, train_config_file, capsys):
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(train_config_file),
                 "--out", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "njNLL" in out
    ckpt = run_dir / "checkpoint"
    assert (ckpt / "manifest.json").exists()
    assert (ckpt / "params.bin").exists()

    test_split = run_dir / "test_split.jsonl"
    report_path = tmp_path / "report.json"
    assert main(["evaluate", "--ckpt", str(ckpt), "--data", str(test_split),
                 "--report", str(report_path), "--n-samples", "8"]) == 0
    report = json.loads(report_path.read_text())
    assert set(report) >= {"njnll", "mnll", "crps", "mse"}

    samples_path = tmp_path / "samples.csv"
    fan_path = tmp_path / "fan.svg"
    assert main(["sample", "--ckpt", str(ckpt), "--data", str(test_split),
                 "--n", "5", "--out", str(samples_path),
                 "--fan-svg", str(fan_path)]) == 0
    lines = samples_path.read_text().strip().splitlines()
    dataset = load_jsonl(test_split)
    assert len(lines) == 1 + 5 * sum(i.n_queries for i in dataset)
    assert fan_path.read_text().startswith("<svg")


def test_evaluate_missing_data_exits_2(tmp_path, train_config_file):
    run_dir = tmp_path / "run"
    main(["train", "--config", str(train_config_file), "--out", str(run_dir)])
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["evaluate", "--ckpt", str(run_dir / "checkpoint"),
                 "--data", str(empty), "--report", str(tmp_path / "r.json")]) == 2


def test_seed_env_override(tmp_path, spec_file, monkeypatch):
    out_a = tmp_path / "a.jsonl"
    out_b = tmp_path / "b.jsonl"
    out_c = tmp_path / "c.jsonl"
    main(["generate-data", "--spec", str(spec_file), "--out", str(out_a), "--seed", "1"])
    monkeypatch.setenv("PROFITI_SEED", "2")
    main(["generate-data", "--spec", str(spec_file), "--out", str(out_b), "--seed", "1"])
    monkeypatch.delenv("PROFITI_SEED")
    main(["generate-data", "--spec", str(spec_file), "--out", str(out_c), "--seed", "2"])
    assert out_a.read_bytes() != out_b.read_bytes()
    assert out_b.read_bytes() == out_c.read_bytes()


def test_ablate_runs_all_variants(tmp_path, train_config_file):
    # keep it tiny: one epoch over a small synthetic set, six variants
    table_path = tmp_path / "table.json"
    assert main(["ablate", "--config", str(train_config_file),
                 "--out", str(table_path),
                 "--workdir", str(tmp_path / "ablation_runs")]) == 0
    table = json.loads(table_path.read_text())
    assert len(table) == 6
    assert set(table) == {"full", "no_sita", "no_shiesh", "no_sita_no_shiesh",
                          "attn_reg", "attn_itrans"}
    for row in table.values():
        assert np.isfinite(row["test_njnll"])
