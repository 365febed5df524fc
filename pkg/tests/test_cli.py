import csv
import json
import os

import pytest

from capgru import modelio
from capgru.cli import main

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")
GOLDEN_MODEL = os.path.join(GOLDEN_DIR, "model_142.mgru.json")
GOLDEN_SEQS = os.path.join(GOLDEN_DIR, "sequences_142.csv")
# frozen after a first run verified against both engines
GOLDEN_PREDICTIONS = [1, 1, 1]


def read_predictions(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return [int(r["prediction"]) for r in rows]


def test_simulate_golden_predictions(tmp_path):
    rc = main(["simulate", "--model", GOLDEN_MODEL, "--data", GOLDEN_SEQS,
               "--engine", "ideal", "--out", str(tmp_path)])
    assert rc == 0
    preds = read_predictions(tmp_path / "predictions_ideal.csv")
    assert preds == GOLDEN_PREDICTIONS


def test_simulate_engines_agree(tmp_path):
    for engine in ("ideal", "circuit"):
        rc = main(["simulate", "--model", GOLDEN_MODEL, "--data", GOLDEN_SEQS,
                   "--engine", engine, "--out", str(tmp_path)])
        assert rc == 0
    a = read_predictions(tmp_path / "predictions_ideal.csv")
    b = read_predictions(tmp_path / "predictions_circuit.csv")
    assert a == b


def test_simulate_traces_written(tmp_path):
    rc = main(["simulate", "--model", GOLDEN_MODEL, "--data", GOLDEN_SEQS,
               "--engine", "circuit", "--traces", "--out", str(tmp_path)])
    assert rc == 0
    traces = modelio.read_trace_csv(tmp_path / "trace_circuit_0000.csv")
    assert len(traces) == 2


def test_simulate_empty_dataset_errors(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    rc = main(["simulate", "--model", GOLDEN_MODEL, "--data", str(empty),
               "--out", str(tmp_path)])
    assert rc == 2
    assert "no sequences" in capsys.readouterr().err


def test_simulate_missing_model_errors(tmp_path):
    rc = main(["simulate", "--model", str(tmp_path / "nope.mgru.json"),
               "--data", GOLDEN_SEQS, "--out", str(tmp_path)])
    assert rc == 2


def test_compare_clean_run_exits_zero(tmp_path, capsys):
    rc = main(["compare", "--model", GOLDEN_MODEL, "--data", GOLDEN_SEQS,
               "--out", str(tmp_path)])
    assert rc == 0
    assert "agree" in capsys.readouterr().out


def test_compare_mismatch_diverges_and_tolerance_flag(tmp_path, capsys):
    args = ["compare", "--model", GOLDEN_MODEL, "--data", GOLDEN_SEQS,
            "--out", str(tmp_path), "--mismatch-sigma", "0.01", "--seed", "5"]
    rc = main(args)
    out = capsys.readouterr().out
    assert rc == 1
    assert "FIRST DIVERGENCE" in out
    # a loose tolerance accepts the same run
    rc = main(args + ["--tolerance", "64"])
    assert rc == 0


def test_train_command_and_config(tmp_path):
    cfg = {
        "layer_sizes": [1, 6, 2],
        "task": "delayed-parity",
        "parity_len": 5,
        "parity_gap": 2,
        "n_train": 64,
        "n_test": 32,
        "epochs": [2, 1, 1, 1],
        "batch_size": 16,
        "seed": 0,
    }
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["train", "--config", str(cfg_path), "--out", str(tmp_path)])
    assert rc == 0
    bundle = modelio.load_model(tmp_path / "trained.mgru.json")
    assert bundle.model.config.layer_sizes == (1, 6, 2)
    with open(tmp_path / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert rows and set(rows[0]) == {"phase", "epoch", "loss", "train_acc",
                                     "test_acc", "flag"}


def test_train_bad_config_errors(tmp_path):
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps({"layer_sizes": [1, 4, 2], "bogus": 1}))
    rc = main(["train", "--config", str(cfg_path), "--out", str(tmp_path)])
    assert rc == 2


def test_energy_command(tmp_path, capsys):
    rc = main(["energy", "--model", GOLDEN_MODEL, "--data", GOLDEN_SEQS,
               "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "worst-case bound" in out
    with open(tmp_path / "energy.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3 * 12  # three sequences, twelve steps
    measured = sum(float(r["e_total_j"]) for r in rows)
    assert measured > 0


def test_energy_respects_config(tmp_path):
    ecfg = tmp_path / "energy.json"
    ecfg.write_text(json.dumps({"c_u": 0.0, "e_switch": 0.0}))
    rc = main(["energy", "--model", GOLDEN_MODEL, "--data", GOLDEN_SEQS,
               "--energy-config", str(ecfg), "--out", str(tmp_path)])
    assert rc == 0
    with open(tmp_path / "energy.csv") as f:
        rows = list(csv.DictReader(f))
    assert all(float(r["e_total_j"]) == 0.0 for r in rows)


def test_sweep_adc_single_point(tmp_path):
    rc = main(["sweep-adc", "--slope-segments", "13", "--offset-codes", "32",
               "--points", "1", "--out", str(tmp_path)])
    assert rc == 0
    with open(tmp_path / "adc_sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1


def test_sweep_adc_offset_shifts_midpoints(tmp_path):
    rc = main(["sweep-adc", "--slope-segments", "13",
               "--offset-codes", "16,32,48", "--points", "1024",
               "--out", str(tmp_path)])
    assert rc == 0
    with open(tmp_path / "adc_sweep.csv") as f:
        rows = list(csv.DictReader(f))
    mids = {}
    for off in (16, 32, 48):
        sel = [r for r in rows if int(r["offset_code"]) == off]
        crossing = [float(r["v_in"]) for r in sel if int(r["code"]) >= 32]
        mids[off] = min(crossing)
    # midpoints shift by one staircase LSB per offset code, linearly
    d1 = mids[16] - mids[32]
    d2 = mids[32] - mids[48]
    assert d1 == pytest.approx(d2, rel=0.02)
    assert d1 > 0


def test_sweep_adc_empty_range_errors(tmp_path):
    rc = main(["sweep-adc", "--slope-segments", "", "--offset-codes", "32",
               "--out", str(tmp_path)])
    assert rc == 2


def test_out_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("CAPGRU_OUT", str(tmp_path / "envout"))
    rc = main(["sweep-adc", "--slope-segments", "13", "--offset-codes", "32",
               "--points", "2"])
    assert rc == 0
    assert (tmp_path / "envout" / "adc_sweep.csv").exists()
