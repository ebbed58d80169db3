import json
import subprocess
import sys

import numpy as np
import pytest

from mononet.cli import build_parser, run
from mononet.dataio import save_csv, write_idx
from mononet.model import load

from conftest import toy_binary


@pytest.fixture
def csv_path(tmp_path):
    p = tmp_path / "toy.csv"
    save_csv(toy_binary(n=120), p, outcome_name="Outcome", signed=True)
    return p


@pytest.fixture
def idx_paths(tmp_path):
    rng = np.random.default_rng(0)
    y = np.arange(60) % 3
    x = rng.integers(0, 40, size=(60, 8, 8))
    for i, c in enumerate(y):
        x[i, 2 * c:2 * c + 3, :] += 200
    write_idx(tmp_path / "img", x)
    write_idx(tmp_path / "lab", y)
    return tmp_path / "img", tmp_path / "lab"


def test_train_verify_eval_interpret(tmp_path, csv_path, capsys):
    out = tmp_path / "a"
    assert run(["train", "--data", str(csv_path), "--spec", "8,3,8", "--epochs", "5", "--seed", "0",
                "--out", str(out)]) == 0
    assert (out / "model.mnet").exists()
    hist = json.loads((out / "history.json").read_text())
    assert len(hist["loss"]) == 5 and hist["config"]["epochs"] == 5
    assert load(out / "model.mnet").interpretable_width == 3

    assert run(["verify", "--model", str(out / "model.mnet"), "--probes", "500", "--out", str(out)]) == 0
    report = json.loads((out / "probe_report.json").read_text())
    assert report["n_violations"] == 0 and report["probes_run"] == 1500

    assert run(["eval", "--model", str(out / "model.mnet"), "--data", str(csv_path), "--out", str(out)]) == 0
    assert 0 <= json.loads((out / "eval.json").read_text())["accuracy"] <= 1

    assert run(["interpret", "--model", str(out / "model.mnet"), "--data", str(csv_path), "--out", str(out)]) == 0
    assert len(json.loads((out / "report.json").read_text())["units"]) == 3
    assert (out / "report.txt").read_text().startswith("unit")


def test_outputs_are_byte_identical(tmp_path, csv_path):
    for name in ("a", "b"):
        assert run(["train", "--data", str(csv_path), "--spec", "6,2,4", "--epochs", "3",
                    "--out", str(tmp_path / name)]) == 0
        assert run(["interpret", "--model", str(tmp_path / name / "model.mnet"), "--data", str(csv_path),
                    "--out", str(tmp_path / name)]) == 0
        assert run(["verify", "--model", str(tmp_path / name / "model.mnet"), "--probes", "100",
                    "--out", str(tmp_path / name)]) == 0
    for f in ("model.mnet", "history.json", "report.json", "report.txt", "probe_report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_config_file_and_flag_precedence(tmp_path, csv_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs = 4\nbatch_size = 16\n")
    assert run(["train", "--data", str(csv_path), "--spec", "6,2,4", "--config", str(cfg), "--epochs", "2",
                "--out", str(tmp_path / "c")]) == 0
    h = json.loads((tmp_path / "c" / "history.json").read_text())
    assert h["config"]["epochs"] == 2 and h["config"]["batch_size"] == 16


def test_verify_flags_corrupted_model(tmp_path, csv_path):
    from mononet.model import save
    from mononet.verification import corrupt_monotone_weight
    run(["train", "--data", str(csv_path), "--spec", "6,2,4", "--epochs", "1", "--out", str(tmp_path)])
    m = load(tmp_path / "model.mnet")
    save(corrupt_monotone_weight(m, m.blocks[0].monotone[0], 0, 0), tmp_path / "bad.mnet")
    assert run(["verify", "--model", str(tmp_path / "bad.mnet"), "--probes", "2000", "--out", str(tmp_path)]) == 4


def test_baselines(tmp_path, csv_path):
    assert run(["baseline", "--data", str(csv_path), "--method", "cart", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "baseline.json").read_text())["method"] == "cart"
    table = tmp_path / "pts.csv"
    table.write_text("f0,2\nf2,-1\n")
    assert run(["baseline", "--data", str(csv_path), "--method", "risk", "--table", str(table),
                "--out", str(tmp_path)]) == 0
    assert "offset" in json.loads((tmp_path / "baseline.json").read_text())


def test_hierarchical_train_and_trace(tmp_path, idx_paths):
    img, lab = idx_paths
    out = tmp_path / "h"
    assert run(["train", "--images", str(img), "--labels", str(lab), "--arch", "hierarchical", "--filters", "4",
                "--kernel", "3", "--mono1", "6", "--mono2", "", "--epochs", "10", "--learning-rate", "0.01",
                "--batch-size", "8", "--out", str(out)]) == 0
    assert run(["verify", "--model", str(out / "model.mnet"), "--probes", "500"]) == 0
    assert run(["trace", "--model", str(out / "model.mnet"), "--images", str(img), "--labels", str(lab),
                "--index", "4", "--out", str(out / "trace")]) == 0
    assert (out / "trace" / "image.pgm").exists() and (out / "trace" / "trace.txt").exists()
    assert json.loads((out / "trace" / "trace.json").read_text())["sample_id"] == 4


@pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--bogus"], ["verify"],
                                  ["baseline", "--method", "cart", "--out", "x"]])
def test_usage_errors_exit_1(argv, capsys):
    assert run(argv) == 1
    err = capsys.readouterr().err
    assert err.strip() and len(err.strip().splitlines()) == 1


def test_data_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,a\n1,1\n1\n")
    assert run(["train", "--data", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err
    assert run(["verify", "--model", str(bad)]) == 2
    assert run(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2


def test_divergence_exits_3(tmp_path, csv_path):
    assert run(["train", "--data", str(csv_path), "--optimizer", "sgd", "--learning-rate", "1e30",
                "--out", str(tmp_path)]) == 3


def test_bench_without_data_exits_2(tmp_path, capsys):
    assert run(["bench", "--suite", "risk", "--runs", "1", "--data-dir", str(tmp_path), "--out", str(tmp_path)]) == 2
    table = (tmp_path / "table.txt").read_text()
    assert "MonoNet (reported)" in table and "84.29" in table


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    assert set(sub.choices) == {"train", "eval", "verify", "interpret", "baseline", "trace", "bench"}
    for name, p in sub.choices.items():
        assert run([name, "--help"]) == 0
        text = capsys.readouterr().out
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mononet", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "verify" in r.stdout
