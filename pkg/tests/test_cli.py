import csv
import json

import pytest

from polaropt import __version__
from polaropt.cli import main, read_config

SMALL_RUN = ["--hc", "3", "--layers", "1", "--n-train", "32", "--n-test", "16",
             "--n-points", "6", "--warmup", "1"]


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_counterexample_default(capsys):
    assert main(["counterexample"]) == 0
    out = capsys.readouterr().out
    row = next(line for line in out.splitlines() if line.split()[0] == "1")
    assert "0.585786" in row and "0.500000" in row
    assert len(out.strip().splitlines()) == 5


@pytest.mark.parametrize("argv", [
    ["counterexample", "--eps", "-1"],
    ["counterexample", "--eps", "0"],
    ["counterexample", "--eps", "abc"],
    ["audit", "--triples", "0"],
    ["audit", "--shapes", "8by8"],
    ["train", "--optimizer", "sgd"],
    ["sweep", "--optimizers", "muon,sgd"],
    ["sweep", "--seeds", "0"],
    [],
])
def test_bad_flags_exit_1(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_audit_byte_identical(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["audit", "--shapes", "8x8", "--triples", "1", "--seed", "7",
                     "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    manifest = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert manifest["master_seed"] == 7 and manifest["command"] == "audit"
    assert manifest["artifacts"] == [str(paths[0])]
    assert "wall_seconds" in manifest and "timestamp" in manifest
    assert "8x8 (8,8)" in capsys.readouterr().out


def test_audit_csv_to_stdout(capsys):
    assert main(["audit", "--shapes", "4x4,8x2", "--triples", "2", "--format", "csv"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [(r["rows"], r["cols"]) for r in rows] == [("4", "4"), ("8", "2")]


def test_audit_band_violation_exit_2(capsys):
    # a 1x1 matrix has only sign gauges, which the sign map respects, so
    # the rho column falls below its band
    assert main(["audit", "--shapes", "1x1", "--triples", "3"]) == 2


def test_train_json(tmp_path):
    out = tmp_path / "run.json"
    assert main(["train", *SMALL_RUN, "--optimizer", "muon", "--seed", "1", "--epochs", "1",
                 "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert len(rec["history"]) == 1
    assert rec["config"]["optimizer"] == "muon" and rec["config"]["seed"] == 1
    assert "final_test_mse" in rec and "wall_seconds" not in rec
    out2 = tmp_path / "run2.json"
    main(["train", *SMALL_RUN, "--optimizer", "muon", "--seed", "1", "--epochs", "1",
          "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()
    assert (tmp_path / "run.json.manifest.json").exists()


def test_train_divergence_exit_3(tmp_path):
    assert main(["train", *SMALL_RUN, "--optimizer", "adamw", "--lr", "1e300",
                 "--aux-lr", "1e300", "--epochs", "2", "--warmup", "0",
                 "--out", str(tmp_path / "x.json")]) == 3


def test_sweep_single_seed(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", *SMALL_RUN, "--seeds", "1", "--epochs", "1",
                 "--out", str(out), "--runs-out", str(tmp_path / "runs.json")]) == 0
    rows = list(csv.DictReader(out.read_text().splitlines()))
    assert [r["optimizer"] for r in rows] == ["adamw", "muon", "polaradamw", "polaradamw-muon"]
    assert all(r["paired_t"] == "" for r in rows)
    assert len(json.loads((tmp_path / "runs.json").read_text())) == 3
    assert "paired D" in capsys.readouterr().out


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# audit defaults\nshapes = 4x4\ntriples = 2\nformat = csv\nseed = 3\n")
    assert main(["--config", str(cfg), "audit"]) == 0
    from_cfg = capsys.readouterr().out
    assert main(["audit", "--shapes", "4x4", "--triples", "2", "--format", "csv",
                 "--seed", "3"]) == 0
    assert capsys.readouterr().out == from_cfg
    assert main(["--config", str(cfg), "audit", "--seed", "4"]) == 0
    assert capsys.readouterr().out != from_cfg


def test_config_errors(tmp_path):
    bad_key = tmp_path / "bad.txt"
    bad_key.write_text("nonsense = 1\n")
    assert main(["--config", str(bad_key), "audit"]) == 1
    bad_value = tmp_path / "bad_value.txt"
    bad_value.write_text("triples = 0\n")
    assert main(["--config", str(bad_value), "audit"]) == 1
    assert main(["--config", str(tmp_path / "missing.txt"), "audit"]) == 1


def test_read_config(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("a-b = 1  # trailing\n\n c=x=y\n")
    assert read_config(cfg) == {"a_b": "1", "c": "x=y"}
