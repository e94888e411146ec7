import csv
import json

import pytest

from krgnn.cli import RunManifest, build_id, main, read_manifest
from krgnn.errors import ParseError


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-sbm", "--n", "80", "--blocks", "2", "--feat-dim", "6", "--seed", "1",
                 "--out", str(out)]) == 0
    d = out / "gen-sbm-1"
    return ["--edges", str(d / "edges.txt"), "--features", str(d / "features.csv"),
            "--labels", str(d / "labels.txt")]


def test_synthetic_1d_contract(tmp_path):
    assert main(["synthetic", "1d", "--n", "1000", "--seed", "7", "--out", str(tmp_path)]) == 0
    run = tmp_path / "synthetic-1d-7"
    rows = _rows(run / "sweep.csv")
    assert len(rows) == 4
    assert [float(r["theory_rho"]) for r in rows] == [0.0, 1.0, 0.0, 0.0]
    manifest = read_manifest(run / "manifest.json")
    assert manifest.subcommand == "synthetic" and manifest.seed == 7
    assert manifest.config["n"] == 1000 and manifest.config["sigma"] == "median-dim"
    assert set(manifest.outputs) == {"sweep.csv", "bandwidths.csv", "manifest.json"}


def test_manifest_json_round_trip():
    m = RunManifest("girl", {"lr": 0.1, "split": [0.6, 0.2, 0.2]}, {"edges": "/e"}, 3,
                    "t0", "t1", ["metrics.csv"], build_id=build_id())
    assert RunManifest.from_json(m.to_json()) == m
    assert len(m.build_id) == 12


def test_bad_manifest(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text('{"subcommand": "girl"}')
    with pytest.raises(ParseError):
        read_manifest(path)


def test_supervised_rerun_identical(tmp_path, dataset):
    args = ["supervised", *dataset, "--lambda", "0", "--epochs", "5", "--hidden", "4",
            "--seed", "2"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "supervised-2" / "metrics.csv").read_text()
    b = (tmp_path / "b" / "supervised-2" / "metrics.csv").read_text()
    assert a == b
    assert "kr_exact_layer2" in a


def test_girl_then_eval_matches(tmp_path, dataset):
    out = str(tmp_path / "runs")
    assert main(["girl", *dataset, "--epochs", "5", "--hidden", "4", "--seed", "3",
                 "--set", "eval_epochs=30", "--out", out]) == 0
    girl_acc = {(r["split"]): r["value"] for r in _rows(tmp_path / "runs/girl-3/metrics.csv")
                if r["metric"] == "accuracy"}
    assert set(girl_acc) == {"train", "val", "test"}
    assert main(["eval", *dataset, "--checkpoint", str(tmp_path / "runs/girl-3/encoder.json"),
                 "--out", out]) == 0
    eval_acc = {r["split"]: r["value"] for r in _rows(tmp_path / "runs/eval-3/metrics.csv")}
    assert eval_acc == girl_acc


def test_config_file_and_flag_precedence(tmp_path, dataset):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("lr = 0.01\nepochs = 2\nhidden = 3\n")
    assert main(["girl", *dataset, "--config", str(cfg), "--lr", "0.1",
                 "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "girl-0" / "manifest.json").read_text())
    assert manifest["config"]["lr"] == 0.1
    assert manifest["config"]["epochs"] == 2
    assert manifest["config"]["lambda_ridge"] == 1e-4


def test_writes_stay_in_output_dir(tmp_path, dataset):
    before = set(tmp_path.rglob("*"))
    out = tmp_path / "only-here"
    assert main(["girl", *dataset, "--epochs", "1", "--hidden", "2", "--out", str(out)]) == 0
    new = set(tmp_path.rglob("*")) - before
    assert new and all(p == out or out in p.parents for p in new)


def test_replay_reproduces_outputs(tmp_path, dataset):
    assert main(["girl", *dataset, "--epochs", "3", "--hidden", "3", "--seed", "4",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["replay", str(tmp_path / "a/girl-4/manifest.json"),
                 "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "encoder.json"):
        a = (tmp_path / "a/girl-4" / name).read_text()
        b = (tmp_path / "b/girl-4" / name).read_text()
        assert a == b


@pytest.mark.parametrize("argv", [
    ["girl", "--bogus"],
    ["synthetic", "2d"],
    ["supervised", "--edges", "e"],
    ["girl", "--sigma", "wide"],
    ["girl", "--set", "nope=1"],
    [],
])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_runtime_errors_exit_1(tmp_path, capsys, dataset):
    assert main(["synthetic", "mi", "--alphas", "0.5,1.0", "--n", "100",
                 "--out", str(tmp_path)]) == 1
    assert "error [invalid-argument]" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1\n0 x\n")
    assert main(["girl", "--edges", str(bad), "--features", dataset[3],
                 "--out", str(tmp_path)]) == 1
    assert f"error [parse-error]: {bad}:2:" in capsys.readouterr().err
    assert main(["gen-sbm", "--n", "10", "--blocks", "3", "--out", str(tmp_path)]) == 1
    assert main(["girl", "--edges", str(tmp_path / "missing"), "--features", "x",
                 "--out", str(tmp_path)]) == 1
    assert "error [io-error]" in capsys.readouterr().err


def test_girl_requires_dataset(tmp_path, capsys):
    assert main(["girl", "--out", str(tmp_path)]) == 1
    assert "--edges" in capsys.readouterr().err
