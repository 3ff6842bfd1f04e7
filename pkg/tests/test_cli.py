from __future__ import annotations

import json

import pytest
import yaml

from sliceforge.cli import main
from sliceforge.learned import SlicePredictorModel
from sliceforge.traffic import COLUMNS, LABEL_COLUMN, TrafficMixConfig, generate_stream, write_dataset


def run(*argv: str) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.csv"
    write_dataset(generate_stream(TrafficMixConfig(total_requests=1500, seed=4)), path)
    return path


def test_gen_traffic_zero_total(tmp_path, capsys):
    out = tmp_path / "zero.csv"
    assert run("gen-traffic", "--config", "baseline-20h", "--total", 0, "--out", out) == 0
    assert out.read_text() == ",".join((*COLUMNS, LABEL_COLUMN)) + "\n"


@pytest.mark.slow
def test_gen_traffic_baseline_rows(tmp_path, capsys):
    out = tmp_path / "base.csv"
    assert run("gen-traffic", "--config", "baseline-20h", "--out", out) == 0
    with open(out) as fh:
        assert sum(1 for _ in fh) == 500_001
    assert "eMBB" in capsys.readouterr().out


def test_gen_traffic_deterministic_and_env_seed(tmp_path, monkeypatch):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert run("gen-traffic", "--config", "baseline-20h", "--total", 300, "--seed", 9, "--out", a) == 0
    assert run("gen-traffic", "--config", "baseline-20h", "--total", 300, "--seed", 9, "--out", b) == 0
    monkeypatch.setenv("SLICEFORGE_SEED", "9")
    assert run("gen-traffic", "--config", "baseline-20h", "--total", 300, "--out", c) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    monkeypatch.setenv("SLICEFORGE_SEED", "nine")
    assert run("gen-traffic", "--config", "baseline-20h", "--total", 3, "--out", tmp_path / "d.csv") == 2


def test_gen_traffic_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"traffic": {"total_requests": 10, "fraction_embb": 0.9}}))
    out = tmp_path / "out.csv"
    assert run("gen-traffic", "--config", cfg, "--out", out) == 2
    assert "fraction" in capsys.readouterr().err
    assert not out.exists()
    cfg.write_text("traffic: {burst: 3}")
    assert run("gen-traffic", "--config", cfg, "--out", out) == 2
    assert "burst" in capsys.readouterr().err
    assert not out.exists()


def test_gen_traffic_from_scenario_file(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({"traffic": {"total_requests": 25, "duration_hours": 1, "seed": 3}}))
    out = tmp_path / "out.csv"
    assert run("gen-traffic", "--config", cfg, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 26


def test_train_writes_identical_checkpoints(dataset, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    pairs = tmp_path / "pairs.csv"
    assert run("train", "--data", dataset, "--seed", 2, "--epochs", 5, "--out", a, "--pairs-out", pairs) == 0
    printed = capsys.readouterr().out
    assert "Accuracy" in printed
    held_out = int(printed.split("evaluated on ")[1].split()[0])
    assert 520 <= held_out <= 530  # 35% of 1500, rounded per class
    assert run("train", "--data", dataset, "--seed", 2, "--epochs", 5, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    SlicePredictorModel.load(a)
    assert len(pairs.read_text().splitlines()) == 1 + held_out


def test_train_errors(tmp_path):
    assert run("train", "--data", tmp_path / "missing.csv", "--out", tmp_path / "m.json") == 2
    one_class = tmp_path / "one.csv"
    cfg = TrafficMixConfig(fraction_embb=1, fraction_mmtc=0, fraction_urllc=0, total_requests=50)
    write_dataset(generate_stream(cfg), one_class)
    assert run("train", "--data", one_class, "--out", tmp_path / "m.json") == 3
    assert not (tmp_path / "m.json").exists()
    schema = tmp_path / "schema.csv"
    schema.write_text("id,qci\n1,2\n")
    assert run("train", "--data", schema, "--out", tmp_path / "m.json") == 2


def test_simulate_outage_oracle(tmp_path, capsys):
    out = tmp_path / "sim"
    assert run("simulate", "--scenario", "mmtc-outage", "--model", "oracle", "--scale", 0.02, "--out-dir", out) == 0
    totals = json.loads((out / "totals.json").read_text())
    assert totals["failure_redirected"] > 0
    assert totals["arrivals"] == 10_000
    assert len((out / "samples.csv").read_text().splitlines()) == 121
    assert not (out / "pairs.csv").exists()
    rows = (out / "decisions.csv").read_text().splitlines()[1:]
    windows = [(2.5 * 3600, 4.75 * 3600), (13 * 3600, 17 * 3600)]
    for row in rows:
        fields = row.split(",")
        t, assigned = float(fields[1]), fields[6]
        if any(a <= t < b for a, b in windows):
            assert assigned != "mMTC"


def test_simulate_with_model_then_evaluate(tmp_path, capsys):
    ckpt = tmp_path / "m.json"
    SlicePredictorModel(seed=1).save(ckpt)
    out = tmp_path / "sim"
    assert run("simulate", "--scenario", "baseline-20h", "--model", ckpt, "--scale", 0.002, "--out-dir", out) == 0
    assert len((out / "pairs.csv").read_text().splitlines()) == 1001
    capsys.readouterr()
    assert run("evaluate", "--pairs", out / "pairs.csv", "--json") == 0
    doc = json.loads(capsys.readouterr().out)
    assert sum(doc["per_class"][k]["support"] for k in ("eMBB", "mMTC", "URLLC")) == 1000


def test_simulate_errors(tmp_path, capsys):
    assert run("simulate", "--scenario", "nope", "--out-dir", tmp_path / "x") == 2
    assert "baseline-20h" in capsys.readouterr().err
    narrow = tmp_path / "narrow.json"
    SlicePredictorModel(input_dim=30).save(narrow)
    out = tmp_path / "y"
    assert run("simulate", "--scenario", "baseline-20h", "--model", narrow, "--scale", 0.001, "--out-dir", out) == 4
    assert not out.exists()
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert run("simulate", "--scenario", "baseline-20h", "--model", junk, "--out-dir", out) == 4
    assert run("simulate", "--scenario", "baseline-20h", "--model", tmp_path / "none.json", "--out-dir", out) == 2


def write_pairs(path, rows):
    path.write_text("true,predicted\n" + "".join(f"{a},{b}\n" for a, b in rows))


def test_evaluate_outputs(tmp_path, capsys):
    perfect = tmp_path / "p.csv"
    write_pairs(perfect, [("eMBB", "eMBB"), ("mMTC", "mMTC"), ("URLLC", "URLLC")])
    assert run("evaluate", "--pairs", perfect) == 0
    out = capsys.readouterr().out
    assert out.count("100.00") >= 4
    fixture = tmp_path / "f.csv"
    kinds = ["eMBB", "mMTC", "URLLC"]
    matrix = [[8, 1, 1], [0, 9, 1], [1, 0, 9]]
    write_pairs(fixture, [(kinds[i], kinds[j]) for i in range(3) for j in range(3) for _ in range(matrix[i][j])])
    assert run("evaluate", "--pairs", fixture) == 0
    out = capsys.readouterr().out
    # accuracy 26/30, macro recall 26/30, macro precision 86.90, macro F 86.64 (hand fractions)
    assert "86.67     86.67      86.90     86.64" in out


def test_evaluate_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    write_pairs(bad, [("eMBB", "eMBB"), ("eMBB", "5G-ish")])
    assert run("evaluate", "--pairs", bad) == 2
    assert "line 3" in capsys.readouterr().err
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run("evaluate", "--pairs", empty) == 3
    header_only = tmp_path / "h.csv"
    header_only.write_text("true,predicted\n")
    assert run("evaluate", "--pairs", header_only) == 3
    assert run("evaluate", "--pairs", tmp_path / "missing.csv") == 2


def test_report(tmp_path, capsys):
    out = tmp_path / "sim"
    assert run("simulate", "--scenario", "baseline-20h", "--scale", 0.002, "--out-dir", out) == 0
    series = tmp_path / "util.csv"
    assert run("report", "--samples", out / "samples.csv", "--kind", "utilization", "--out", series) == 0
    assert len(series.read_text().splitlines()) == 115
    assert run("report", "--samples", out / "samples.csv", "--out", series, "--skip-warmup", 0) == 0
    assert len(series.read_text().splitlines()) == 121
    assert run("report", "--samples", tmp_path / "nope.csv", "--out", series) == 2


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2
