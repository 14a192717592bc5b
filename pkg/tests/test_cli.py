import csv
import json

import pytest

from fuzzneg.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_negotiate_writes_trace_and_manifest(tmp_path, capsys):
    code, out, _ = run(capsys, "negotiate", 10, 20, 200, "--case", 1, "--seed", 3, "--out", tmp_path)
    assert code == 0 and "accepted   True" in out
    rows = list(csv.reader((tmp_path / "trace.csv").read_text().splitlines()))
    assert rows[0] == ["round", "vcpu", "ram", "storage", "score", "advice"]
    assert rows[1][:4] == ["0", "20", "40", "500"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "negotiate" and manifest["seed"] == 3
    assert len(manifest["config_sha256"]) == 64 and "numpy" in manifest["versions"]


def test_failed_negotiation_exit_code(capsys):
    code, out, _ = run(capsys, "negotiate", 40, 100, 400)
    assert code == 2 and "fee_ratio  1.000000" in out


@pytest.mark.parametrize(
    "argv",
    [
        ["negotiate", 10, 20],
        ["negotiate", 0, 20, 200],
        ["negotiate", 10, 20, 200, "--config", "/nonexistent.json"],
        ["negotiate", 10, 20, 200, "--case", 1, "--priorities", 2, 1, 1],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_one(capsys, argv):
    with pytest.raises(SystemExit) as info:
        code = main([str(a) for a in argv])
        raise SystemExit(code)
    assert info.value.code == 1


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"negotiation": {"speed": 3}}))
    code, _, err = run(capsys, "negotiate", 10, 20, 200, "--config", cfg)
    assert code == 1 and "speed" in err


def test_dump_config_documents_tunables(capsys):
    code, out, _ = run(capsys, "negotiate", 10, 20, 200, "--dump-config", "--case", 3, "--priorities", 1.5, 1, 1)
    cfg = json.loads(out)
    assert code == 0
    assert cfg["negotiation"]["case"] == 3 and cfg["negotiation"]["priorities"] == [1.5, 1.0, 1.0]
    assert {"d_max", "steps", "threshold"} <= set(cfg["negotiation"])
    assert "system" in cfg["fuzzy"] and cfg["tariff"]["mode"] == "progressive"


def test_config_file_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"negotiation": {"d_max": 2.0}}))
    _, out, _ = run(capsys, "batch", "--dump-config", "--config", cfg)
    assert json.loads(out)["negotiation"]["d_max"] == 2.0


def test_gen_dataset_and_batch(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-dataset", "--n", 15, "--seed", 4, "--out", tmp_path)
    assert code == 0
    code, out, _ = run(capsys, "batch", "--dataset", tmp_path / "dataset.csv", "--out", tmp_path / "b")
    assert code == 0 and json.loads(out)["records"] == 15
    assert (tmp_path / "b" / "report.json").exists()
    assert len(json.loads((tmp_path / "b" / "manifest.json").read_text())["outputs"]) == 2


def test_exclusion_flag(tmp_path, capsys):
    run(capsys, "gen-dataset", "--n", 30, "--out", tmp_path, "--name", "test.csv")
    run(capsys, "gen-dataset", "--n", 300, "--seed", 9, "--exclude", tmp_path / "test.csv", "--out", tmp_path, "--name", "train.csv")
    test = set(map(tuple, csv.reader((tmp_path / "test.csv").read_text().splitlines())))
    train = set(map(tuple, csv.reader((tmp_path / "train.csv").read_text().splitlines())))
    assert test & train == {("vcpu", "ram_gb", "storage_gb")}


def test_train_and_eval(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"training": {"n_pairs": 120, "epochs": 2}, "dataset": {"n": 20}}))
    code, out, _ = run(capsys, "train", "--config", cfg, "--arch", "model1", "--out", tmp_path)
    assert code == 0 and "model1" in out
    code, out, _ = run(capsys, "eval", "--config", cfg, "--model", tmp_path / "model1.json")
    assert code == 0 and set(json.loads(out)) == {"vcpu", "ram", "storage", "offer"}
    code, _, err = run(capsys, "eval", "--model", tmp_path / "missing.json")
    assert code == 1 and err


def test_calibrate_writes_loadable_system(tmp_path, capsys):
    from fuzzneg.fuzzy import FuzzySystem

    code, out, _ = run(capsys, "calibrate", "--budget", 5, "--out", tmp_path)
    assert code == 0 and "residuals" in json.loads(out)
    system = FuzzySystem.from_json(tmp_path / "fuzzy_system.json")
    code, _, _ = run(capsys, "negotiate", 10, 20, 200, "--rules", tmp_path / "fuzzy_system.json")
    assert code in (0, 2) and system.mf_kind == "triangular"
