import json
import subprocess
import sys

import pytest

from tcomm.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


def test_gen_data_requires_seed(capsys):
    code, _, err = run(["gen-data", "--snr-s", "5"], capsys)
    assert code == 2 and error_of(err)["error"] == "usage"


def test_unknown_flag_and_command(capsys):
    code, _, err = run(["gen-data", "--seed", "1", "--bogus"], capsys)
    assert code == 2 and "--bogus" in error_of(err)["message"]
    assert run(["launch"], capsys)[0] == 2


def test_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 1, "nope": 2}))
    code, _, err = run(["gen-data", "--config", str(bad)], capsys)
    assert code == 3 and error_of(err)["error"] == "config"
    bad.write_text("{not json")
    assert run(["sweep", "--config", str(bad)], capsys)[0] == 3
    bad.write_text(json.dumps({"pipelines": ["toc"], "snr_s_grid": [], "snr_c_grid": [0], "seeds": [1]}))
    assert run(["sweep", "--config", str(bad)], capsys)[0] == 3


def test_config_supplies_defaults_and_flags_win(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "n_samples": 40, "snr_s": 0}))
    code, out, _ = run(["gen-data", "--config", str(cfg), "--n-samples", "20", "--out", str(tmp_path / "d")], capsys)
    assert code == 0 and json.loads(out)["train"] == 16


def test_train_eval_round_trip(tmp_path, capsys):
    d, m = tmp_path / "d", tmp_path / "m"
    assert run(["gen-data", "--seed", "1", "--n-samples", "200", "--out", str(d), "--csv"], capsys)[0] == 0
    assert (d / "dataset.csv").exists()
    code, out, _ = run(["train", "--seed", "1", "--data", str(d / "dataset.tcds"), "--epochs", "2", "--out", str(m)], capsys)
    assert code == 0
    trained = json.loads(out)["test_accuracy"]
    code, out, _ = run(["eval", "--seed", "1", "--model", str(m), "--data", str(d / "dataset.tcds")], capsys)
    report = json.loads(out)
    assert code == 0 and report["accuracy"] == trained and report["n"] == 40
    assert run(["eval", "--seed", "1", "--model", str(m)], capsys)[0] == 2
    code, _, err = run(["eval", "--seed", "1", "--model", str(m), "--data", str(tmp_path / "missing")], capsys)
    assert code == 1 and "message" in error_of(err)


def test_attack_commands(tmp_path, capsys):
    common = ["--seed", "2", "--n-samples", "200", "--epochs", "2", "--out", str(tmp_path)]
    code, out, _ = run(["attack", "backdoor", "--tau", "0.2", "--theta", "0.6283", *common], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["tau"] == 0.2 and set(rep) >= {"acc_poisoned_victim", "acc_clean_victim", "acc_clean_target"}
    assert (tmp_path / "backdoor.json").exists()
    code, out, _ = run(["attack", "fgsm", "--pnr-db", "-5", "--snr-s", "10", "--mode", "non_targeted", *common], capsys)
    rep = json.loads(out)
    assert code == 0 and abs(rep["epsilon"] - 0.05623 * (0.5 / 10) ** 0.5 / 0.1) < 1e-4
    assert run(["attack", "fgsm", "--pnr-db", "0"], capsys)[0] == 2
    assert run(["attack"], capsys)[0] == 2


def test_sweep_then_report(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(
        json.dumps(
            {
                "pipelines": ["toc", "nochannel"],
                "snr_s_grid": [0, 10],
                "snr_c_grid": [5],
                "seeds": [1],
                "train": {"epochs": 1},
                "n_samples": 100,
                "attacks": [{"type": "evasion", "pnr_db": 0}],
            }
        )
    )
    monkeypatch.setenv("TCOMM_OUT", str(tmp_path / "env"))
    code, out, _ = run(["sweep", "--config", str(cfg), "--cache-dir", str(tmp_path / "cache")], capsys)
    summary = json.loads(out)
    assert code == 0 and summary["records"] == summary["expected"] == 8
    assert (tmp_path / "env" / "results.csv").exists()
    code, out, _ = run(["report", "--kind", "svg"], capsys)
    assert code == 0 and len(json.loads(out)["written"]) == 3
    code, out, _ = run(["report", "--kind", "table"], capsys)
    assert code == 0 and "fgsm" in out
    assert run(["report", "--kind", "svg", "--results", str(tmp_path / "nothing.json")], capsys)[0] == 1
    assert run(["report", "--kind", "pdf"], capsys)[0] == 2


def test_sweep_needs_config(capsys):
    assert run(["sweep"], capsys)[0] == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tcomm.cli", "gen-data"], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "usage"
