import json
from pathlib import Path

import pytest

from slipnet import cli
from slipnet.harness import TRACE_COLUMNS

GOLDEN = Path(__file__).parent / "golden"
TINY = ["--counts", "2,1,1", "--num-points", "600", "--n", "15"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def report(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


@pytest.mark.parametrize("command", ["", "gen-dataset", "train", "eval", "simulate", "oracle"])
def test_help_matches_golden(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    argv = [command, "--help"] if command else ["--help"]
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 0
    expected = (GOLDEN / f"help_{command or 'slipnet'}.txt").read_text()
    assert capsys.readouterr().out == expected


@pytest.mark.parametrize("road, lam, mu", [
    ("wet", "0.130839", "0.801339"),
    ("dry", "0.170008", "1.170020"),
    ("snow", "0.059996", "0.190038"),
])
def test_oracle(capsys, road, lam, mu):
    code, out, _ = run(capsys, "oracle", "--road", road)
    assert code == 0
    assert report(out) == {"lambda_star": lam, "mu_star": mu}


def test_oracle_grid_and_bad_road(capsys):
    code, out, _ = run(capsys, "oracle", "--road", "wet", "--grid", "100001")
    assert code == 0 and report(out)["lambda_star"] == "0.130840"
    code, _, err = run(capsys, "oracle", "--road", "ice")
    assert code == 2 and "error" in err


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-dataset", "--out", str(d / "train.ds"), "--holdout-out", str(d / "test.ds"), *TINY]) == 0
    assert cli.main(["train", "--dataset", str(d / "train.ds"), "--out", str(d / "m.mdl"), "--epochs", "3",
                     "--s-forwards", "20"]) == 0
    return d


def test_gen_dataset_report_and_files(tiny, capsys):
    code, out, _ = run(capsys, "gen-dataset", "--out", tiny / "again.ds", *TINY, "--csv", tiny / "again.csv")
    assert code == 0
    rep = report(out)
    assert rep["n"] == "15" and rep["seed"] == "42" and rep["curves"] == "5"  # two path curves plus the three reference roads
    assert (tiny / "again.csv").exists()


def test_train_writes_loss_log(tiny):
    lines = (tiny / "m.mdl.loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss" and len(lines) == 4


def test_eval_report_keys(tiny, capsys):
    code, out, _ = run(capsys, "eval", "--model", tiny / "m.mdl", "--dataset", tiny / "test.ds",
                       "--s-forwards", "20", "--report", tiny / "r.txt")
    assert code == 0
    assert list(report(out)) == [
        "windows", "rmse", "mae", "mean_std", "sigma_obs",
        "calibration_k1", "calibration_k2", "calibration_k3",
        "rmse_dry", "rmse_wet", "rmse_snow",
    ]
    assert (tiny / "r.txt").read_text().strip() == out.strip()


def test_simulate_writes_trace_and_summary(tiny, capsys):
    scen = tiny / "s.ini"
    scen.write_text("[scenario]\nmode = open_loop\n[schedule]\nroads = DS\nduration = 1.0\n"
                    "[profile]\nkind = constant\ntorque = 4000\n[sim]\nt_max = 1.5\n[estimator]\ns_forwards = 20\n")
    code, out, _ = run(capsys, "simulate", "--scenario", scen, "--model", tiny / "m.mdl", "--out", tiny / "t.csv")
    assert code == 0
    rep = report(out)
    assert rep["scenario"] == "s" and rep["transition1_roads"] == "Dry->Snow"
    assert (tiny / "t.csv").read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
    summary = json.loads((tiny / "t.csv.json").read_text())
    assert summary["mode"] == "open_loop"


def test_simulate_list(capsys):
    code, out, _ = run(capsys, "simulate", "--list")
    assert code == 0 and "DSD" in out.split()


def test_exit_codes(tiny, tmp_path, capsys):
    assert run(capsys, "gen-dataset", "--out", tmp_path / "x.ds", "--n", "1")[0] == 2
    assert run(capsys, "train", "--dataset", tmp_path / "missing.ds", "--out", tmp_path / "m.mdl")[0] == 3
    (tmp_path / "junk.ds").write_bytes(b"not a dataset")
    assert run(capsys, "train", "--dataset", tmp_path / "junk.ds", "--out", tmp_path / "m.mdl")[0] == 3
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nmode = upside_down\n[schedule]\nroads = W\n[profile]\nkind = constant\ntorque = 1\n")
    code, _, err = run(capsys, "simulate", "--scenario", bad, "--out", tmp_path / "t.csv")
    assert code == 5 and "line 2" in err
    with pytest.warns(RuntimeWarning):
        code, _, err = run(capsys, "train", "--dataset", tiny / "train.ds", "--out", tmp_path / "d.mdl",
                           "--lr", "1e9", "--epochs", "20")
    assert code == 4 and "epoch" in err
    with pytest.raises(SystemExit) as info:
        cli.main(["oracle"])
    assert info.value.code == 2
