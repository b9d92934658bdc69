import json
import shutil
import subprocess

import pytest
import yaml

from wavepinn.cli import OUTPUT_ENV, main
from test_fileio import config_doc


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    rows = dict(line.split(",", 1) for line in out.out.strip().splitlines() if "," in line)
    return code, rows, out.err


def test_dispersion_and_spectrum(capsys, tmp_path):
    code, rows, _ = run(capsys, "dispersion", "--period", "1.2", "--depth", "0.7")
    assert code == 0 and float(rows["k"]) == pytest.approx(2.894, rel=5e-3)
    code, rows, _ = run(capsys, "spectrum", "--tp", "1.2", "--gamma", "3", "--depth", "0.7",
                        "--out", str(tmp_path / "s"))
    assert code == 0 and float(rows["omega_high"]) == pytest.approx(9.62, rel=0.01)
    assert (tmp_path / "s" / "spectrum.csv").exists() and (tmp_path / "s" / "spectrum.png").exists()
    code, rows, _ = run(capsys, "region", "--tp", "1.2", "--gamma", "3", "--depth", "0.7",
                        "--x-offset", "-1.494", "--x-extent", "4", "--t", "2.145")
    assert code == 0 and float(rows["cg_low"]) == pytest.approx(0.51, rel=0.01)


def test_exit_codes(capsys, tmp_path):
    assert run(capsys, "dispersion", "--depth", "1")[0] == 1
    assert run(capsys, "nosuchcommand")[0] == 1
    assert run(capsys, "dispersion", "--omega", "-1", "--depth", "1")[0] == 1
    assert run(capsys, "evaluate", "--truth", str(tmp_path / "missing.field"), "--estimate", "x")[0] == 1


def test_data_pipeline(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env_out"))
    code, rows, _ = run(capsys, "synth", "--reference-rows", "1", "2", "--x", "0", "50", "--t", "0", "15",
                        "--dx", "1", "--dt", "0.5", "--surface-potential")
    assert code == 0 and rows["elevation"].startswith(str(tmp_path / "env_out"))
    field = rows["elevation"]
    code, rows, _ = run(capsys, "buoys", "--field", field, "--positions", "0", "25", "50",
                        "--out", str(tmp_path / "b.csv"))
    assert code == 0 and int(rows["n_points"]) == 3 * 31
    code, rows, _ = run(capsys, "snapshots", "--field", field, "--times", "1", "2",
                        "--out", str(tmp_path / "s.csv"))
    assert code == 0 and int(rows["n_points"]) == 2 * 51
    code, rows, _ = run(capsys, "evaluate", "--truth", field, "--estimate", field, "--out", str(tmp_path / "ev"))
    assert code == 0 and float(rows["ssp"]) == 0.0
    assert {p.suffix for p in (tmp_path / "ev").iterdir()} == {".csv", ".png"}


def test_assimilate_and_evaluate_checkpoint(capsys, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump(config_doc()))
    out = tmp_path / "run"
    code, rows, err = run(capsys, "assimilate", "--config", str(cfg), "--out", str(out), "--seed", "2")
    assert code == 0, err
    assert 0.0 <= float(rows["ssp_elevation"]) <= 1.0
    report = json.loads((out / "report.json").read_text())
    assert report["epochs"] == int(rows["epochs"])
    assert (out / "train_log.csv").exists() and (out / "training.png").exists()
    code, rows, _ = run(capsys, "synth", "--config", str(cfg), "--surface-potential", "--out", str(tmp_path / "f"))
    assert code == 0
    code, rows, err = run(capsys, "evaluate", "--truth", str(tmp_path / "f" / "elevation.field"),
                          "--checkpoint", str(out / "model.json"), "--out", str(tmp_path / "ev"),
                          "--log", str(out / "train_log.csv"))
    assert code == 0, err
    assert 0.0 <= float(rows["ssp"]) <= 1.0
    assert (tmp_path / "ev" / "training.png").exists()
    # a scenario mismatch is a configuration error
    assert run(capsys, "predict", "--config", str(cfg), "--out", str(out))[0] == 1


@pytest.mark.skipif(shutil.which("wavepinn") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["wavepinn", "dispersion", "--omega", "1.0", "--depth", "200"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("omega,1")
    res = subprocess.run(["wavepinn", "dispersion"], capture_output=True, text=True)
    assert res.returncode == 1 and "error" in res.stderr
