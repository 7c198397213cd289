import csv
import json
import math

import pytest

from qswitch.cli import main
from qswitch.config import ConfigError, resolve


def _rows(path):
    with open(path, newline="") as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_emitter_check_exit_zero(tmp_path, capsys):
    assert main(["emitter-check", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "emitter_check.csv")
    assert rows and all(r["passed"] == "1" for r in rows)
    head = (tmp_path / "emitter_check.csv").read_text().splitlines()[0]
    assert head == "# schema_version=1,experiment=emitter-check"
    assert (tmp_path / "run.log").exists()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("QSWITCH_OUTPUT_DIR", str(tmp_path))
    assert main(["emitter-check"]) == 0
    assert (tmp_path / "emitter-check" / "manifest.json").exists()


def test_config_errors_are_all_listed(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("network:\n  kappa_mhz: -1\n  bogus: 3\nmonte_carlo:\n  trajectories: 0\n")
    assert main(["qst", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "kappa_mhz" in err and "bogus" in err and "trajectories" in err


def test_sample_size_larger_than_trajectories_rejected(tmp_path, capsys):
    assert main(["bell", "--trajectories", "10", "--sample-size", "20", "--out", str(tmp_path)]) == 2
    assert "sample_size" in capsys.readouterr().err


def test_bell_with_wrong_shift_is_precondition_error(tmp_path, capsys):
    code = main(["bell", "--chi", "2", "--tau-ns", "600", "--trajectories", "4", "--out", str(tmp_path)])
    assert code == 3
    assert "chi_s1 = kappa" in capsys.readouterr().err


def test_attenuation_converts_to_loss():
    cfg = resolve({"noise": {"attenuation_db_per_km": 0.5}})
    assert cfg["noise"]["p_loss"] == pytest.approx(1.0 - 10 ** (-0.005 / 10), rel=1e-12)
    assert cfg["noise"]["p_loss"] == pytest.approx(1.1506e-3, rel=1e-4)
    with pytest.raises(ConfigError):
        resolve({"noise": {"attenuation_db_per_km": 0.5, "p_loss": 1e-3}})


def test_resolve_is_idempotent():
    cfg = resolve({"network": {"chi_over_kappa": [2.0]}}, "ghz")
    assert cfg["network"]["chi_over_kappa"] == [2.0] * 4
    assert resolve(cfg, "ghz") == cfg


def test_w_default_shift_schedule(tmp_path):
    code = main(["w", "--n", "3", "--tau-ns", "600", "--trajectories", "4", "--out", str(tmp_path)])
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    sched = man["derived"]["shift_schedule_over_kappa"]
    assert sched == pytest.approx([1 / math.sqrt(2), 1.0], abs=1e-12)
    chi = man["config"]["network"]["chi_over_kappa"]
    assert chi[0] == pytest.approx(1 / math.sqrt(2)) and chi[2] == pytest.approx(1.0)
    row = _rows(tmp_path / "w.csv")[0]
    assert float(row["fidelity_coherent"]) > 0.999


def test_manifest_round_trip_reproduces_csv(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["bell", "--tau-ns", "520", "--t1-us", "10", "--trajectories", "30", "--resamples", "5", "--seed", "3"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(["bell", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "bell.csv").read_bytes() == (b / "bell.csv").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    ma["config"]["output"]["directory"] = mb["config"]["output"]["directory"] = None
    assert ma == mb


def test_worker_count_does_not_change_output(tmp_path):
    args = ["qst", "--tau-ns", "450", "--t1-us", "5", "--trajectories", "40", "--resamples", "7", "--seed", "11"]
    assert main(args + ["--workers", "1", "--out", str(tmp_path / "w1")]) == 0
    assert main(args + ["--workers", "3", "--out", str(tmp_path / "w3")]) == 0
    for name in ("qst.csv", "manifest.json"):
        x = (tmp_path / "w1" / name).read_bytes()
        y = (tmp_path / "w3" / name).read_bytes()
        if name == "manifest.json":
            x, y = x.replace(b"w1", b""), y.replace(b"w3", b"")
        assert x == y


def test_route_split(tmp_path):
    assert main(["route", "--order", "simultaneous_split", "--out", str(tmp_path)]) == 0
    row = _rows(tmp_path / "route.csv")[0]
    assert float(row["norm_left"]) == pytest.approx(0.5, abs=1e-3)
    assert float(row["norm_right"]) == pytest.approx(0.5, abs=1e-3)


def test_bad_switch_bits_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["route", "--switch-bits", "1,2"])
    assert exc.value.code == 2
