import json
import subprocess
import sys

import pytest

from cantap.cli import main


def test_run_prevent_writes_outputs(tmp_path, capsys):
    m, tr, al = tmp_path / "m.json", tmp_path / "t.txt", tmp_path / "a.txt"
    rc = main(["run", "table2-row1.scn", "--mode", "prevent", "--metrics", str(m), "--trace", str(tr),
               "--alerts", str(al)])
    assert rc == 0
    data = json.loads(m.read_text())
    assert data["prevention_rate_percent"] == 100.0
    assert data["false_positive_count"] == 0
    assert "PreventedByOfficer" in tr.read_text()
    assert al.read_text().splitlines()[0].split()[1] in ("Error1", "Error2")
    assert json.loads(capsys.readouterr().out) == data


def test_run_overrides(tmp_path):
    m = tmp_path / "m.json"
    assert main(["run", "table2-row1.scn", "--mode", "off", "--ticks", "60000", "--seed", "3",
                 "--metrics", str(m)]) == 0
    data = json.loads(m.read_text())
    assert data["asr_percent"] == 100.0 and data["attack_entries"] == 6


def test_learn_writes_allowlist(tmp_path, capsys):
    out = tmp_path / "allow.txt"
    assert main(["learn", "table2-row2.scn", "--out", str(out)]) == 0
    text = out.read_text()
    assert "sensor: 0x0C8" in text and "attacker: 0x2B0" in text
    assert capsys.readouterr().out == text


def test_sweep_coverage(capsys):
    assert main(["sweep-coverage", "coverage.scn", "--monitored", "A,B"]) == 0
    out = capsys.readouterr().out
    assert "coverage law holds" in out


def test_cdf_small(tmp_path, capsys):
    out = tmp_path / "cdf.csv"
    assert main(["cdf", "mixed.scn", "--ticks", "150000", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "offset,fraction"
    last_offset, last_frac = rows[-1].split(",")
    assert int(last_offset) <= 6 and float(last_frac) == 1.0


def test_missing_scenario(capsys):
    assert main(["run", "missing.scn"]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("[scenario]\nseed = x\n")
    assert main(["run", str(bad)]) == 2
    assert "[scenario] seed" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["frobnicate"], ["run", "x.scn", "--mode", "maybe"], []])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cantap.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("run", "learn", "cdf", "sweep-coverage", "demo-sensor"):
        assert cmd in res.stdout


def test_demo_sensor(tmp_path, capsys):
    out = tmp_path / "demo.csv"
    assert main(["demo-sensor", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "tick,value,malicious"
    text = capsys.readouterr().out
    assert "spoofed 0" in text and "bus-off at tick" in text
