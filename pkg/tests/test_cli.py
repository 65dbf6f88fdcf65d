import csv
import io
import json
import subprocess
import sys

import pytest

from ultrarate.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    return {row["quantity"]: row["value"] for row in csv.DictReader(io.StringIO(text))
            if "quantity" in row}


def test_rates_desk_table(capsys):
    code, out, _ = run(["rates"], capsys)
    assert code == 0
    rows = table(out)
    assert float(rows["eta"]) == pytest.approx(1.0)
    assert float(rows["alpha"]) == pytest.approx(227.8125)
    assert float(rows["lambda"]) == pytest.approx(0.2242878, abs=1e-6)


def test_rates_plaplace(capsys):
    code, out, _ = run(["rates", "--model", "plaplace"], capsys)
    rows = table(out)
    assert code == 0
    assert float(rows["eta"]) == pytest.approx(8.0)
    assert float(rows["alpha"]) == pytest.approx(6.0)


def test_inadmissible_fastdiff_exit_one(capsys):
    code, _, err = run(["rates", "--model", "fastdiff", "-r", "0.5", "--kappa", "0.2"], capsys)
    assert code == 1
    assert "κ ≤ 1/4" in err


def test_domain_error_exit_one(capsys):
    code, _, err = run(["rates", "--sigma", "-1"], capsys)
    assert code == 1 and err.startswith("error:")
    assert run(["simulate", "-N", "16", "-M", "32"], capsys)[0] == 1


def test_underflow_exit_two(capsys, tmp_path):
    code, _, err = run(["rates", "--sigma", "1e-300", "--out", str(tmp_path)], capsys)
    assert code == 2 and "underflows" in err
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == 2


def test_outputs_and_byte_identical_rerun(capsys, tmp_path):
    argv = ["simulate", "-N", "8", "--dt", "0.01", "-T", "0.2", "--paths", "20", "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(argv + ["--out", str(a)], capsys)[0] == 0
    assert run(argv + ["--out", str(b)], capsys)[0] == 0
    for name in ("results.csv", "checks.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 3 and man["config"]["M"] == 32
    assert {"version", "numpy_version", "seed_scheme", "timestamp"} <= set(man)


def test_config_file_merge(capsys, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"sigma": 2.0, "r": 3.0}))
    _, out_file, _ = run(["rates", "--config", str(conf)], capsys)
    _, out_flags, _ = run(["rates", "--sigma", "2", "-r", "3"], capsys)
    assert out_file == out_flags
    _, out_override, _ = run(["rates", "--config", str(conf), "--sigma", "1", "-r", "2"], capsys)
    _, out_default, _ = run(["rates"], capsys)
    assert out_override == out_default


def test_config_rejects_unknown_keys(capsys, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"sigmaa": 2.0}))
    code, _, err = run(["rates", "--config", str(conf)], capsys)
    assert code == 1 and "sigmaa" in err


def test_couple_small(capsys):
    code, out, _ = run(["couple", "-N", "8", "--dt", "0.001", "--paths", "2"], capsys)
    assert code == 0
    assert "coupling_bounds" in out


def test_verify_quick(capsys):
    code, out, _ = run(["verify", "--suite", "quick"], capsys)
    assert code == 0
    assert "power_inequality[r=2]" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ultrarate", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "ultrarate" in res.stdout


def test_verify_default_seed_seven(capsys):
    code, out, _ = run(["verify", "--suite", "default", "--seed", "7"], capsys)
    assert code == 0
    assert "monotonicity[porous,eta=1,delta=1]" in out


def test_verify_stated_reports_plaplace_violation(capsys):
    code, _, err = run(["verify", "--suite", "stated", "--scale", "0.01"], capsys)
    assert code == 1
    assert "monotonicity[plaplace,eta=8,delta=8]" in err
