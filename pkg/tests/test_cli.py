import json
import subprocess
import sys

import numpy as np
import pytest

from ndns.cli import EXIT_OK, EXIT_TRUNCATION, EXIT_VALIDATION, EXIT_VERIFY, main, parse_range
from test_states import NDNS_PRIME_N2_A15


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def csv_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return lines[0], [ln.split(",") for ln in lines[1:]]


def test_coeffs_vacuum(capsys):
    code, out, _ = run(capsys, "coeffs", "--family", "dns", "--n", "0", "--alpha", "0")
    assert code == EXIT_OK
    amps = json.loads(out)["state"]["amplitudes"]
    assert amps[0] == [1.0, 0.0]
    assert all(a == [0.0, 0.0] for a in amps[1:])


def test_coeffs_ndns_prime_reference(capsys):
    code, out, _ = run(capsys, "coeffs", "--family", "ndns-prime", "--n", "2", "--alpha", "1.5",
                       "--f", "rational:k=0.1")
    assert code == EXIT_OK
    amps = np.array([complex(*a) for a in json.loads(out)["state"]["amplitudes"]])
    assert np.max(np.abs(amps[:12] - np.array(NDNS_PRIME_N2_A15))) < 1e-10


def test_coeffs_su2_precondition(capsys):
    code, out, err = run(capsys, "coeffs", "--family", "su2", "--n", "3", "--s", "1", "--gamma", "0.4")
    assert code == EXIT_VALIDATION
    assert "n exceeds 2s" in err
    assert len(err.strip().splitlines()) == 1
    assert out == ""


def test_coeffs_csv_and_complex_alpha(capsys):
    code, out, _ = run(capsys, "coeffs", "--family", "dns", "--n", "1", "--alpha", "-0.5,0.25", "--format", "csv")
    assert code == EXIT_OK
    header, rows = csv_rows(out)
    assert header == "m,re,im"
    assert rows[0][0] == "0"


def test_coeffs_xi_map(capsys):
    _, out, _ = run(capsys, "coeffs", "--family", "gp", "--n", "0", "--lambda", "1", "--xi", "0.5")
    d = json.loads(out)
    assert d["state"]["displacement"][0] == pytest.approx(np.tanh(0.5))


@pytest.mark.parametrize(
    "argv",
    [
        ["coeffs", "--family", "gp", "--n", "0", "--zeta", "0.2"],
        ["coeffs", "--family", "ndns-prime", "--alpha", "1"],
        ["coeffs", "--family", "dns", "--zeta", "0.2"],
        ["coeffs", "--family", "dns", "--alpha", "1", "--gamma", "0.3"],
        ["coeffs", "--family", "dns", "--alpha", "1,2,3"],
        ["coeffs", "--family", "gp", "--lambda", "1", "--zeta", "1.2"],
        ["coeffs", "--family", "dns", "--alpha", "x"],
        ["coeffs", "--family", "dns"],
        ["coeffs", "--family", "unknown", "--alpha", "1"],
        ["mandel", "--family", "dns", "--alpha", "1,1"],
        ["wigner", "--family", "dns", "--alpha", "0"],
        ["coeffs", "--family", "dns", "--alpha", "1", "--jobs", "0"],
    ],
)
def test_validation_exit_code(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_VALIDATION
    assert err.strip()


def test_truncation_exit_code(capsys):
    code, _, err = run(capsys, "coeffs", "--family", "dns", "--alpha", "3", "--max-n", "8")
    assert code == EXIT_TRUNCATION
    assert "truncation" in err


def test_mandel_dns_all_zero(capsys):
    code, out, _ = run(capsys, "mandel", "--family", "dns", "--n", "0", "--f", "identity", "--alpha", "0:3:0.1")
    assert code == EXIT_OK
    header, rows = csv_rows(out)
    assert header == "alpha,q,mean_n,classification"
    assert len(rows) == 31
    assert all(abs(float(r[1])) < 1e-9 for r in rows)


def test_mandel_ndns_prime_negative(capsys):
    _, out, _ = run(capsys, "mandel", "--family", "ndns-prime", "--n", "2", "--f", "rational:k=0.1",
                    "--alpha", "0:5:0.05")
    _, rows = csv_rows(out)
    assert len(rows) == 101
    assert min(float(r[1]) for r in rows) < 0


def test_mandel_gp_negative_near_origin(capsys):
    _, out, _ = run(capsys, "mandel", "--family", "gp", "--n", "1", "--lambda", "1", "--zeta", "0:0.9:0.01")
    _, rows = csv_rows(out)
    assert len(rows) == 91
    assert float(rows[1][1]) < 0
    assert "sweep_parameter: \"zeta\"" in out


def test_mandel_partial_failures_keep_going(capsys):
    code, out, _ = run(capsys, "mandel", "--family", "ndns-double-prime", "--n", "1", "--f", "rational:k=0.1",
                         "--alpha", "0:2:0.5", "--format", "json")
    assert code == EXIT_OK
    pts = json.loads(out)["points"]
    assert [("error" in p) for p in pts] == [False, False, True, True, True]


def test_mandel_all_failed_is_truncation(capsys):
    code, _, _ = run(capsys, "mandel", "--family", "ndns-double-prime", "--n", "1", "--f", "rational:k=0.1",
                     "--alpha", "2:3:0.5")
    assert code == EXIT_TRUNCATION


def test_wigner_vacuum(capsys, tmp_path):
    out = tmp_path / "w.json"
    code, _, _ = run(capsys, "wigner", "--family", "dns", "--n", "0", "--alpha", "0", "--grid", "-3:3:0.05",
                     "--format", "json", "--output", str(out))
    assert code == EXIT_OK
    d = json.loads(out.read_text())
    assert d["summary"]["min_value"] > 0
    assert d["summary"]["integral_estimate"] == pytest.approx(1.0, abs=1e-3)
    assert len(d["re"]) == 121


def test_wigner_ndns_prime_negative(capsys):
    code, out, _ = run(capsys, "wigner", "--family", "ndns-prime", "--n", "1", "--alpha", "1",
                       "--f", "rational:k=0.1", "--grid", "-4:4:0.1")
    assert code == EXIT_OK
    summary = json.loads(out.splitlines()[[i for i, l in enumerate(out.splitlines()) if "summary" in l][0]]
                         .split(": ", 1)[1])
    assert summary["min_value"] < 0


def test_wigner_su2(capsys):
    code, out, _ = run(capsys, "wigner", "--family", "su2", "--n", "1", "--s", "2", "--gamma", "0.3",
                       "--grid", "-4:4:0.1", "--format", "json")
    d = json.loads(out)
    assert d["summary"]["min_value"] < 0
    assert d["summary"]["integral_estimate"] == pytest.approx(1.0, abs=1e-3)


def test_verify_default_passes(capsys, tmp_path):
    out = tmp_path / "v.json"
    code, _, _ = run(capsys, "verify", "--output", str(out))
    assert code == EXIT_OK
    d = json.loads(out.read_text())
    assert d["summary"]["hard_failures"] == 0
    algebraic = [r for r in d["reports"] if r["family"] in ("ndns-prime", "ndns-double-prime")]
    assert algebraic and all(r["max_amplitude_deviation"] < 1e-10 for r in algebraic)


def test_verify_strict_group_records_failures(capsys, tmp_path):
    out = tmp_path / "v.json"
    code, _, err = run(capsys, "verify", "--strict-group", "--output", str(out))
    assert code == EXIT_VERIFY
    assert "group closed form (verbatim)" in err
    corrected = tmp_path / "c.json"
    code, _, _ = run(capsys, "verify", "--strict-group", "--mode", "corrected", "--output", str(corrected))
    # the corrected form matches the GP oracle, but SU(2) still differs under the tanh map
    d = json.loads(corrected.read_text())
    failing = [c["name"] for c in d["checks"] if not c["passed"]]
    assert failing and all(name.startswith("group closed form (corrected) su2") for name in failing)


def test_verify_tiny_truncation(capsys, tmp_path):
    out = tmp_path / "v.json"
    code, _, _ = run(capsys, "verify", "--max-n", "8", "--output", str(out))
    assert code == EXIT_TRUNCATION
    d = json.loads(out.read_text())
    names = [c["name"] for c in d["checks"] if c.get("error", "").startswith("TruncationError")]
    assert any("alpha=2.0" in n for n in names)


def test_parse_range():
    assert parse_range("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_range("0:5:0.05")[-1] == 5.0
    assert len(parse_range("0:0.9:0.01")) == 91


def test_env_cap_respected(monkeypatch, capsys):
    monkeypatch.setenv("NDNS_MAX_TRUNCATION", "16")
    code, _, _ = run(capsys, "coeffs", "--family", "dns", "--alpha", "4")
    assert code == EXIT_TRUNCATION


def test_console_script_and_version():
    res = subprocess.run([sys.executable, "-m", "ndns.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("ndns ")
    res = subprocess.run([sys.executable, "-m", "ndns.cli", "coeffs", "--bogus"], capture_output=True, text=True)
    assert res.returncode == EXIT_VALIDATION
