import io
import json
import subprocess
import sys

import pytest

from mpqkd.cli import EXIT_ESTIMATION, EXIT_INVALID, EXIT_OK, fmt, main

CONFIG = """
[protocol]
mu = 0.5
nu = 0.1
s_0 = 0.4
s_nu = 0.2
s_mu = 0.4
N = 200000
seed = 3
[sweep]
distances = 0:200:100
l_values = 1, inf
schemes = mp, mdi
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return str(path)


def run(argv, capsys, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_pair_golden(capsys, monkeypatch):
    code, out, _ = run(["pair", "--l", "2"], capsys, "101101", monkeypatch)
    assert code == EXIT_OK and out == "1,3\n4,6\n"
    code, out, _ = run(["pair", "--l", "2"], capsys, "1001\n", monkeypatch)
    assert code == EXIT_OK and out == ""
    code, out, _ = run(["pair"], capsys, "1001", monkeypatch)
    assert out == "1,4\n"


def test_pair_rejects_garbage(capsys, monkeypatch):
    code, _, err = run(["pair", "--l", "2"], capsys, "10x1", monkeypatch)
    assert code == EXIT_INVALID and "x" in err


def test_sweep_csv(config, tmp_path, capsys):
    out_path = tmp_path / "rates.csv"
    code, _, _ = run(["sweep", "--config", config, "--out", str(out_path)], capsys)
    assert code == EXIT_OK
    lines = out_path.read_text().splitlines()
    assert lines[0] == "# schema_version: 1"
    assert lines[1] == "scheme,l,distance_km,loss_db,mu,p,r_p,r_s,q11,e11x,ez,rate"
    assert len(lines) == 2 + 2 * 3 + 3 + 3
    assert lines[-1].startswith("plob,nan,200,40,")


def test_sweep_identical_across_threads(config, capsys, monkeypatch):
    _, one, _ = run(["sweep", "--config", config, "--threads", "1"], capsys)
    monkeypatch.setenv("MPQKD_THREADS", "4")
    _, four, _ = run(["sweep", "--config", config, "--threads", "4"], capsys)
    assert one == four


def test_simulate_then_decoy(config, tmp_path, capsys):
    tally = tmp_path / "t.csv"
    code, _, _ = run(["simulate", "--config", config, "--distance", "20", "--out", str(tally)], capsys)
    assert code == EXIT_OK
    text = tally.read_text()
    assert text.startswith("# schema_version: 1\n# rounds: 200000\nbasis,mu_a,mu_b,M,E\n")
    code, out, _ = run(["decoy", "--config", config, "--tally", str(tally), "--mode", "asymptotic"], capsys)
    assert code in (EXIT_OK, EXIT_ESTIMATION)
    if code == EXIT_OK:
        doc = json.loads(out)
        assert doc["schema_version"] == 1
        for key in ("M11_lower", "E11_upper", "q11_lower", "e11_ph_upper"):
            assert key in doc


def test_decoy_json_keys_on_expected_tally(tmp_path, capsys):
    from mpqkd.channel import ChannelParams
    from mpqkd.montecarlo import ProtocolParams, expected_tally
    proto = ProtocolParams(mu=0.5, nu=0.1, s_0=0.4, s_nu=0.2, s_mu=0.4, N=10**10)
    path = tmp_path / "t.csv"
    with open(path, "w") as fh:
        expected_tally(proto, ChannelParams(total_distance_km=50)).write_csv(fh)
    cfg = tmp_path / "c.ini"
    cfg.write_text("[protocol]\nmu = 0.5\nnu = 0.1\ns_0 = 0.4\ns_nu = 0.2\ns_mu = 0.4\n")
    code, out, _ = run(["decoy", "--config", str(cfg), "--tally", str(path), "--mode", "asymptotic"], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert {"M11_lower", "E11_upper", "q11_lower", "e11_ph_upper"} <= set(doc)
    assert doc["M11_lower"] > 0


def test_decoy_bad_tally(tmp_path, capsys):
    path = tmp_path / "t.csv"
    path.write_text("basis,mu_a,mu_b,M,E\nZ,0,0.7,3,1\n")
    code, _, err = run(["decoy", "--tally", str(path)], capsys)
    assert code == EXIT_INVALID and "0.7" in err


def test_decoy_infeasible_exit_code(tmp_path, capsys):
    # counts that no photon-number distribution can produce
    path = tmp_path / "t.csv"
    rows = ["basis,mu_a,mu_b,M,E"]
    for a in ("0", "0.1", "0.5"):
        for b in ("0", "0.1", "0.5"):
            m = 10**9 if (a, b) == ("0", "0") else 0
            rows.append(f"Z,{a},{b},{m},0")
    path.write_text("\n".join(rows) + "\n")
    code, _, err = run(["decoy", "--tally", str(path), "--nu", "0.1", "--mu", "0.5"], capsys)
    assert code == EXIT_ESTIMATION and "infeasible" in err


def test_optimize_json(capsys):
    code, out, _ = run(["optimize", "--scheme", "mp", "--distance", "400", "--l", "1000"], capsys)
    doc = json.loads(out)
    assert code == EXIT_OK and doc["mu"] == pytest.approx(0.9226, abs=2e-3)


def test_verify_fock_json(capsys):
    code, out, _ = run(["verify-fock", "--mu", "0.25", "--D", "8", "--n-trunc", "40"], capsys)
    doc = json.loads(out)
    assert code == EXIT_OK and doc["max_deviation"] < 1e-9


def test_verify_fock_truncation_exit(capsys):
    code, _, err = run(["verify-fock", "--mu", "5", "--D", "4", "--n-trunc", "8", "--single-only"], capsys)
    assert code == EXIT_INVALID and "cut-off" in err


def test_phase_drift_csv(tmp_path, capsys):
    cfg = tmp_path / "d.ini"
    cfg.write_text("[phasedrift]\nduration = 2e-4\nl_max = 2000\nbins = 4\n")
    code, out, _ = run(["phase-drift", "--config", str(cfg), "--seed", "1"], capsys)
    lines = out.splitlines()
    assert code == EXIT_OK
    assert lines[:2] == ["# schema_version: 1", "l_bin_lo,l_bin_hi,pairs,errors,rate"]
    assert len(lines) == 6


def test_config_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[channel]\nfoo = 1\n")
    code, _, err = run(["sweep", "--config", str(bad)], capsys)
    assert code == EXIT_INVALID and "foo" in err
    code, _, _ = run(["sweep", "--bogus-flag"], capsys)
    assert code == EXIT_INVALID


def test_float_format():
    assert fmt(0.1 + 0.2) == "0.3"
    assert fmt(float("inf")) == "inf" and fmt(float("nan")) == "nan"
    assert fmt(3) == "3"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mpqkd", "pair", "--l", "2"], input="101101",
                         capture_output=True, text=True, timeout=60)
    assert res.returncode == 0 and res.stdout == "1,3\n4,6\n"
