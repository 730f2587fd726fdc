import csv
import json
import math

import numpy as np
import pytest

from spdiqkd import cli

SMALL = {"optimizer": {"n_starts": 2, "max_evals": 400}}


@pytest.fixture
def small_config(tmp_path):
    def make(extra=None):
        cfg = json.loads(json.dumps(SMALL))
        for key, value in (extra or {}).items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
        path = tmp_path / f"cfg{len(list(tmp_path.iterdir()))}.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    return make


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- exit codes


def test_unknown_subcommand_is_config_error():
    assert cli.main(["no-such-command"]) == cli.EXIT_CONFIG


def test_help_exits_cleanly(capsys):
    assert cli.main(["--help"]) == cli.EXIT_OK


@pytest.mark.parametrize(
    "content",
    [
        {"bogus": 1},
        {"scenario": {"bogus": 1}},
        {"optimizer": {"n_starts": 0}},
        {"scenario": {"eta_D": 2.0}},
        {"state_model": "exact"},
        {"finite": {"epsilons": {"eps_s": -1.0}}},
    ],
)
def test_bad_config_values(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(content))
    assert cli.main(["chsh-scan", "--config", str(path)]) == cli.EXIT_CONFIG


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["threshold", "--config", str(path)]) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert cli.main(["threshold", "--config", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("scan", ["eta_tilde_L:0.8:0.9:1", "T:0.1:0.2:3", "eta_tilde_L:0.9:0.8:3", "garbage"])
def test_bad_scan_flag(scan):
    assert cli.main(["chsh-scan", "--scan", scan]) == cli.EXIT_CONFIG


def test_bad_worker_count(monkeypatch, small_config, tmp_path):
    monkeypatch.setenv(cli.WORKERS_ENV, "zero")
    out = tmp_path / "o.csv"
    code = cli.main(["chsh-scan", "--config", small_config(), "--scan", "eta_tilde_L:0.9:1.0:2", "--out", str(out)])
    assert code == cli.EXIT_CONFIG


def test_infeasible_epsilons_exit_code(small_config):
    cfg = small_config({"finite": {"epsilons": {"eps_s": 1e-6, "eps_s_p": 6e-7, "eps_s_pp": 3e-7}}})
    assert cli.main(["finite-keylen", "--config", cfg, "--n", "1e10"]) == cli.EXIT_INFEASIBLE


def test_unbracketed_threshold_exit_code(small_config, tmp_path):
    cfg = small_config({"threshold": {"lo": 0.93, "hi": 0.95, "tol": 0.01}})
    assert cli.main(["threshold", "--config", cfg, "--out", str(tmp_path / "t.json")]) == cli.EXIT_INFEASIBLE


# ------------------------------------------------------------------ formats


def test_fmt_twelve_significant_digits():
    assert cli.fmt(1 / 3) == "0.333333333333"
    assert cli.fmt(123456789.123456789) == "123456789.123"
    assert cli.fmt(math.inf) == "inf"
    assert cli.fmt(3) == "3"


def test_csv_to_stdout_has_header(capsys):
    text = cli.write_csv([[1 / 3, "x"]], ["a", "b"], None)
    assert text == "a,b\n0.333333333333,x\n"
    assert capsys.readouterr().out == text


def test_write_csv_to_file(tmp_path):
    path = tmp_path / "x.csv"
    cli.write_csv([[0.1, 2.0, "s"]], ["a", "b", "c"], str(path))
    assert path.read_bytes() == b"a,b,c\n0.1,2,s\n"


# ----------------------------------------------------------------- commands


def test_chsh_scan_byte_deterministic(small_config, tmp_path):
    cfg = small_config()
    outs = []
    for i in range(2):
        out = tmp_path / f"scan{i}.csv"
        assert cli.main(["chsh-scan", "--config", cfg, "--scan", "eta_tilde_L:0.9:1.0:3", "--seed", "4", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    rows = read_csv(tmp_path / "scan0.csv")
    header = rows[0]
    assert header[:6] == ["eta_tilde_L", "S", "xi_amp_a1", "xi_phase_a1", "alpha_amp_a1", "alpha_phase_a1"]
    assert len(header) == 2 + 5 * 4
    scores = [float(r[1]) for r in rows[1:]]
    assert scores[-1] >= scores[0]


def test_workers_do_not_change_output(monkeypatch, small_config, tmp_path):
    cfg = small_config()
    args = ["chsh-scan", "--config", cfg, "--scan", "eta_tilde_L:0.95:1.0:2"]
    monkeypatch.setenv(cli.WORKERS_ENV, "1")
    assert cli.main(args + ["--out", str(tmp_path / "one.csv")]) == 0
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    assert cli.main(args + ["--out", str(tmp_path / "two.csv")]) == 0
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()


def test_rate_vs_distance_slopes(small_config, tmp_path):
    out = tmp_path / "rate.csv"
    code = cli.main(
        ["rate-vs-distance", "--config", small_config(), "--scan", "L:0:300:4", "--asymptotic", "--out", str(out)]
    )
    assert code == 0
    rows = read_csv(out)
    assert rows[0] == ["L_km", "n", "R_bits_per_s", "scheme"]
    by_scheme = {}
    for L, n, R, scheme in rows[1:]:
        assert n == "inf"
        by_scheme.setdefault(scheme, []).append((float(L), float(R)))
    for scheme, per_km in (("single_photon", 0.01), ("two_photon_scaling", 0.02)):
        pts = by_scheme[scheme]
        assert all(R > 0 for _, R in pts)
        slopes = np.diff([math.log10(R) for _, R in pts]) / np.diff([L for L, _ in pts])
        assert np.allclose(slopes, -per_km, atol=1e-10)


def test_rate_vs_distance_finite_rows(small_config, tmp_path):
    out = tmp_path / "rate.csv"
    cfg = small_config({"finite": {"n_starts": 2}})
    assert cli.main(["rate-vs-distance", "--config", cfg, "--scan", "L:0:100:2", "--n", "1e6,1e12", "--out", str(out)]) == 0
    rows = read_csv(out)[1:]
    ns = sorted({r[1] for r in rows})
    assert ns == ["1000000", "1e+12"]
    assert all(float(r[2]) == 0.0 for r in rows if r[1] == "1000000")


def test_finite_keylen_report(small_config, tmp_path):
    out = tmp_path / "fk.json"
    cfg = small_config({"finite": {"n_starts": 2}})
    assert cli.main(["finite-keylen", "--config", cfg, "--n", "1e6", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    for key in ("n", "ell", "ell_per_n", "soundness", "completeness_target", "epsilons", "config", "results"):
        assert key in report
    assert report["n"] == 1e6
    assert report["ell"] <= 0
    assert report["results"][0]["R_bits_per_s"] == 0.0
    assert report["results"][0]["l_raw"] == report["ell"]
    assert report["soundness"] == pytest.approx(3e-6, rel=1e-9)
    assert report["completeness_target"] == 0.01
    echoed = report["config"]
    assert set(cli.DEFAULTS) <= set(echoed)
    assert echoed["constants"]["fixed_overhead_bits"] == 264.0
    assert echoed["optimizer"]["n_starts"] == 2


def test_finite_keylen_needs_rounds(small_config):
    assert cli.main(["finite-keylen", "--config", small_config()]) == cli.EXIT_CONFIG


def test_t_scan_rate_degrades_with_T(small_config, tmp_path):
    out = tmp_path / "t.csv"
    cfg = small_config({"t_values": [0.001, 0.05]})
    assert cli.main(["t-scan", "--config", cfg, "--scan", "eta_L:0.93:0.95:2", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["T", "eta_L", "r_inf"]
    rate = {(float(T), round(float(e), 6)): float(r) for T, e, r in rows[1:]}
    assert rate[(0.001, 0.95)] >= rate[(0.05, 0.95)]
    assert rate[(0.001, 0.93)] >= rate[(0.05, 0.93)]


def test_threshold_report(small_config, tmp_path):
    out = tmp_path / "t.json"
    cfg = small_config({"threshold": {"lo": 0.85, "hi": 0.95, "tol": 0.02}})
    assert cli.main(["threshold", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    lo, hi = report["bracket"]
    assert hi - lo <= 0.02
    assert lo <= report["eta_L_threshold"] <= hi
    assert report["settings"].keys() == {"a1", "a2", "b1", "b2", "b3"}
    assert report["config"]["threshold"]["tol"] == 0.02
    history = report["evaluations"]
    assert [e["eta_L"] for e in history[:2]] == [0.85, 0.95]
    lo, hi = 0.85, 0.95
    for e in history[2:]:
        assert e["eta_L"] == pytest.approx(0.5 * (lo + hi), abs=1e-15)
        if e["r_inf"] > 0.0:
            hi = e["eta_L"]
        else:
            lo = e["eta_L"]
    assert [lo, hi] == report["bracket"]
