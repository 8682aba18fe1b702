import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rieszmf.experiments.cli import main
from rieszmf.experiments.config import ConfigError, RegimeSpec
from rieszmf.experiments.regime import GateError, validate_regime
from rieszmf.experiments.runner import run_experiment

TINY = RegimeSpec(N_list=(20, 40, 80, 160), R=3, T_end=0.05, clt_N_list=(40,), clt_R=4,
                  clt_times=(0.0, 0.05), lln_every=2)


def test_config_roundtrip():
    spec = TINY.replace(kappa=-1.0, alpha_list=(0.2, 0.3))
    again = RegimeSpec.parse(spec.canonical())
    assert again == spec and again.hash() == spec.hash()


@given(st.floats(0.01, 0.06), st.floats(0.05, 2.0), st.integers(1, 1000))
def test_config_roundtrip_property(beta, sigma, R):
    spec = RegimeSpec(beta=beta, sigma=sigma, R=R)
    assert RegimeSpec.parse(spec.canonical()) == spec


@pytest.mark.parametrize("text", ["nope = 1", "R = x", "R = 1\nR = 2", "just words", "kappa = 0.5",
                                  "R = 0", "interaction = maybe"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        RegimeSpec.parse(text)


def test_comments_and_lists():
    s = RegimeSpec.parse("# header\nN_list = 10, 20 , 40,80  # trailing\n\ninteraction = false\n")
    assert s.N_list == (10, 20, 40, 80) and s.interaction is False


def test_gate_examples():
    ok = validate_regime(RegimeSpec())
    assert ok.passed() and ok.derived["p_star"] == pytest.approx(1.2)
    assert ok.derived["u0_lp_star"] < ok.derived["C_p_star"]
    mid = validate_regime(RegimeSpec(beta=0.065))
    assert mid.gates["thm_prob"]["pass"] and not mid.gates["thm_L2"]["pass"]
    bad = validate_regime(RegimeSpec(beta=0.08))
    assert not bad.gates["thm_prob"]["pass"]
    assert not validate_regime(RegimeSpec(alpha_list=(0.45,))).gates["alpha"]["pass"]
    assert not validate_regime(RegimeSpec(lam=1.2)).gates["sub_coulomb"]["pass"]


def test_gate_blocks_run(tmp_path):
    with pytest.raises(GateError):
        run_experiment("rate", TINY.replace(beta=0.065), tmp_path)
    with pytest.raises(GateError):
        run_experiment("pde-run", TINY.replace(lam=1.5), tmp_path, force=True)


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("beta = 0.065\n")
    assert main(["validate-regime", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("bogus = 3\n")
    assert main(["pde-run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert main(["pde-run", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2
    # dt far beyond the transport CFL limit
    cfg.write_text("dt = 5.0\nT_end = 10.0\n")
    assert main(["pde-run", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert main(["validate-regime", "--out", str(tmp_path)]) == 0
    assert "PASS" in capsys.readouterr().out


def test_forced_run_is_labelled(tmp_path):
    d, s = run_experiment("couple-run", TINY.replace(beta=0.08, R=1), tmp_path, force=True)
    assert s["outside_theory"] and "outside theorem regime" in (d / "summary.txt").read_text()


def _rows(d):
    with open(d / "samples.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_couple_without_interaction_is_exact(tmp_path):
    d, s = run_experiment("couple-run", TINY.replace(interaction=False), tmp_path)
    vals = [float(r["value"]) for r in _rows(d) if r["statistic"].startswith("coupling")]
    assert vals and max(vals) == 0.0
    assert all(p == 0.0 for p in s["P_coupling_exceed_alpha0.3"])


def test_rate_run_artifacts_and_rerun(tmp_path):
    d1, s1 = run_experiment("rate", TINY, tmp_path / "a")
    d2, _ = run_experiment("rate", TINY, tmp_path / "b")
    assert (d1 / "samples.csv").read_bytes() == (d2 / "samples.csv").read_bytes()
    raw = (d1 / "samples.csv").read_bytes()
    assert raw.startswith(b"run_id,realization,t,statistic,value\r\n")
    man = json.loads((d1 / "manifest.json").read_text())
    assert man["config_hash"] == TINY.hash() and len(man["kernel_table_hashes"]) == 4
    assert set(man["output_hashes"]) >= {"samples.csv", "summary.json"}
    rate = s1["rate"]
    assert np.isfinite(rate["slope"]) and rate["ci_lo"] <= rate["slope"] <= rate["ci_hi"]
    stats = {r["statistic"] for r in _rows(d1)}
    assert {"l2_err_sq", "h1_err_sq", "rate_statistic", "lln_dev_B", "coupling_sup"} <= stats
    # reusing the content-addressed directory does not recompute
    d3, s3 = run_experiment("rate", TINY, tmp_path / "a")
    assert d3 == d1 and s3["rate"] == json.loads(json.dumps(s1["rate"]))


def test_clt_and_dual_smoke(tmp_path):
    d, s = run_experiment("clt", TINY, tmp_path)
    assert len(s["reports"]) == 8
    rows = _rows(d)
    assert len(rows) == 4 * 4 * 2
    d2, s2 = run_experiment("dual-run", TINY.replace(M=32), tmp_path)
    for key, v in s2.items():
        if "@" in key:
            assert v["variance"] > 0 and v["two_box_rel"] < 1e-2


def test_cli_set_override(tmp_path, capsys):
    assert main(["kernel-build", "--out", str(tmp_path), "--set", "N_list=10,20,40,80"]) == 0
    out = capsys.readouterr().out
    assert "N=80" in out and "artifacts:" in out
