import json
import math

import numpy as np
import pytest

from batchaltmin import cli
from batchaltmin.errors import ConfigError
from batchaltmin.experiments import (
    default_config,
    exp_expectation_check,
    exp_hcurve,
    exp_recovery,
    exp_step_map,
    expectation_sample,
    parse_config_text,
    unit_pair,
)
from batchaltmin.hfunction import HALF_PI
from batchaltmin.measurement import RngStream


def test_parse_config_text():
    vals = parse_config_text("""
        # comment
        n = 16
        thetas = 0.3, 0.8, pi/2
        etas = 0, pi/3
        cov_lead = 4   # trailing comment
        timing = true
        out = some/dir
    """)
    assert vals["n"] == 16
    assert vals["thetas"] == (0.3, 0.8, HALF_PI)
    assert vals["etas"] == (0.0, math.pi / 3)
    assert vals["cov_lead"] == 4.0 and vals["timing"] is True
    assert vals["out"] == "some/dir"


@pytest.mark.parametrize("text", ["bogus = 1", "n = 1.5", "n", "timing = maybe"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_default_configs():
    sm = default_config("step-map")
    assert (sm.n, sm.m, sm.trials, len(sm.thetas)) == (64, 4096, 1000, 16)
    assert sm.thetas[-1] == pytest.approx(HALF_PI)
    hc = default_config("h-curve")
    assert (hc.samples, hc.table_points) == (10**6, 64)
    with pytest.raises(ConfigError):
        default_config("nope")


@pytest.mark.parametrize("kw,field", [
    (dict(m=100), "m"),
    (dict(trials=0), "trials"),
    (dict(thetas=(2.0,)), "thetas"),
])
def test_config_errors_name_field(kw, field):
    with pytest.raises(ConfigError, match=field):
        default_config("step-map", **kw)


def test_unit_pair_orthonormal():
    z, w = unit_pair(6, RngStream(1))
    assert abs(np.linalg.norm(z) - 1) < 1e-14 and abs(np.linalg.norm(w) - 1) < 1e-14
    assert abs(np.vdot(z, w)) < 1e-14


def _small_step_map(**kw):
    base = dict(n=8, m=64, trials=20, samples=20_000, table_points=32,
                thetas=(0.5, 1.0, HALF_PI))
    base.update(kw)
    return default_config("step-map", **base)


def test_step_map_single_trial_quantiles_coincide():
    res = exp_step_map(_small_step_map(trials=1))
    for row in res.rows:
        assert row.q10 == row.q50 == row.q90


def test_step_map_fixed_point_and_ordering():
    res = exp_step_map(_small_step_map())
    last = res.rows[-1]
    assert last.predicted == HALF_PI
    assert abs(last.q10 - HALF_PI) <= 1e-9 and abs(last.q90 - HALF_PI) <= 1e-9
    for row in res.rows:
        assert 0 <= row.q10 <= row.q50 <= row.q90 <= HALF_PI


def test_step_map_outputs_and_determinism(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    exp_step_map(_small_step_map(out=str(a)))
    exp_step_map(_small_step_map(out=str(b)))
    assert (a / "step_map.csv").read_bytes() == (b / "step_map.csv").read_bytes()
    header = (a / "step_map.csv").read_text().splitlines()[0]
    assert header == "theta_in,q10,q50,q90,predicted,trials"
    man = json.loads((a / "manifest.json").read_text())
    for key in ("experiment", "config", "master_seed", "started_at", "elapsed_seconds", "pass"):
        assert key in man
    assert (a / "plot_step_map.py").exists()


def test_step_map_threads_match_serial():
    a = exp_step_map(_small_step_map())
    b = exp_step_map(_small_step_map(workers=3))
    assert a.rows == b.rows


def test_hcurve_small(tmp_path):
    cfg = default_config("h-curve", samples=20_000, table_points=32, out=str(tmp_path))
    res = exp_hcurve(cfg)
    table = res.rows[0]
    assert abs(table.h[-1] - 1.0) <= 4 * table.h_se[-1]
    summary = json.loads((tmp_path / "h_curve_summary.json").read_text())
    assert summary["pass"] == res.passed
    assert "growth" in summary
    assert (tmp_path / "h_table.csv").read_text().startswith(
        "theta,h,h_se,h_prime,h_prime_se,samples\n")


def test_hcurve_rejects_tiny_sample_count():
    with pytest.raises(ConfigError, match="samples"):
        default_config("h-curve", samples=100)


def test_expectation_at_truth():
    # theta = pi/2 means x = e^{i eta} z: E g = h(pi/2) x = x
    cx, sx, cd, sd, orth, orth_se = expectation_sample(HALF_PI, 0.0, 4, 10**6, RngStream(3))
    assert abs(cx - 1.0) <= 4 * sx
    assert abs(cd) <= 4 * sd
    assert orth <= 4 * orth_se


def test_expectation_orthogonal_start():
    cx, sx, cd, sd, orth, orth_se = expectation_sample(0.0, 0.0, 4, 10**6, RngStream(4))
    assert abs(cx - math.pi / 4) <= 4 * sx
    assert abs(cd) <= 4 * sd


def test_expectation_independent_of_eta():
    cfg = default_config("expectation", thetas=(0.8,), etas=(0.0, math.pi / 3, math.pi),
                         samples=300_000)
    res = exp_expectation_check(cfg)
    assert res.passed
    cx = [r.coef_x for r in res.rows]
    se = max(r.coef_x_se for r in res.rows)
    assert max(cx) - min(cx) <= 5 * math.sqrt(2) * se


def test_expectation_csv(tmp_path):
    cfg = default_config("expectation", thetas=(0.5,), etas=(0.0,), samples=20_000,
                         out=str(tmp_path))
    exp_expectation_check(cfg)
    lines = (tmp_path / "expectation.csv").read_text().splitlines()
    assert lines[0] == ("theta,eta,coef_x,coef_d,expected_coef_x,expected_coef_d,"
                        "orth_residual,samples")
    assert len(lines) == 2


def test_recovery_square_system_fails():
    cfg = default_config("recovery", ns=(32,), ratios=(1,), Bs=(1,), trials=20)
    res = exp_recovery(cfg)
    assert res.rows[0].success_rate <= 0.1


def test_recovery_rejects_blocks_below_n():
    with pytest.raises(ConfigError, match="Bs"):
        default_config("recovery", ns=(32,), ratios=(2,), Bs=(4,))


def test_recovery_csv_deterministic(tmp_path):
    kw = dict(ns=(8,), ratios=(32,), Bs=(1, 2), trials=5)
    exp_recovery(default_config("recovery", out=str(tmp_path / "a"), **kw))
    exp_recovery(default_config("recovery", out=str(tmp_path / "b"), **kw))
    a = (tmp_path / "a" / "recovery.csv").read_bytes()
    assert a == (tmp_path / "b" / "recovery.csv").read_bytes()
    assert a.decode().splitlines()[0] == "n,m,B,trials,success_rate,median_iters,median_seconds"
    assert len(a.decode().splitlines()) == 3


def test_recovery_timing_opt_in():
    res = exp_recovery(default_config("recovery", ns=(8,), ratios=(32,), Bs=(2,), trials=3,
                                      timing=True))
    assert res.rows[0].median_seconds > 0
    res = exp_recovery(default_config("recovery", ns=(8,), ratios=(32,), Bs=(2,), trials=3))
    assert math.isnan(res.rows[0].median_seconds)


def test_recovery_covariance_mode():
    cfg = default_config("recovery", ns=(8,), ratios=(64,), Bs=(2,), trials=10, cov_lead=4.0)
    assert exp_recovery(cfg).rows[0].success_rate >= 0.9


def test_cli_hcurve_twice_identical(tmp_path):
    args = ["h-curve", "--seed", "7", "--samples", "20000", "--table-points", "32"]
    assert cli.main(args + ["--out", str(tmp_path / "r1")]) in (0, 1)
    assert cli.main(args + ["--out", str(tmp_path / "r2")]) in (0, 1)
    for name in ("h_table.csv", "h_curve_summary.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_cli_config_file_and_set(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("n = 8\nm = 64\ntrials = 3\nsamples = 10000\nthetas = 0.5, 1.0\n")
    out = tmp_path / "o"
    code = cli.main(["step-map", "--config", str(conf), "--set", "table_points=16",
                     "--out", str(out)])
    assert code in (0, 1)
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["n"] == 8 and man["config"]["table_points"] == 16


def test_cli_bad_flag(capsys):
    assert cli.main(["step-map", "--no-such-flag"]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_unknown_subcommand(capsys):
    assert cli.main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["step-map", "--m", "10", "--out", str(tmp_path)]) == 2
    assert "m" in capsys.readouterr().err
    assert cli.main(["step-map", "--config", str(tmp_path / "missing.conf")]) == 2


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["recovery", "--ns", "8", "--ratios", "16", "--Bs", "1", "--trials", "1",
                     "--out", str(blocker / "sub")]) == 2


def test_cli_acceptance_failure_exit_code(tmp_path):
    # demand an impossible success rate -> the run completes but fails its check
    code = cli.main(["recovery", "--ns", "8", "--ratios", "1", "--Bs", "1", "--trials", "3",
                     "--min-success", "1.0", "--out", str(tmp_path)])
    assert code == 1
    assert json.loads((tmp_path / "manifest.json").read_text())["pass"] is False
