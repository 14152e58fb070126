import json
import math
import subprocess

import numpy as np
import pytest

from subgqmc.cli import main
from subgqmc.experiments import (
    ESTIMATORS,
    MODES,
    BestOfBothResult,
    ExperimentConfig,
    ScalingRow,
    SummaryRow,
    build_point_set,
    diverse_fourier_function,
    error_envelope,
    filled_structure_ok,
    fit_slope,
    prepare_out_dir,
    read_scaling_rows,
    run_best_of_both,
    run_diagnose,
    run_generate,
    run_integrate,
    run_scaling,
    run_verify,
    summarize_rows,
    thread_budget,
    two_scale_function,
    validate_mode_requirements,
    write_scaling_rows,
)
from subgqmc.dyadic import DecompositionMatrix, build_filled_decomposition_matrix
from subgqmc.variation import FourierFunction, sigma, sigma_half


def small_config(**overrides) -> ExperimentConfig:
    base = dict(mode="scaling", function=FourierFunction.sine(3),
                n_list=(16, 32), trials=4, seed=1)
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError, match="unknown mode"):
        ExperimentConfig(mode="warp")
    with pytest.raises(ValueError, match="powers of two"):
        small_config(n_list=(12,))
    with pytest.raises(ValueError, match="n_list"):
        small_config(n_list=())
    with pytest.raises(ValueError, match="trials"):
        small_config(trials=0)
    with pytest.raises(ValueError, match="unknown estimator"):
        small_config(estimators=("mc", "bogus"))
    with pytest.raises(ValueError, match="duplicate"):
        small_config(estimators=("mc", "mc"))
    with pytest.raises(ValueError, match="one-dimensional"):
        small_config(estimators=("vdc_1d",), d=2,
                     function=FourierFunction.sine(3, d=2))
    with pytest.raises(ValueError, match="m\\^d"):
        small_config(estimators=("grid",), d=2, n_list=(32,),
                     function=FourierFunction.sine(3, d=2))
    with pytest.raises(ValueError, match="pairing"):
        small_config(pairing="sorted")
    with pytest.raises(ValueError, match="dimension"):
        small_config(d=2)
    with pytest.raises(ValueError, match="h must be"):
        small_config(h=0)


def test_config_dict_round_trip():
    cfg = small_config(estimators=("mc", "grid"), output_path="out", h=12)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"mode": "verify", "n_lst": [16]})


def test_config_function_path(tmp_path):
    (tmp_path / "fn.json").write_text(FourierFunction.sine(2).to_json())
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(
        {"mode": "integrate", "function_path": "fn.json", "n_list": [16]}))
    cfg = ExperimentConfig.from_json_file(cfg_file)
    assert cfg.function == FourierFunction.sine(2)


def test_config_rejects_both_function_forms(tmp_path):
    obj = {"mode": "integrate",
           "function": FourierFunction.sine(2).to_dict(),
           "function_path": "fn.json"}
    with pytest.raises(ValueError, match="not both"):
        ExperimentConfig.from_dict(obj, base_dir=tmp_path)


def test_mode_requirements():
    validate_mode_requirements(small_config())
    with pytest.raises(ValueError, match="needs a function"):
        validate_mode_requirements(ExperimentConfig(mode="scaling"))
    with pytest.raises(ValueError, match="needs an output path"):
        validate_mode_requirements(ExperimentConfig(mode="generate"))
    with pytest.raises(ValueError, match="needs an output path"):
        validate_mode_requirements(ExperimentConfig(mode="diagnose"))


def test_thread_budget_env(monkeypatch):
    monkeypatch.delenv("SUBGQMC_THREADS", raising=False)
    assert thread_budget() == 1
    monkeypatch.setenv("SUBGQMC_THREADS", "4")
    assert thread_budget() == 4
    monkeypatch.setenv("SUBGQMC_THREADS", "zero")
    with pytest.raises(ValueError, match="integer"):
        thread_budget()
    monkeypatch.setenv("SUBGQMC_THREADS", "0")
    with pytest.raises(ValueError, match=">= 1"):
        thread_budget()


# ---------------------------------------------------------------------------
# point sets
# ---------------------------------------------------------------------------

def test_mc_points_keyed_by_trial():
    cfg = ExperimentConfig(mode="verify", seed=5)
    a = build_point_set("mc", 8, cfg, trial=3)
    b = build_point_set("mc", 8, cfg, trial=3)
    c = build_point_set("mc", 8, cfg, trial=4)
    assert a.shape == (8, 1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all((a >= 0) & (a < 1))


def test_grid_points():
    cfg1 = ExperimentConfig(mode="verify", d=1)
    pts = build_point_set("grid", 8, cfg1, trial=0)
    assert np.array_equal(pts[:, 0], (np.arange(8) + 0.5) / 8)
    cfg2 = ExperimentConfig(mode="verify", d=2)
    lattice = build_point_set("grid", 16, cfg2, trial=0)
    assert lattice.shape == (16, 2)
    assert set(np.round(lattice[:, 0], 6)) == {0.125, 0.375, 0.625, 0.875}


def test_vdc_points_bit_reverse():
    cfg = ExperimentConfig(mode="verify")
    pts = build_point_set("vdc_1d", 8, cfg, trial=0)
    assert np.array_equal(
        pts[:, 0], [0.0, 0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875])
    with pytest.raises(ValueError, match="one-dimensional"):
        build_point_set("vdc_1d", 8, ExperimentConfig(mode="verify", d=2), trial=0)


def test_transference_points_shape():
    cfg = ExperimentConfig(mode="verify", d=2, seed=9)
    pts = build_point_set("transference", 16, cfg, trial=0)
    assert pts.shape == (16, 2)
    assert np.all((pts >= 0) & (pts < 1))
    again = build_point_set("transference", 16, cfg, trial=0)
    assert np.array_equal(pts, again)


# ---------------------------------------------------------------------------
# scaling runs
# ---------------------------------------------------------------------------

def test_scaling_rows_deterministic():
    cfg = small_config()
    a, b = run_scaling(cfg), run_scaling(cfg)
    assert a.rows == b.rows
    assert a.summaries == b.summaries


def test_scaling_thread_count_does_not_change_rows(monkeypatch):
    cfg = small_config(trials=6)
    monkeypatch.delenv("SUBGQMC_THREADS", raising=False)
    serial = run_scaling(cfg)
    monkeypatch.setenv("SUBGQMC_THREADS", "3")
    threaded = run_scaling(cfg)
    assert serial.rows == threaded.rows


def test_summary_recompute_is_float_exact():
    result = run_scaling(small_config(trials=7))
    assert summarize_rows(result.rows) == result.summaries


def test_rows_csv_round_trip_bit_exact(tmp_path):
    result = run_scaling(small_config(trials=5))
    path = tmp_path / "rows.csv"
    write_scaling_rows(result.rows, path)
    back = read_scaling_rows(path)
    assert back == result.rows
    assert summarize_rows(back) == result.summaries


def test_read_rows_rejects_foreign_csv(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="not a scaling rows file"):
        read_scaling_rows(path)


def test_scaling_result_write_and_collision(tmp_path):
    result = run_scaling(small_config())
    out = tmp_path / "run"
    result.write(out)
    assert (out / "scaling_rows.csv").exists()
    summary = json.loads((out / "scaling_summary.json").read_text())
    assert summary["config"]["seed"] == 1
    assert len(summary["summaries"]) == 4
    with pytest.raises(FileExistsError, match="not empty"):
        result.write(out)
    result.write(out, force=True)


def test_constant_function_has_no_slope():
    cfg = small_config(function=FourierFunction(1, {(0,): 2.5}),
                       estimators=("grid",), n_list=(16, 32, 64), trials=2)
    result = run_scaling(cfg)
    assert all(s.rmse == 0.0 for s in result.summaries)
    fit = result.slopes["grid"]
    assert math.isnan(fit.slope) and fit.n_used == ()


def test_mc_slope_near_half_power():
    # frozen seed; at 50 trials the OLS slope wobbles well inside this band
    cfg = ExperimentConfig(mode="scaling", function=FourierFunction.sine(3),
                           n_list=(16, 32, 64, 128, 256), trials=50, seed=1,
                           estimators=("mc",))
    fit = run_scaling(cfg).slopes["mc"]
    assert -0.8 <= fit.slope <= -0.25
    assert fit.n_used == (32, 64, 128, 256)
    assert fit.ci_low < fit.slope < fit.ci_high


def test_slope_fit_exact_power_law():
    rows = [SummaryRow("x", n, 10, 2.0 * n ** -1.0, 0.0, 0.0)
            for n in (16, 32, 64, 128)]
    fit = fit_slope("x", rows)
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.slope_all_n == pytest.approx(-1.0, abs=1e-12)
    assert fit.n_used == (32, 64, 128)


def test_slope_fit_drops_smallest_n():
    rows = [SummaryRow("x", 16, 10, 10.0, 0.0, 0.0)] + [
        SummaryRow("x", n, 10, n ** -1.0, 0.0, 0.0) for n in (32, 64, 128)]
    fit = fit_slope("x", rows)
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert 16 not in fit.n_used
    assert fit.slope_all_n < fit.slope - 1  # the off-trend point drags the full fit


def test_slope_fit_too_few_points():
    fit = fit_slope("x", [SummaryRow("x", 64, 10, 0.1, 0.0, 0.0)])
    assert math.isnan(fit.slope) and math.isnan(fit.stderr)


# ---------------------------------------------------------------------------
# two-band integrand and envelope
# ---------------------------------------------------------------------------

def test_two_scale_function_values():
    f = two_scale_function(4)
    x = np.array([0.1, 0.37, 0.92])
    expected = np.sin(2 * np.pi * x) + 0.5 * np.sin(8 * np.pi * x)
    assert f.evaluate(x) == pytest.approx(expected, abs=1e-12)
    assert f.is_real()
    with pytest.raises(ValueError):
        two_scale_function(0)


def test_two_scale_collapses_at_k_one():
    f = two_scale_function(1)
    assert set(f.terms) == {(1,), (-1,)}
    assert f.evaluate(np.array([0.25]))[0] == pytest.approx(2.0, abs=1e-12)


def test_envelope_single_pair_prefers_squared_rate():
    f = two_scale_function(1)
    value, split = error_envelope(f, 8)
    assert value == sigma_half(f) ** 2 / 64
    assert split == frozenset()


def test_envelope_routes_high_frequency_to_variance_part():
    f = two_scale_function(256)
    value, split = error_envelope(f, 64)
    assert split == frozenset({(256,)})
    high = FourierFunction(1, {k: c for k, c in f.terms.items() if abs(k[0]) == 256})
    low = FourierFunction.sine(1)
    assert value == sigma(high) ** 2 / 64 + sigma_half(low) ** 2 / 64 ** 2


def test_envelope_pair_limit():
    terms = {}
    for k in range(1, 18):
        terms[(k,)] = -0.5j
        terms[(-k,)] = 0.5j
    with pytest.raises(ValueError, match="exponential"):
        error_envelope(FourierFunction(1, terms), 16)


def test_best_of_both_small_run():
    cfg = ExperimentConfig(mode="scaling", n_list=(32, 64), trials=30, seed=0)
    result = run_best_of_both(cfg)
    assert isinstance(result, BestOfBothResult)
    assert len(result.rows) == 2 * 2 * 30
    assert set(result.envelopes) == {32, 64}
    # k = n makes the two branch costs exactly equal, so the best split is
    # the pure squared-rate branch and the envelope is sigma_half^2 / n^2
    f64 = two_scale_function(64)
    assert result.envelopes[64] == sigma_half(f64) ** 2 / 64 ** 2
    # frozen seed: measured ratios 0.15-0.30 across seeds at these sizes
    assert result.rmse("transference", 64) < 0.5 * result.rmse("mc", 64)


def test_best_of_both_rejects_high_dimensions():
    with pytest.raises(ValueError, match="one-dimensional"):
        run_best_of_both(ExperimentConfig(mode="scaling", d=2, trials=2,
                                          function=FourierFunction.sine(1, d=2)))


# ---------------------------------------------------------------------------
# integrate mode
# ---------------------------------------------------------------------------

def test_integrate_reports_consistent_errors():
    cfg = ExperimentConfig(mode="integrate", function=FourierFunction.sine(3),
                           n_list=(16, 64),
                           estimators=("mc", "grid", "vdc_1d", "transference"))
    results = run_integrate(cfg)
    assert [r["estimator"] for r in results] == list(cfg.estimators)
    for r in results:
        assert r["n"] == 64
        assert r["estimate"] - r["exact"] == r["error"]
    by_name = {r["estimator"]: r for r in results}
    assert abs(by_name["grid"]["error"]) < 1e-14
    assert abs(by_name["vdc_1d"]["error"]) < 1e-14


# ---------------------------------------------------------------------------
# verify mode
# ---------------------------------------------------------------------------

def test_filled_structure_audit_and_fault_injection():
    mat = build_filled_decomposition_matrix(5)
    assert filled_structure_ok(mat)
    bad_len = mat.run_len.copy()
    bad_len[7] += 1
    assert not filled_structure_ok(
        DecompositionMatrix(mat.h, mat.run_start.copy(), bad_len, True))
    bad_start = mat.run_start.copy()
    bad_start[3] = bad_start[4]
    assert not filled_structure_ok(
        DecompositionMatrix(mat.h, bad_start, mat.run_len.copy(), True))
    assert not filled_structure_ok(
        DecompositionMatrix(mat.h, mat.run_start[:-1], mat.run_len[:-1], True))


def test_verify_passes_and_writes_report(tmp_path):
    cfg = ExperimentConfig(mode="verify", seed=0, output_path=str(tmp_path / "v"))
    report = run_verify(cfg)
    assert report.passed
    assert len(report.checks) == 10
    names = [c.name for c in report.checks]
    assert len(set(names)) == 10
    assert "fault_injection" in names
    loaded = json.loads((tmp_path / "v" / "verify_report.json").read_text())
    assert loaded["passed"] is True
    assert loaded["seed"] == 0
    assert len(loaded["checks"]) == 10


def test_verify_seed_budget():
    # exact checks must hold on every seed; the three statistical checks
    # may miss occasionally, with at least 4 of 5 full passes required
    full_passes = 0
    for seed in range(5):
        report = run_verify(ExperimentConfig(mode="verify", seed=seed))
        for check in report.checks:
            if not check.statistical:
                assert check.passed, f"exact check {check.name} failed at seed {seed}"
        full_passes += report.passed
    assert full_passes >= 4


# ---------------------------------------------------------------------------
# diagnose mode
# ---------------------------------------------------------------------------

def test_diagnose_artifacts(tmp_path):
    out = tmp_path / "diag"
    cfg = ExperimentConfig(mode="diagnose", n_list=(16,), trials=110, seed=2,
                           output_path=str(out))
    summary = run_diagnose(cfg)
    disc_lines = (out / "disc_records.csv").read_text().splitlines()
    assert disc_lines[0] == "region_id,level_t,disc_value"
    assert len(disc_lines) > 1
    mgf_lines = (out / "mgf_profile.csv").read_text().splitlines()
    assert mgf_lines[0] == "direction_id,scale,mgf_estimate"
    stored = json.loads((out / "diagnose_summary.json").read_text())
    assert stored == summary
    assert 0.0 <= summary["subgaussian_constant"] <= summary["reference_bound"]
    assert summary["trials"] == 110


def test_diagnose_deterministic_and_guarded(tmp_path):
    cfg = ExperimentConfig(mode="diagnose", n_list=(16,), trials=100, seed=4,
                           output_path=str(tmp_path / "a"))
    run_diagnose(cfg)
    run_diagnose(ExperimentConfig(mode="diagnose", n_list=(16,), trials=100,
                                  seed=4, output_path=str(tmp_path / "b")))
    for name in ("disc_records.csv", "mgf_profile.csv", "diagnose_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with pytest.raises(FileExistsError, match="not empty"):
        run_diagnose(cfg)
    with pytest.raises(ValueError, match="at least 100 trials"):
        run_diagnose(ExperimentConfig(mode="diagnose", n_list=(16,), trials=50,
                                      output_path=str(tmp_path / "c")))


# ---------------------------------------------------------------------------
# generate mode
# ---------------------------------------------------------------------------

def test_generate_exports_leaves(tmp_path):
    out = tmp_path / "tree"
    cfg = ExperimentConfig(mode="generate", n_list=(16,), seed=3,
                           output_path=str(out))
    summary = run_generate(cfg)
    leaf_files = sorted((out / "level_4").glob("set_*.csv"))
    assert len(leaf_files) == 16
    rows = leaf_files[0].read_text().splitlines()
    assert len(rows) == 16
    assert summary["leaf_count"] == 16
    assert summary["points_total"] == 256
    assert summary["per_point_cost"] > 0
    assert summary["wall_seconds"] > 0
    stored = json.loads((out / "generate_summary.json").read_text())
    assert "wall_seconds" not in stored  # timings would break byte-identity
    assert stored == {k: v for k, v in summary.items() if k != "wall_seconds"}


def test_generate_byte_identical_and_collision(tmp_path):
    cfg_a = ExperimentConfig(mode="generate", n_list=(16,), d=2, seed=6,
                             output_path=str(tmp_path / "a"))
    cfg_b = ExperimentConfig(mode="generate", n_list=(16,), d=2, seed=6,
                             output_path=str(tmp_path / "b"))
    run_generate(cfg_a)
    run_generate(cfg_b)
    files_a = sorted(p.relative_to(tmp_path / "a")
                     for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b")
                     for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    with pytest.raises(FileExistsError):
        run_generate(cfg_a)
    run_generate(ExperimentConfig(mode="generate", n_list=(16,), d=2, seed=6,
                                  output_path=str(tmp_path / "a"), force=True))


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def test_prepare_out_dir(tmp_path):
    made = prepare_out_dir(tmp_path / "fresh" / "nested")
    assert made.is_dir()
    (made / "x.txt").write_text("x")
    with pytest.raises(FileExistsError, match="use --force"):
        prepare_out_dir(made)
    assert prepare_out_dir(made, force=True) == made


def test_diverse_function_spans_weight_classes():
    for key in range(10):
        f = diverse_fourier_function(key)
        weights = {int(np.prod([max(1, abs(v)) for v in k]))
                   for k in f.terms if any(k)}
        assert len(weights) >= 2


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def write_config(tmp_path, name="cfg.json", **obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_cli_scaling_runs(tmp_path, capsys):
    cfg = write_config(tmp_path,
                       function=FourierFunction.sine(3).to_dict(),
                       n_list=[16, 32], trials=3)
    out = tmp_path / "run"
    assert main(["scaling", "--config", cfg, "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "slope" in printed and "rmse" in printed
    assert (out / "scaling_rows.csv").exists()
    assert (out / "scaling_summary.json").exists()


def test_cli_seed_override(tmp_path, capsys):
    cfg = write_config(tmp_path, n_list=[16], seed=3)
    out = tmp_path / "gen"
    assert main(["generate", "--config", cfg, "--out", str(out),
                 "--seed", "7"]) == 0
    capsys.readouterr()
    assert json.loads((out / "generate_summary.json").read_text())["seed"] == 7


def test_cli_verify_passes(tmp_path, capsys):
    cfg = write_config(tmp_path, seed=0)
    assert main(["verify", "--config", cfg]) == 0
    printed = capsys.readouterr().out
    assert printed.count("PASS") == 10
    assert "verification passed" in printed


def test_cli_config_errors_exit_two(tmp_path, capsys):
    assert main(["verify", "--config", str(tmp_path / "missing.json")]) == 2
    bad = write_config(tmp_path, "bad.json", unknown_key=1)
    assert main(["verify", "--config", bad]) == 2
    clash = write_config(tmp_path, "clash.json", mode="verify")
    assert main(["scaling", "--config", clash]) == 2
    nofn = write_config(tmp_path, "nofn.json", n_list=[16])
    assert main(["scaling", "--config", nofn]) == 2
    err = capsys.readouterr().err
    assert err.count("config error") == 4


def test_cli_collision_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, n_list=[16])
    out = tmp_path / "gen"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 1
    assert "not empty" in capsys.readouterr().err
    assert main(["generate", "--config", cfg, "--out", str(out), "--force"]) == 0


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogusmode", "--config", "x.json"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "SUBGQMC_THREADS" in capsys.readouterr().out


def test_cli_bad_thread_env_exits_two(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path, seed=0)
    monkeypatch.setenv("SUBGQMC_THREADS", "many")
    assert main(["verify", "--config", cfg]) == 2
    assert "SUBGQMC_THREADS" in capsys.readouterr().err


def test_console_script_help():
    proc = subprocess.run(["subgqmc", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for mode in MODES:
        assert mode in proc.stdout


def test_console_script_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"nope\": 1}")
    proc = subprocess.run(["subgqmc", "verify", "--config", str(bad)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "config error" in proc.stderr
