import json
from pathlib import Path

import pytest

from adlab.cli import main
from adlab.errors import ConfigInvalid, SchemaMismatch
from adlab.experiments import (
    compare,
    run_experiment,
    self_check,
    validate_config,
    write_outputs,
)


def small_lz_config(delta=1.0, name="zener"):
    return {
        "schema_version": 1,
        "experiment": "lz-sweep",
        "family": {"name": name, "delta": delta},
        "epsilon_grid": [0.3, 0.25, 0.2, 0.15],
        "time_window": [-15.0, 15.0] if name == "zener" else [-20.0, 20.0],
        "grid_step": 0.01,
        "tolerances": {"propagator": 1e-8},
    }


@pytest.fixture(scope="module")
def lz_result():
    return run_experiment(small_lz_config())


def test_validate_config_rejects_bad_input():
    with pytest.raises(ConfigInvalid):
        validate_config({"experiment": "lz-sweep"})  # no schema_version
    with pytest.raises(ConfigInvalid):
        validate_config({"schema_version": 1, "experiment": "nope"})
    cfg = small_lz_config()
    cfg["epsilon_grid"] = []
    with pytest.raises(ConfigInvalid):
        validate_config(cfg)
    cfg = small_lz_config()
    cfg["family"] = {"name": "zener", "delta": -1.0}
    with pytest.raises(ConfigInvalid):
        validate_config(cfg)


def test_deterministic_outputs(lz_result, tmp_path):
    m1 = write_outputs(lz_result, tmp_path / "a", figures=False)
    res2 = run_experiment(small_lz_config())
    m2 = write_outputs(res2, tmp_path / "b", figures=False)
    for o1, o2 in zip(m1["outputs"], m2["outputs"]):
        assert o1["file"] == o2["file"]
        assert o1["sha256"] == o2["sha256"]
        assert (tmp_path / "a" / o1["file"]).read_bytes() == (
            tmp_path / "b" / o2["file"]
        ).read_bytes()


def test_compare_identical_runs(lz_result, tmp_path):
    write_outputs(lz_result, tmp_path / "a", figures=False)
    write_outputs(lz_result, tmp_path / "b", figures=False)
    report = compare(tmp_path / "a" / "manifest.json", tmp_path / "b" / "manifest.json")
    assert report["identical"]
    assert all(
        v == 0.0
        for tab in report.values()
        if isinstance(tab, dict)
        for v in tab.values()
    )


def test_compare_tightened_run_within_ten_percent(lz_result, tmp_path):
    from adlab.experiments import tighten_config

    tight = run_experiment(tighten_config(small_lz_config()))
    write_outputs(lz_result, tmp_path / "a", figures=False)
    write_outputs(tight, tmp_path / "b", figures=False)
    report = compare(tmp_path / "a" / "manifest.json", tmp_path / "b" / "manifest.json")
    assert report["sweep.csv"]["measured_amplitude"] < 0.10


def test_compare_schema_mismatch(lz_result, tmp_path):
    other = run_experiment(small_lz_config(name="constant_gap"))
    write_outputs(lz_result, tmp_path / "a", figures=False)
    write_outputs(other, tmp_path / "b", figures=False)
    with pytest.raises(SchemaMismatch):
        compare(tmp_path / "a" / "manifest.json", tmp_path / "b" / "manifest.json")


def test_self_check_passes(lz_result):
    report = self_check(lz_result)
    assert report["pass"]
    assert report["sweep.measured_amplitude"] < 0.10


def test_cli_end_to_end(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small_lz_config()))
    out = tmp_path / "run"
    code = main(["lz-sweep", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "lz-sweep"
    assert manifest["gates_pass"]
    for entry in manifest["outputs"]:
        assert (out / entry["file"]).exists()
    assert (out / "amplitudes.png").exists()


def test_cli_compare_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small_lz_config()))
    assert main(["lz-sweep", "--config", str(cfg_path), "--out",
                 str(tmp_path / "a"), "--no-figures"]) == 0
    assert main(["lz-sweep", "--config", str(cfg_path), "--out",
                 str(tmp_path / "b"), "--no-figures"]) == 0
    code = main(["compare", str(tmp_path / "a" / "manifest.json"),
                 str(tmp_path / "b" / "manifest.json")])
    assert code == 0
    assert "identical" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path):
    cfg = small_lz_config()
    cfg["epsilon_grid"] = []
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["lz-sweep", "--config", str(cfg_path), "--out",
                 str(tmp_path / "x")]) == 2
    # config for a different experiment than the subcommand
    cfg_path2 = tmp_path / "mismatch.json"
    cfg_path2.write_text(json.dumps(small_lz_config()))
    assert main(["decay-rate", "--config", str(cfg_path2)]) == 2


def test_cli_numerical_failure_exit_code(tmp_path):
    # amplitudes collapse below the trust floor: the fit cannot proceed
    cfg = small_lz_config()
    cfg["epsilon_grid"] = [0.03, 0.025, 0.02, 0.015]
    cfg_path = tmp_path / "floor.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["lz-sweep", "--config", str(cfg_path), "--out",
                 str(tmp_path / "x"), "--no-figures"])
    assert code == 3


def test_run_manifest_contents(lz_result, tmp_path):
    report = {"pass": True, "sweep.measured_amplitude": 0.0}
    manifest = write_outputs(
        lz_result, tmp_path / "m", figures=False, self_check_report=report,
        timings={"run_seconds": 1.0},
    )
    assert manifest["schema_version"] == 1
    assert manifest["self_convergence"]["pass"]
    assert manifest["code_version"]
    assert all(set(o) == {"file", "sha256", "rows"} for o in manifest["outputs"])


@pytest.mark.parametrize(
    "cfg",
    [
        {
            "schema_version": 1,
            "experiment": "decay-rate",
            "family": {"name": "zener", "delta": 1.0},
            "deltas": [0.5, 1.0],
        },
        {
            "schema_version": 1,
            "experiment": "erf-profile",
            "family": {"name": "constant_gap", "delta": 1.0},
            "epsilon_grid": [0.2],
            "time_window": [-20.0, 20.0],
            "grid_step": 0.01,
        },
        {
            "schema_version": 1,
            "experiment": "superadiabatic-scan",
            "family": {"name": "zener", "delta": 1.0},
            "epsilon_grid": [0.2, 0.1],
            "slope_window": [-6.0, -0.75],
            "scan_window": [-6.0, 6.0],
            "defect_epsilon": 0.05,
            "convexity_range": [3, 7],
        },
        {
            "schema_version": 1,
            "experiment": "bo-transmit",
            "family": {"name": "tanh_model", "delta": 0.25},
            "energy": 0.8,
            "epsilon_grid": [0.5, 0.42, 0.35, 0.3],
        },
        {
            "schema_version": 1,
            "experiment": "bo-packet",
            "family": {"name": "tanh_model", "delta": 0.25},
            "density": {"e0": 0.8, "g": 20.0, "support": [0.6, 1.0]},
            "epsilon_grid": [0.4, 0.35],
            "observation_time": 40.0,
            "n_energy": 16,
            "x_half_width": 20.0,
            "x_step": 0.02,
        },
    ],
    ids=lambda c: c["experiment"],
)
def test_figures_render_for_every_experiment(cfg, tmp_path):
    result = run_experiment(cfg)
    manifest = write_outputs(result, tmp_path, figures=True)
    assert manifest["figures"]
    for name in manifest["figures"]:
        assert (tmp_path / name).stat().st_size > 0
