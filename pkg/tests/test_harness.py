import json
import math

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from deception_qcd.change_stats import DetectionRecord
from deception_qcd.harness import io
from deception_qcd.harness.cli import build_parser, main
from deception_qcd.harness.config import ConfigError, ExperimentConfig, default_config, load_config
from deception_qcd.harness.experiments import child_seeds, monte_carlo, simulate, sweep

SMALL = {
    "run": {"n_realizations": 4, "horizon": 30, "nu": 10},
    "detection": {"calibration_runs": 20},
}


def small_config(**over):
    d = default_config().to_dict()
    for sec, vals in {**SMALL, **over}.items():
        d[sec].update(vals)
    return ExperimentConfig.from_dict(d)


@pytest.fixture
def cfg_file(tmp_path):
    def make(**over):
        path = tmp_path / "cfg.yaml"
        path.write_text(small_config(**over).to_yaml())
        return str(path)

    return make


# -- configuration -------------------------------------------------------------


def test_default_config_matches_case_study():
    c = default_config()
    assert c.model.initial_state == pytest.approx([-2.0, 0.0, -math.pi / 4])
    assert c.sensing.noise_var == [0.1, 0.06]
    assert (c.sensing.outlier_free_prob, c.sensing.indicator_value) == (0.98, 0.08)
    assert (c.model.dt, c.model.prior_d, c.detection.pfa_budget, c.run.nu) == (0.01, 0.05, 1e-3, 10)


def test_default_yaml_round_trip(capsys):
    assert main(["--print-default-config"]) == 0
    text = capsys.readouterr().out
    assert ExperimentConfig.from_dict(yaml.safe_load(text)).to_dict() == default_config().to_dict()


@pytest.mark.parametrize("data", [
    {"model": {"colour": 1}},
    {"extras": {}},
    {"sensing": {"observe": "velocity"}},
    {"sensing": {"outlier_free_prob": 1.5}},
    {"run": {"horizon": 0}},
    {"detection": {"cusum_threshold": "sometimes"}},
    {"detection": {"pfa_budget": 0.0}},
    {"filter": {"window": 0}},
    {"model": {"initial_state": [0.0, 0.0]}},
    [1, 2],
])
def test_invalid_config(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_threshold_string_coerced():
    c = ExperimentConfig.from_dict({"detection": {"cusum_threshold": "4e4"}})
    assert c.detection.cusum_threshold == 40000.0
    assert ExperimentConfig.from_dict({"detection": {"cusum_threshold": "calibrate"}}).build()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_hash_tracks_content():
    a, b = default_config(), default_config()
    assert a.hash() == b.hash()
    assert a.replace(run={"seed": 1}).hash() != a.hash()


# -- file round trips ------------------------------------------------------------


floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(st.lists(st.tuples(st.integers(-10**6, 10**6), floats, st.none() | floats,
                          st.sampled_from(["p", "T", "logL"])), max_size=20))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    io.write_csv(path, ["a", "b", "c", "d"], rows)
    header, back = io.read_csv(path)
    assert header == ["a", "b", "c", "d"]
    assert [tuple(r) for r in back] == [tuple(r) for r in rows]


def test_trajectory_observation_round_trip(tmp_path):
    sc = small_config().build()
    real = simulate(sc, child_seeds(0, 0, 1)[0], 10)
    io.write_trajectory(tmp_path / "t.csv", real.states, 0.01)
    steps, t, X = io.read_trajectory(tmp_path / "t.csv")
    assert np.array_equal(X, real.states) and steps[-1] == 30
    io.write_observations(tmp_path / "o.csv", real.observations, real.indicators, 0.01)
    steps, t, Y, out = io.read_observations(tmp_path / "o.csv")
    assert np.array_equal(Y, real.observations) and steps[0] == 1
    assert np.array_equal(out, real.indicators != 1.0)


def fake_record(n=5, nu=3):
    rng = np.random.default_rng(n)
    return DetectionRecord(rng.normal(size=n), rng.random(n), rng.normal(size=n), np.arange(n),
                           np.arange(n), np.zeros(n), dt=0.01, nu=nu, tau_s=4, tau_c=None)


def test_stats_tidy_bands_round_trip(tmp_path):
    recs = [fake_record(), fake_record()]
    io.write_stats(tmp_path / "s.csv", recs[0])
    s = io.read_stats(tmp_path / "s.csv")
    assert np.array_equal(s["logL"], recs[0].log_L) and np.array_equal(s["n_chains"], recs[0].n_chains)
    io.write_tidy(tmp_path / "tidy.csv", recs)
    tidy = io.read_tidy(tmp_path / "tidy.csv")
    assert len(tidy) == 2 * 3 * 5
    assert tidy[0] == [0, 1, "p", recs[0].p[0]]
    io.write_bands(tmp_path / "b.csv", recs)
    _, rows = io.read_csv(tmp_path / "b.csv")
    assert rows[0][3] <= rows[0][4] <= rows[0][5]
    io.write_stopping_times(tmp_path / "st.csv", recs)
    assert io.read_stopping_times(tmp_path / "st.csv") == [[0, 3, 4, None], [1, 3, 4, None]]


def test_json_and_manifest(tmp_path):
    f = io.write_json(tmp_path / "m.json", {"x": np.float64(math.nan), "y": np.arange(3), "z": 1.5})
    assert io.read_json(f) == {"x": None, "y": [0, 1, 2], "z": 1.5}
    m = io.write_manifest(tmp_path / "manifest.json", command="c", config_hash="h", seed=3,
                          version="v", backend="python", files=[f])
    data = io.read_json(m)
    assert data["schema_version"] == "1.0"
    assert data["files"]["m.json"] == io.file_digest(f)


# -- orchestration ---------------------------------------------------------------


def test_nu_beyond_horizon_is_change_free():
    sc = small_config().build()
    real = simulate(sc, child_seeds(0, 0, 1)[0], 500)
    assert real.nu is None


def test_workers_do_not_change_results():
    cfg = small_config(run={"n_realizations": 3})
    a = monte_carlo(cfg, workers=1)
    b = monte_carlo(cfg, workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.log_L, y.log_L) and np.array_equal(x.T, y.T)


def test_sweep_a_monotone():
    cfg = small_config(run={"n_realizations": 6, "horizon": 60})
    rows = sweep(cfg, "a", [1e-2, 1e-3, 1e-4])
    adds = [r["add"] for r in rows]
    assert all(x <= y for x, y in zip(adds, adds[1:]))
    with pytest.raises(ValueError):
        sweep(cfg, "a", [])
    with pytest.raises(ValueError):
        sweep(cfg, "zeta", [1.0])


def test_sweep_theta_advantage_only_with_outliers():
    cfg = small_config(run={"n_realizations": 10, "horizon": 100})
    clean, dirty = sweep(cfg, "theta", [1.0, 0.98])
    assert clean["robust_rmse"] == pytest.approx(clean["nonrobust_rmse"], rel=1e-9)
    assert clean["robust_wins"] == 0.0
    assert dirty["robust_rmse"] < dirty["nonrobust_rmse"]


# -- command line ----------------------------------------------------------------


def test_simulate_is_deterministic(tmp_path, cfg_file):
    cfg = cfg_file()
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("trajectory.csv", "observations.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 7 and man["schema_version"] == "1.0"


def test_detect_writes_artifacts(tmp_path, cfg_file):
    out = tmp_path / "d"
    assert main(["detect", "--rule", "shiryaev", "--config", cfg_file(), "--out", str(out)]) == 0
    for f in ("trajectory.csv", "observations.csv", "stats.csv", "figure_tidy.csv", "bands.csv",
              "stopping_times.csv", "metrics.json", "manifest.json", "config.yaml"):
        assert (out / f).exists(), f
    metrics = io.read_json(out / "metrics.json")
    assert metrics["schema_version"] == "1.0" and metrics["n_runs"] == 4
    man = io.read_json(out / "manifest.json")
    for name, digest in man["files"].items():
        assert io.file_digest(out / name) == digest
    # the saved config reproduces the run
    again = tmp_path / "again"
    assert main(["detect", "--config", str(out / "config.yaml"), "--out", str(again)]) == 0
    assert (out / "stats.csv").read_bytes() == (again / "stats.csv").read_bytes()


def test_detect_cusum_calibrated(tmp_path, cfg_file):
    out = tmp_path / "c"
    cfg = cfg_file(detection={"cusum_threshold": "calibrate", "calibration_runs": 20})
    assert main(["detect", "--rule", "cusum", "--config", cfg, "--out", str(out)]) == 0
    cal = io.read_json(out / "metrics.json")["cusum_calibration"]
    assert cal["runs"] == 20 and cal["empirical_pfa"] <= 0.01 + 1e-12


def test_sweep_cli(tmp_path, cfg_file):
    out = tmp_path / "s"
    assert main(["sweep", "--param", "c", "--grid", "2", "5", "--config", cfg_file(), "--out", str(out)]) == 0
    header, rows = io.read_csv(out / "sweep_c.csv")
    assert header[0] == "c" and [r[0] for r in rows] == [2.0, 5.0]


def test_exit_codes(tmp_path, cfg_file, capsys):
    assert main([]) == 1
    assert main(["detect", "--rule", "glr"]) == 1
    assert main(["sweep", "--param", "a", "--grid", "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  colour: red\n")
    assert main(["simulate", "--config", str(bad)]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", cfg_file(), "--out", str(blocker / "sub")]) == 2
    assert main(["--help"]) == 0


def test_oracle_check_hidden(tmp_path, capsys):
    help_text = build_parser().format_help()
    assert "oracle-check" not in help_text
    assert main(["oracle-check", "--out", str(tmp_path)]) == 0
    assert io.read_json(tmp_path / "oracle.json")["passed"] is True


def test_detect_cusum_literal_threshold_reports_censoring(tmp_path, cfg_file):
    out = tmp_path / "lit"
    assert main(["detect", "--rule", "cusum", "--config", cfg_file(), "--out", str(out)]) == 0
    m = io.read_json(out / "metrics.json")
    assert m["threshold"] == 4e4 and m["n_censored"] == m["n_runs"] and m["add"] is None
