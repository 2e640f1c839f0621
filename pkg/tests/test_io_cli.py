import json

import numpy as np
import pytest

from platoon_bench import cli
from platoon_bench.config import (ScenarioError, load_scenario, parse_scenario,
                                  scenario_from_dict, scenario_to_dict)
from platoon_bench.results import read_timeseries, summarize_csv
from platoon_bench.sim import run_trial

SMALL = """\
schema_version = 1
name = "small"
controller = "dmpc-qp"
tail = 1.0

[profile]
levels = [0.0, 2.0]
dwell = 1.0
accel = 1.0
lead_in = 0.5

[platoon]
n_followers = 2
d_des = 1.0
v_min = 0.0
v_max = 4.0
a_max = 2.0

[noise]
dynamics_std = 0.02
sensing_std = 0.01
seed = 5

[dmpc]
H = 12
"""

UNSTABLE = SMALL + """
[dmpc.overrides.1]
F = [[0.5, 0.0], [0.0, 0.5]]
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


# scenario files

@pytest.mark.parametrize("name, n, steps", [("hw4", 3, 630), ("sim100", 100, 550)])
def test_bundled_scenarios(name, n, steps):
    sc = load_scenario(name)
    assert sc.platoon.n_followers == n and sc.n_steps == steps
    assert sc.dmpc.H == 100 and sc.dt == pytest.approx(0.1)
    assert sc.stability_report().satisfied


def test_unknown_key_is_rejected_with_path():
    with pytest.raises(ScenarioError, match=r"platoon: unknown key.*d_desired"):
        parse_scenario(SMALL.replace("d_des = 1.0", "d_desired = 1.0"))


def test_parse_error_reports_line():
    with pytest.raises(ScenarioError, match="line"):
        parse_scenario(SMALL.replace("tail = 1.0", "tail = = 1.0"))


def test_duration_and_tail_are_exclusive():
    with pytest.raises(ScenarioError, match="duration"):
        parse_scenario(SMALL.replace("tail = 1.0", "tail = 1.0\nduration = 9.0"))


def test_wrong_type_names_field():
    with pytest.raises(ScenarioError, match=r"dmpc\.H"):
        parse_scenario(SMALL.replace("H = 12", 'H = "twelve"'))


def test_overrides_apply_to_one_vehicle():
    sc = parse_scenario(UNSTABLE)
    cfg1, cfg2 = sc.dmpc_config(1), sc.dmpc_config(2)
    np.testing.assert_array_equal(cfg1.F, 0.5 * np.eye(2))
    np.testing.assert_array_equal(cfg2.F, np.eye(2))
    assert not sc.stability_report().satisfied


def test_scenario_echo_round_trips():
    sc = parse_scenario(UNSTABLE)
    again = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))))
    assert scenario_to_dict(again) == scenario_to_dict(sc)
    a, b = run_trial(sc, 1), run_trial(again, 1)
    np.testing.assert_array_equal(a.p, b.p)


# run / outputs

def test_run_writes_outputs_and_round_trips(small, tmp_path):
    out = tmp_path / "out"
    assert run_cli("run", "--scenario", small, "--trials", 3, "--out-dir", out, "--quiet") == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete" and manifest["trials"] == 3
    summary = json.loads((out / "summary.json").read_text())
    header = (out / "trial_000.csv").read_text().splitlines()[0]
    assert header == "t,i,p,v,u,gap_measured,solver_status"
    ts = read_timeseries(out / "trial_000.csv")
    assert ts.p.shape == (parse_scenario(SMALL).n_steps, 3)
    again = summarize_csv([out / f"trial_{k:03d}.csv" for k in range(3)], 1.0,
                          scenario="small", controller="dmpc-qp", seeds=summary["seeds"])
    for key in ("spacing_rmse", "velocity_rmse"):
        for stat in ("mean", "std", "half_width"):
            np.testing.assert_allclose(again[key][stat], summary[key][stat], rtol=0, atol=1e-12)
    assert again["solver"]["fallbacks"] == summary["solver"]["fallbacks"]


def test_reruns_are_byte_identical(small, tmp_path):
    for d in ("a", "b"):
        assert run_cli("run", "--scenario", small, "--trials", 2, "--out-dir",
                       tmp_path / d, "--quiet") == 0
    for name in ("trial_000.csv", "trial_001.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_rerun_from_manifest(small, tmp_path):
    run_cli("run", "--scenario", small, "--seed", 77, "--out-dir", tmp_path / "a", "--quiet")
    assert run_cli("run", "--manifest", tmp_path / "a" / "manifest.json",
                   "--out-dir", tmp_path / "b", "--quiet") == 0
    assert ((tmp_path / "a" / "trial_000.csv").read_bytes()
            == (tmp_path / "b" / "trial_000.csv").read_bytes())


def test_default_out_dir_from_environment(small, tmp_path, monkeypatch):
    monkeypatch.setenv("PLATOON_BENCH_OUT", str(tmp_path / "env_out"))
    assert run_cli("run", "--scenario", small, "--controller", "lfbk", "--quiet") == 0
    assert (tmp_path / "env_out" / "summary.json").is_file()


@pytest.mark.parametrize("args", [
    ("--controller", "pid"),
    ("--trials", "0"),
    ("--n", "0"),
    ("--bogus",),
])
def test_config_errors_exit_1_without_output(small, tmp_path, args):
    out = tmp_path / "out"
    assert run_cli("run", "--scenario", small, "--out-dir", out, *args) == 1
    assert not out.exists()


def test_missing_scenario_exits_1(tmp_path):
    assert run_cli("run", "--scenario", tmp_path / "nope.toml", "--out-dir", tmp_path) == 1


def test_unstable_weights_need_opt_in(tmp_path):
    path = tmp_path / "u.toml"
    path.write_text(UNSTABLE)
    assert run_cli("run", "--scenario", path, "--out-dir", tmp_path / "x", "--quiet") == 1
    assert run_cli("run", "--scenario", path, "--out-dir", tmp_path / "y", "--quiet",
                   "--allow-unstable") == 0


# validate

def test_validate_identity_weights(capsys):
    assert run_cli("validate", "--scenario", "hw4") == 0
    out = capsys.readouterr().out
    assert "all conditions satisfied" in out
    assert "squared" in out.lower()


def test_validate_reports_violating_pairs(tmp_path, capsys):
    path = tmp_path / "u.toml"
    path.write_text(UNSTABLE)
    assert run_cli("validate", "--scenario", path) != 0
    out = capsys.readouterr().out
    assert "violated pairs: (1, 2)" in out


def test_validate_one_norm(capsys):
    assert run_cli("validate", "--scenario", "hw4", "--controller", "dmpc-lp") == 0
    assert "s_i >= q_(i+1)" in capsys.readouterr().out


# sweep and plots

def test_sweep_cells(small, tmp_path):
    out = tmp_path / "sw"
    assert run_cli("sweep", "--scenario", small, "--controllers", "lfbk,dmpc-qp",
                   "--n", 2, 5, "--out-dir", out, "--quiet") == 0
    rows = json.loads((out / "sweep.json").read_text())["rows"]
    assert sorted((r["controller"], r["n_followers"]) for r in rows) == [
        ("dmpc-qp", 2), ("dmpc-qp", 5), ("lfbk", 2), ("lfbk", 5)]
    assert all(r["status"] == "complete" for r in rows)
    assert "scaling_trend" in json.loads((out / "lfbk_n5" / "summary.json").read_text())

    for kind, name in (("scaling", "scaling_n5.svg"), ("rmse-bars", "rmse_bars_n2.svg"),
                       ("trajectories", "trajectories_n2.svg")):
        assert run_cli("plot", "--results-dir", out, "--kind", kind,
                       "--out-dir", tmp_path / "p1") == 0
        assert run_cli("plot", "--results-dir", out, "--kind", kind,
                       "--out-dir", tmp_path / "p2") == 0
        a, b = (tmp_path / "p1" / name).read_bytes(), (tmp_path / "p2" / name).read_bytes()
        assert a.startswith(b"<?xml") and a == b


def test_sweep_empty_size_list_exits_1(small, tmp_path):
    assert run_cli("sweep", "--scenario", small, "--n", "--out-dir", tmp_path / "s") == 1
    assert not (tmp_path / "s").exists()


def test_plot_without_results_exits_1(tmp_path):
    assert run_cli("plot", "--results-dir", tmp_path, "--kind", "scaling") == 1
