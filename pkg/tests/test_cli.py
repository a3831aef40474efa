import csv
import json

import numpy as np
import pytest

from innovtree.cli import OUT_ENV, main, read_trajectory


def run(*args):
    return main([str(a) for a in args])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write(path, text):
    path.write_text(text)
    return path


LOGISTIC = """
name = "{name}"
horizon = 4.0
[regime]
K = 200
[[traits]]
id = "x0"
b = 3.0
[initial]
x0 = {n0}
[grid]
count = 41
"""


def test_validate_ladder_passes_with_recovery_note(scenarios_dir, capsys):
    assert run("validate", scenarios_dir / "fig1_tss.toml") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["status"] == "pass_with_warnings"
    assert {c["name"] for c in report["assumptions"]["checks"] if not c["passed"]} == {"B3"}
    assert report["scaling"]["passed"]


def test_validate_malformed_file(tmp_path, caplog):
    path = write(tmp_path / "bad.toml", "name = \n")
    assert run("validate", path) == 2
    assert "line 1, column" in caplog.text


def test_validate_missing_file(tmp_path):
    assert run("validate", tmp_path / "absent.toml") == 2


def test_validate_epsilon_one_warns(tmp_path, capsys, caplog):
    text = LOGISTIC.format(name="eps1", n0=1.0).replace("[initial]", "[migration]\nneighbor = 0.5\n[initial]")
    text = text.replace('b = 3.0', 'b = 3.0\n[[traits]]\nid = "x1"\nb = 6.0')
    assert run("validate", write(tmp_path / "eps1.toml", text)) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["status"] == "pass_with_warnings"
    assert "K*epsilon << K" in caplog.text


def test_validate_hard_failure(tmp_path, capsys):
    text = LOGISTIC.format(name="dying", n0=1.0).replace("b = 3.0", "b = 1.0\nd = 2.0")
    assert run("validate", write(tmp_path / "dying.toml", text)) == 1
    assert json.loads(capsys.readouterr().out)["status"] == "fail"


def test_validate_margin_flag(scenarios_dir, capsys):
    run("validate", scenarios_dir / "fig2_left.toml", "--margin", 0.3)
    report = json.loads(capsys.readouterr().out)
    assert report["scaling"]["inputs"]["rho"] == 0.3
    assert report["scaling"]["passed"]


def test_simulate_fig2_left_reaches_alternating_equilibrium(scenarios_dir, tmp_path):
    assert run("simulate", scenarios_dir / "fig2_left.toml", "--out", tmp_path) == 0
    table = rows(tmp_path / "fig2_left_trajectory.csv")
    assert table[0] == ["time", "x0", "x1", "x2"]
    assert len(table) == 202
    last = np.array([float(v) for v in table[-1][1:]])
    assert np.abs(last - [3.0, 0.0, 8.0]).sum() <= 1.0
    summary = json.loads((tmp_path / "fig2_left_summary.json").read_text())
    assert summary["outputs"] == ["fig2_left_trajectory.csv"]
    assert summary["events"]["MIGRATION"] > 0
    assert any("replicates" in w for w in summary["warnings"])
    assert len(summary["digest"]) == 64


def test_simulate_event_log(tmp_path):
    path = write(tmp_path / "s.toml", LOGISTIC.format(name="s", n0=0.05))
    assert run("simulate", path, "--out", tmp_path, "--events", "--horizon", 0.5, "--grid", 3) == 0
    events = rows(tmp_path / "s_events.csv")
    assert events[0] == ["time", "kind", "from", "to"]
    kinds = {r[1] for r in events[1:]}
    assert kinds <= {"clonal_birth", "competition_death"}
    times = [float(r[0]) for r in events[1:]]
    assert times == sorted(times) and times[-1] <= 0.5
    summary = json.loads((tmp_path / "s_summary.json").read_text())
    assert sum(summary["events"].values()) == len(events) - 1


def test_simulate_json_format_and_explicit_grid(tmp_path):
    path = write(tmp_path / "s.toml", LOGISTIC.format(name="s", n0=1.0))
    assert run("simulate", path, "--out", tmp_path, "--format", "json", "--grid", "0,1,2.5") == 0
    obj = json.loads((tmp_path / "s_trajectory.json").read_text())
    assert obj["time"] == [0.0, 1.0, 2.5]
    assert obj["traits"]["x0"][0] == 1.0


def test_bad_grid_flag(tmp_path):
    path = write(tmp_path / "s.toml", LOGISTIC.format(name="s", n0=1.0))
    assert run("simulate", path, "--out", tmp_path, "--grid", "many") == 2
    assert run("simulate", path, "--out", tmp_path, "--grid", "0,9") == 2


def test_ensemble_columns(tmp_path):
    path = write(tmp_path / "e.toml", LOGISTIC.format(name="e", n0=1.0))
    assert run("ensemble", path, "--out", tmp_path, "--replicates", 200, "--horizon", 1.0, "--grid", 5) == 0
    table = rows(tmp_path / "e_ensemble.csv")
    assert table[0] == ["time", "x0_mean", "x0_var", "x0_p05", "x0_p95"]
    assert len(table) == 6
    first = [float(v) for v in table[1]]
    assert first == [0.0, 1.0, 0.0, 1.0, 1.0]
    summary = json.loads((tmp_path / "e_summary.json").read_text())
    assert summary["inputs"]["replicates"] == 200


def test_same_seed_same_bytes(tmp_path):
    path = write(tmp_path / "s.toml", LOGISTIC.format(name="s", n0=0.5))
    run("simulate", path, "--out", tmp_path / "a", "--seed", 5)
    run("simulate", path, "--out", tmp_path / "b", "--seed", 5)
    run("simulate", path, "--out", tmp_path / "c", "--seed", 6)
    a = (tmp_path / "a" / "s_trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "s_trajectory.csv").read_bytes()
    assert a != (tmp_path / "c" / "s_trajectory.csv").read_bytes()


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    path = write(tmp_path / "s.toml", LOGISTIC.format(name="s", n0=0.5))
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert run("ode", path) == 0
    assert (tmp_path / "env" / "s_ode.csv").exists()
    assert run("ode", path, "--out", tmp_path / "flag") == 0
    assert (tmp_path / "flag" / "s_ode.csv").exists()


def test_ode_matches_logistic_closed_form(tmp_path):
    path = write(tmp_path / "l.toml", LOGISTIC.format(name="l", n0=0.2))
    assert run("ode", path, "--out", tmp_path) == 0
    traj = read_trajectory(tmp_path / "l_ode.csv")
    t = traj.sample_times
    exact = 3.0 / (1 + (3.0 / 0.2 - 1) * np.exp(-3.0 * t))
    assert np.max(np.abs(traj.states[:, 0] - exact)) <= 1e-6


def test_ode_zero_initial_gives_zero_file(tmp_path):
    text = LOGISTIC.format(name="z", n0=0.0)
    assert run("ode", write(tmp_path / "z.toml", text), "--out", tmp_path) == 0
    table = rows(tmp_path / "z_ode.csv")
    assert all(float(r[1]) == 0.0 for r in table[1:])


def test_ode_lv2_terminal(scenarios_dir, tmp_path):
    assert run("ode", scenarios_dir / "lv2.toml", "--out", tmp_path) == 0
    last = [float(v) for v in rows(tmp_path / "lv2_ode.csv")[-1]]
    assert last[0] == 30.0
    assert abs(last[1]) < 1e-4 and abs(last[2] - 6.0) < 1e-4


def test_tss_output(scenarios_dir, tmp_path):
    assert run("tss", scenarios_dir / "fig1_tss.toml", "--out", tmp_path, "--horizon", 1e9) == 0
    table = rows(tmp_path / "fig1_tss_tss.csv")
    assert table[0] == ["time", "trait_id", "mass"]
    assert [r[1] for r in table[1:]] == ["x0", "x1", "x2", "x3"]
    assert [float(r[2]) for r in table[1:]] == [3.0, 6.0, 8.0, 10.0]
    assert run("tss", scenarios_dir / "fig1_tss.toml", "--out", tmp_path, "--format", "json") == 0
    assert "records" in json.loads((tmp_path / "fig1_tss_tss.json").read_text())


def test_tst_reproduces_ladder_sequence(scenarios_dir, tmp_path):
    assert run("tst", scenarios_dir / "fig3.toml", "--out", tmp_path, "--horizon", 1e9) == 0
    obj = json.loads((tmp_path / "fig3_tst.json").read_text())
    assert obj["end_reason"] == "exhausted"
    assert [r["masses"] for r in obj["records"]] == [
        [3.0],
        [0.0, 6.0],
        [3.0, 0.0, 8.0],
        [0.0, 6.0, 0.0, 10.0],
        [3.0, 0.0, 8.0, 0.0, 12.0],
    ]
    assert run("tst", scenarios_dir / "fig3.toml", "--out", tmp_path, "--format", "csv") == 0
    assert rows(tmp_path / "fig3_tst.csv")[0] == ["time", "generation", "trait_id", "present", "mass"]


def test_tst_frozen_without_mutation(scenarios_dir, tmp_path):
    assert run("tst", scenarios_dir / "fig2_left.toml", "--out", tmp_path) == 0
    obj = json.loads((tmp_path / "fig2_left_tst.json").read_text())
    assert obj["end_reason"] == "frozen"
    assert len(obj["records"]) == 1
    summary = json.loads((tmp_path / "fig2_left_summary.json").read_text())
    assert any("frozen" in w for w in summary["warnings"])


def test_compare_self_is_zero(tmp_path, capsys):
    path = write(tmp_path / "l.toml", LOGISTIC.format(name="l", n0=0.2))
    run("ode", path, "--out", tmp_path)
    capsys.readouterr()
    csv_path = tmp_path / "l_ode.csv"
    assert run("compare", csv_path, csv_path) == 0
    assert json.loads(capsys.readouterr().out)["sup_gap"] == 0.0


def test_compare_ensemble_against_ode(tmp_path, capsys):
    path = write(tmp_path / "l.toml", LOGISTIC.format(name="l", n0=1.0))
    run("ode", path, "--out", tmp_path)
    run("ensemble", path, "--out", tmp_path, "--replicates", 50)
    capsys.readouterr()
    assert run("compare", tmp_path / "l_ensemble.csv", tmp_path / "l_ode.csv", "--out", tmp_path) == 0
    result = json.loads(capsys.readouterr().out)
    assert 0 < result["sup_gap"] < 0.2
    assert (tmp_path / "l_ensemble_vs_l_ode.json").exists()


def test_compare_fig2_against_alternating_target(scenarios_dir, tmp_path, capsys):
    run("simulate", scenarios_dir / "fig2_left.toml", "--out", tmp_path)
    capsys.readouterr()
    code = run(
        "compare",
        tmp_path / "fig2_left_trajectory.csv",
        scenarios_dir / "fig2_left_gamma.json",
        "--scenario",
        scenarios_dir / "fig2_left.toml",
    )
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    target = result["targets"][0]
    assert target["configuration"] == {"x0": 3.0, "x2": 8.0}
    assert target["fixation"]["reached"]
    assert target["fixation"]["time_over_ln_inv_epsilon"] > 0
    assert result["inputs"]["epsilon"] == pytest.approx(1000**-0.8)


def test_compare_mismatched_traits(tmp_path, scenarios_dir):
    a = write(tmp_path / "a.csv", "time,x0\n0,1\n1,2\n")
    b = write(tmp_path / "b.csv", "time,x0,x1\n0,1,0\n1,2,0\n")
    c = write(tmp_path / "c.csv", "time,x0\n0,1\n2,2\n")
    assert run("compare", a, b) == 2
    assert run("compare", a, c) == 2
    assert run("compare", a, scenarios_dir / "fig2_left_gamma.json") == 2
    assert run("compare", write(tmp_path / "d.csv", "t,x\n"), a) == 2


def test_irrelevant_fields_warn(scenarios_dir, tmp_path, caplog):
    run("ode", scenarios_dir / "fig3.toml", "--out", tmp_path, "--horizon", 1.0)
    messages = " ".join(r.getMessage() for r in caplog.records)
    assert "'jump' is not used by 'ode'" in messages
    assert "'seed' is not used by 'ode'" in messages


def test_no_partial_files_left_behind(tmp_path):
    path = write(tmp_path / "s.toml", LOGISTIC.format(name="s", n0=0.5))
    run("simulate", path, "--out", tmp_path / "o")
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["s_summary.json", "s_trajectory.csv"]
