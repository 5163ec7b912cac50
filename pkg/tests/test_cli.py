"""Command-line round trips, exit-status contract, bundled configs."""

import json
import subprocess
import sys
from dataclasses import fields as dc_fields

import numpy as np
import pytest

from kslab import cli, configs
from kslab.experiments import ExperimentReport, Verdict
from kslab.functionals import RECORD_FIELDS
from kslab.odi import ThresholdSet

PI = "3.141592653589793"


def _args(out, *extra):
    return [f"--out.dir={out}", *extra]


# ----------------------------------------------------------- round trips

def test_simulate_writes_trace(tmp_path, capsys):
    code = cli.main(["simulate", *_args(
        tmp_path, "--grid.cells=64", "--run.t_end=0.2", "--run.cadence=0.1",
        "--run.snap_cadence=0.1")])
    assert code == 0
    header = (tmp_path / "run.csv").read_text().splitlines()[0]
    assert header == ",".join(RECORD_FIELDS)
    assert (tmp_path / "run_meta.json").exists()
    snaps = sorted(p.name for p in tmp_path.glob("run_snap*_u.bin"))
    assert len(snaps) == 3
    out = capsys.readouterr().out
    assert "wrote 3 records" in out
    assert "final t=0.2" in out


def test_verify_passes_on_fresh_run(tmp_path, capsys):
    common = _args(tmp_path, "--grid.cells=64", "--run.t_end=0.5",
                   "--run.cadence=0.05")
    assert cli.main(["simulate", *common]) == 0
    assert cli.main(["verify", *common]) == 0
    lines = (tmp_path / "bounds.csv").read_text().splitlines()
    assert lines[0] == "name,theoretical,observed,margin,tolerance,passed,note"
    assert "PASS" in capsys.readouterr().out
    assert not (tmp_path / "ledger.csv").exists()


def test_verify_flags_tampered_trace(tmp_path, capsys):
    common = _args(tmp_path, "--grid.cells=64", "--run.t_end=0.5",
                   "--run.cadence=0.05")
    assert cli.main(["simulate", *common]) == 0
    path = tmp_path / "run.csv"
    rows = path.read_text().splitlines()
    names = rows[0].split(",")
    col = names.index("mass_u")
    doctored = [rows[0], rows[1]]
    for row in rows[2:]:
        parts = row.split(",")
        parts[col] = repr(float(parts[col]) * 10.0)
        doctored.append(",".join(parts))
    path.write_text("\n".join(doctored) + "\n")
    assert cli.main(["verify", *common]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_thresholds_writes_tables(tmp_path):
    code = cli.main(["thresholds", *_args(
        tmp_path, "--grid.dim=3", f"--grid.extents={PI},{PI},{PI}",
        "--grid.cells=8,8,8", "--constants.gn_samples=60",
        "--constants.embed_samples=40")])
    assert code == 0
    head = (tmp_path / "thresholds.csv").read_text().splitlines()[0]
    names = [f.name for f in dc_fields(ThresholdSet)]
    assert head.split(",") == names + ["c1", "c2", "c_split", "a_half",
                                       "c_mixed", "c_eighth", "a_root"]
    rows = (tmp_path / "dmap.csv").read_text().splitlines()
    assert rows[0] == "delta,d_value,k_value"
    assert len(rows) == 9
    deltas = [float(r.split(",")[0]) for r in rows[1:]]
    assert deltas == [10.0 ** (-k) for k in range(1, 9)]
    dvals = [float(r.split(",")[1]) for r in rows[1:]]
    assert all(a > b for a, b in zip(dvals, dvals[1:]))


def test_thresholds_needs_3d(tmp_path, capsys):
    assert cli.main(["thresholds", *_args(tmp_path)]) == 1
    assert "3D grid" in capsys.readouterr().err


def test_semigroup_writes_fit_table(tmp_path, capsys):
    code = cli.main(["semigroup", *_args(
        tmp_path, "--grid.cells=128", "--semigroup.qs=2.0",
        "--semigroup.trials=12")])
    assert code == 0
    lines = (tmp_path / "semigroup.csv").read_text().splitlines()
    assert lines[0] == "q,alpha_expected,alpha_fit,c_fit,rel_error"
    assert len(lines) == 2
    assert "q=2" in capsys.readouterr().out


def test_plot_emits_runnable_script(tmp_path):
    assert cli.main(["plot", *_args(tmp_path)]) == 0
    script = tmp_path / "plot_all.py"
    assert script.exists()
    compile(script.read_text(), str(script), "exec")


# ----------------------------------------------------------- experiments

def test_experiment_decay_pass_and_outputs(tmp_path):
    code = cli.main(["experiment", "decay", *_args(
        tmp_path, "--grid.cells=64", "--run.t_end=6.0", "--run.cadence=0.05",
        "--decay.thresholds=0.5,0.1")])
    assert code == 0
    report = (tmp_path / "decay_report.csv").read_text().splitlines()
    assert report[0].startswith("experiment,criterion,passed")
    assert (tmp_path / "decay_runs.csv").exists()
    meta = json.loads((tmp_path / "decay_meta.json").read_text())
    assert meta["thresholds"] == [0.5, 0.1]


def test_experiment_decay_fails_short_horizon(tmp_path, capsys):
    code = cli.main(["experiment", "decay", *_args(
        tmp_path, "--grid.cells=64", "--run.t_end=1.0", "--run.cadence=0.05",
        "--decay.thresholds=0.5,0.1")])
    assert code == 2
    assert "FAIL" in capsys.readouterr().out


def test_experiment_exit_tracks_verdicts(tmp_path, monkeypatch):
    # synthetic pass/fail sets pin the exit-status contract
    rng = np.random.default_rng(0)
    for trial in range(12):
        flags = [bool(b) for b in rng.integers(0, 2, size=4)]
        rep = ExperimentReport(name="decay")
        for i, ok in enumerate(flags):
            rep.verdicts.append(Verdict(
                criterion=f"c{i}", passed=ok, observed=0.0, threshold=0.0,
                tolerance=0.0, provenance="config:test"))
        monkeypatch.setitem(cli._EXPERIMENTS, "decay", lambda s, rep=rep: rep)
        out = tmp_path / f"t{trial}"
        code = cli.main(["experiment", "decay", f"--out.dir={out}"])
        assert code == (0 if all(flags) else 2)
        assert (out / "decay_report.csv").exists()
        assert not (out / "decay_runs.csv").exists()


# ---------------------------------------------------------- exit statuses

def test_unknown_key_is_invocation_error(tmp_path, capsys):
    assert cli.main(["simulate", f"--out.dir={tmp_path}", "--nope=3"]) == 1
    assert "unknown config key 'nope'" in capsys.readouterr().err


def test_bare_argument_rejected(tmp_path, capsys):
    assert cli.main(["simulate", f"--out.dir={tmp_path}", "positional"]) == 1
    assert "--key=value" in capsys.readouterr().err


def test_usage_errors_map_to_one(capsys):
    assert cli.main([]) == 1
    assert cli.main(["experiment", "unknown-name"]) == 1
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["simulate", f"--config={tmp_path}/absent.cfg"]) == 1
    assert "no config file" in capsys.readouterr().err


# ------------------------------------------------------- bundled configs

def test_bundled_config_names():
    names = configs.bundled()
    assert {"default", "decay", "decay2d", "absorbing", "epslimit",
            "smallness", "semigroup"} <= set(names)


def test_bundled_config_resolution(tmp_path):
    path = configs.resolve("decay")
    assert path.exists()
    mine = tmp_path / "decay"
    mine.write_text("model.mu = 2.0\n")
    assert configs.resolve(str(mine)) == mine
    with pytest.raises(FileNotFoundError, match="no bundled config"):
        configs.resolve("missing-name")


def test_bundled_configs_all_parse():
    from kslab.experiments import load_settings, run_config
    for name in configs.bundled():
        settings = load_settings(configs.resolve(name))
        run_config(settings)


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "kslab.cli", "plot", f"--out.dir={tmp_path}"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "plot_all.py").exists()
