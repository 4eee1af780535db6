"""Experiment configs, reports, outputs and the command line."""
import numpy as np
import pytest

from magctl.cli import main
from magctl.core import fit_gaussian, gaussian_state
from magctl.hamiltonian import system_from_descriptor
from magctl.harness import ConfigError, Report, emit, load_config, run_experiment
from magctl.harness.config import ladder_points
from magctl.harness.experiments import make_rng, random_schedule
from magctl.harness.report import to_csv
from magctl.propagator import Schedule, Segment, execute

FAST_PHASE = {"ladder": {"tau": [1e-3, 1e-4]}, "system": {"n": 64}}


@pytest.fixture(scope="module")
def phase_report():
    return run_experiment(load_config(FAST_PHASE, "phase-conv"))


# ---- configuration -----------------------------------------------------------------


def test_defaults_load_for_every_experiment():
    from magctl.harness.config import EXPERIMENTS

    for name in EXPERIMENTS:
        cfg = load_config(experiment=name)
        assert cfg.experiment == name and cfg.seed == 0


def test_empty_ladder_rejected():
    with pytest.raises(ConfigError, match="empty"):
        ladder_points({})
    with pytest.raises(ConfigError, match="empty"):
        load_config({"ladder": {"tau": []}}, "phase-conv")


def test_ladder_broadcast():
    pts = ladder_points({"tau": [0.1, 0.01], "n": [4]})
    assert pts == [{"tau": 0.1, "n": 4}, {"tau": 0.01, "n": 4}]
    with pytest.raises(ConfigError):
        ladder_points({"tau": [0.1, 0.01], "n": [1, 2, 3]})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config({"bogus": 1}, "phase-conv")
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config({"params": {"tau": 1, "wat": 2}}, "phase-conv")


def test_seed_range():
    assert load_config(experiment="obstruction", seed=2**64 - 1).seed == 2**64 - 1
    for bad in (-1, 2**64):
        with pytest.raises(ConfigError):
            load_config(experiment="obstruction", seed=bad)


def test_experiment_name_checked():
    with pytest.raises(ConfigError):
        load_config(experiment="nope")
    with pytest.raises(ConfigError):
        load_config({"experiment": "saturate"}, "phase-conv")


def test_rng_reproducible():
    a = random_schedule(make_rng(7), 2, 5, 5.0, 0.2)
    b = random_schedule(make_rng(7), 2, 5, 5.0, 0.2)
    assert a.to_json() == b.to_json()
    assert 1 <= len(a) <= 5 and all(s.u[1] == 0 for s in a)


# ---- reports --------------------------------------------------------------------------


def test_empty_report_csv_is_header_only():
    r = Report("phase-conv", {}, ["tau", "error"], [])
    assert to_csv(r) == "tau,error\n"
    assert not r.passed


def test_report_rows_and_flags(phase_report):
    assert len(phase_report.rows) == 2
    assert to_csv(phase_report).count("\n") == 3
    assert phase_report.passed
    fits, flags = phase_report.recompute()
    assert flags == phase_report.flags and fits == phase_report.fits


def test_report_json_roundtrip(phase_report):
    back = Report.from_json(phase_report.to_json())
    assert back.to_json() == phase_report.to_json()
    assert back.recompute()[1] == phase_report.flags


def test_csv_timing_blank_by_default(phase_report):
    header, *rows = to_csv(phase_report).splitlines()
    col = header.split(",").index("wall_ms")
    assert all(r.split(",")[col] == "" for r in rows)
    timed = to_csv(phase_report, timing=True).splitlines()[1].split(",")[col]
    assert float(timed) >= 0


def test_outputs_byte_identical(tmp_path):
    paths = []
    for run in ("a", "b"):
        report = run_experiment(load_config(FAST_PHASE, "phase-conv"))
        paths.append(emit(report, ("csv", "json", "svg"), tmp_path / run))
    for pa, pb in zip(*paths):
        if pa.suffix == ".json":
            # the JSON keeps the measured wall time of each row
            ja, jb = Report.from_json(pa.read_text()), Report.from_json(pb.read_text())
            for r in ja.rows + jb.rows:
                r.pop("wall_ms")
            assert ja.to_json() == jb.to_json()
        else:
            assert pa.read_bytes() == pb.read_bytes()


# ---- obstruction and identity demo ---------------------------------------------------------


def test_zero_duration_schedules_keep_gaussian():
    cfg = load_config(experiment="obstruction")
    sys = system_from_descriptor(cfg.system)
    psi = gaussian_state(sys.grid, 1.0)
    for k in range(3):
        sched = Schedule(tuple(Segment.evolve(0.0, [float(k), 0.0]) for _ in range(k + 1)))
        out, T = execute(sys, sched, psi)
        assert T == 0.0
        assert fit_gaussian(out)[1] <= 1e-12


def test_obstruction_small_run():
    report = run_experiment(load_config({"count": 3, "system": {"n": 64}}, "obstruction", seed=11))
    assert [r["case"] for r in report.rows] == ["invariance"] * 3 + ["contrast"]
    assert report.flags["contrast"] and report.flags["rows_ok"]


def test_identity_demo():
    report = run_experiment(load_config({"cases": [{"label": "identity", "target": "identity()",
                                                    "tolerances": {"error": 1e-9}}]}, "demo-small-time"))
    assert report.passed
    assert all(r["error"] <= 1e-9 for r in report.rows)


# ---- command line -----------------------------------------------------------------------------


def test_cli_success(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("ladder: {tau: [1.0e-3, 1.0e-4]}\nsystem: {n: 64}\n")
    assert main(["phase-conv", "--config", str(cfg), "--out", str(tmp_path / "o"), "--format", "csv"]) == 0
    assert (tmp_path / "o" / "phase-conv.csv").exists()
    assert "phase-conv: PASS" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("ladder: {tau: []}\n")
    assert main(["phase-conv", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert main(["obstruction", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert main(["phase-conv", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert "magctl:" in capsys.readouterr().err


def test_cli_failure_exit(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("ladder: {tau: [1.0e-2, 1.0e-3]}\nsystem: {n: 64}\ntolerances: {final_error: 1.0e-12}\n")
    assert main(["phase-conv", "--config", str(cfg), "--out", str(tmp_path / "o"), "--format", "csv"]) == 1
