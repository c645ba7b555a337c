import numpy as np
import pytest
import yaml

from bess_dpc.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main
from bess_dpc.envelope import read_envelope_csv
from bess_dpc.forecast import read_forecast_csv
from bess_dpc.scheduler import read_schedule_csv
from bess_dpc.sim import read_sweep_csv, read_trace_csv

from conftest import CONFIGS


def _doc(name):
    return yaml.safe_load((CONFIGS / name).read_text())


def _write(tmp_path, doc, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def _short(tmp_path, seconds=450, sweep=(0.2, 0.4)):
    doc = _doc("power_intensive.yaml")
    doc["service"]["synthetic"]["duration_s"] = seconds
    doc["service"]["synthetic"]["segments"] = [[100.0, seconds / 3600]]
    doc["sweep"]["soc0"] = list(sweep)
    return _write(tmp_path, doc)


def run(*args):
    return main([str(a) for a in args])


class TestEnvelope:
    def test_reference_two_lines_per_side(self, tmp_path):
        assert run("envelope", "--config", CONFIGS / "reference_pack.yaml", "--out", tmp_path) == EXIT_OK
        env = read_envelope_csv(tmp_path / "envelope.csv")
        assert len(env.upper) == 2 and len(env.lower) == 2
        np.testing.assert_allclose(sorted(env.upper), [(464.0, 2088.0), (570.0, 180.0)], rtol=1e-9)
        assert (tmp_path / "boundary.csv").exists()
        assert (tmp_path / "envelope.svg").read_text().startswith("<svg")

    def test_no_voltage_single_line(self, tmp_path):
        doc = _doc("reference_pack.yaml")
        doc["envelope"]["include_voltage"] = False
        assert run("envelope", "--config", _write(tmp_path, doc), "--out", tmp_path) == EXIT_OK
        env = read_envelope_csv(tmp_path / "envelope.csv")
        assert len(env.upper) == 1 and len(env.lower) == 1

    def test_missing_circuit_file(self, tmp_path, capsys):
        doc = _doc("reference_pack.yaml")
        doc["circuit"] = {"file": "absent_pack.yaml"}
        assert run("envelope", "--config", _write(tmp_path, doc), "--out", tmp_path) == EXIT_CONFIG
        assert "absent_pack.yaml" in capsys.readouterr().err


class TestSchedule:
    def test_motivating_spc_all_zero(self, tmp_path):
        assert run("schedule", "--config", CONFIGS / "motivating.yaml", "--out", tmp_path, "--mode", "spc") == EXIT_OK
        f = read_schedule_csv(tmp_path / "schedule_spc.csv")["F_kw"]
        assert np.max(np.abs(f)) < 1e-6

    def test_motivating_dpc_charges_early(self, tmp_path):
        assert run("schedule", "--config", CONFIGS / "motivating.yaml", "--out", tmp_path) == EXIT_OK
        f = read_schedule_csv(tmp_path / "schedule_dpc.csv")["F_kw"]
        assert min(f[0], f[1]) < 0
        assert (tmp_path / "schedule_dpc.svg").exists()

    def test_zero_forecast_zero_objective(self, tmp_path, capsys):
        doc = _doc("motivating.yaml")
        doc["forecast"]["point_kw"] = [0.0] * 6
        assert run("schedule", "--config", _write(tmp_path, doc), "--out", tmp_path, "--mode", "all") == EXIT_OK
        assert capsys.readouterr().out.count("objective 0,") == 3
        for m in ("spc", "dpc", "dpc-nv"):
            assert np.all(read_schedule_csv(tmp_path / f"schedule_{m}.csv")["F_kw"] == 0.0)

    def test_hard_infeasible_exit_code(self, tmp_path, capsys):
        doc = _doc("motivating.yaml")
        doc["scheduler"]["soft_constraints"] = False
        # a +-1000 kW band is wider than any envelope gap, whatever the offset
        doc["forecast"] = {"constant": {"p_lo_kw": -1000.0, "p_hi_kw": 1000.0, "w_lo_kwh": 0.0, "w_hi_kwh": 0.0}}
        assert run("schedule", "--config", _write(tmp_path, doc), "--out", tmp_path) == EXIT_INFEASIBLE
        assert "power_upper" in capsys.readouterr().err

    def test_requires_forecast(self, tmp_path):
        doc = _doc("reference_pack.yaml")
        assert run("schedule", "--config", _write(tmp_path, doc), "--out", tmp_path) == EXIT_CONFIG


class TestClosedLoopCommands:
    def test_simulate_mode_all_three_traces(self, tmp_path):
        assert run("simulate", "--config", _short(tmp_path), "--out", tmp_path, "--mode", "all") == EXIT_OK
        for m in ("spc", "dpc", "dpc-nv"):
            tr = read_trace_csv(tmp_path / f"trace_{m}.csv")
            assert len(tr.t_s) == 450
            assert read_sweep_csv(tmp_path / f"violations_{m}.csv")[0]["mode"] == m
            assert (tmp_path / f"current_{m}.svg").exists()

    def test_sweep_rows_and_determinism(self, tmp_path):
        cfg = _short(tmp_path)
        assert run("sweep", "--config", cfg, "--out", tmp_path / "a", "--seed", 3) == EXIT_OK
        assert run("sweep", "--config", cfg, "--out", tmp_path / "b", "--seed", 3) == EXIT_OK
        a, b = (tmp_path / "a" / "sweep.csv").read_bytes(), (tmp_path / "b" / "sweep.csv").read_bytes()
        assert a == b
        assert len(read_sweep_csv(tmp_path / "a" / "sweep.csv")) == 6
        assert (tmp_path / "a" / "sweep.svg").read_bytes() == (tmp_path / "b" / "sweep.svg").read_bytes()

    def test_seed_changes_trace(self, tmp_path):
        cfg = _short(tmp_path)
        run("simulate", "--config", cfg, "--out", tmp_path / "a", "--seed", 3, "--mode", "spc")
        run("simulate", "--config", cfg, "--out", tmp_path / "b", "--seed", 4, "--mode", "spc")
        ta, tb = read_trace_csv(tmp_path / "a" / "trace_spc.csv"), read_trace_csv(tmp_path / "b" / "trace_spc.csv")
        assert not np.array_equal(ta.service_kw, tb.service_kw)

    def test_bad_seed(self, tmp_path):
        assert run("sweep", "--config", _short(tmp_path), "--out", tmp_path, "--seed", -1) == EXIT_CONFIG


def test_forecast_command(tmp_path):
    assert run("forecast", "--config", _short(tmp_path, seconds=3600), "--out", tmp_path) == EXIT_OK
    fc = read_forecast_csv(tmp_path / "forecast.csv")
    assert fc.horizon == 16
    assert np.all(fc.p_lo_kw <= fc.p_hi_kw) and np.all(fc.w_lo_kwh <= fc.w_hi_kwh)


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "bess_dpc", "envelope", "--config", str(CONFIGS / "reference_pack.yaml"),
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "wrote" in r.stdout


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["plot", "--config", "x.yaml"])
