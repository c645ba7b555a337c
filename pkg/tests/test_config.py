import copy

import numpy as np
import pytest
import yaml

from bess_dpc.config import ConfigError, load_config
from bess_dpc.scheduler import Mode

from conftest import CONFIGS


def _doc(name):
    return yaml.safe_load((CONFIGS / name).read_text())


def _write(tmp_path, doc, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


@pytest.mark.parametrize("name", ["reference_pack.yaml", "motivating.yaml", "power_intensive.yaml", "high_soc.yaml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.bess.rated_power_kw > 0


def test_units_converted():
    cfg = load_config(CONFIGS / "motivating.yaml")
    assert cfg.bess.step_hours == pytest.approx(300 / 3600)
    assert cfg.horizon == 6 and cfg.soc0 == 0.2 and cfg.mode is Mode.DPC
    assert cfg.forecasts.w_hi_kwh[2] == pytest.approx(50.0)


def test_seed_and_mode_override():
    a = load_config(CONFIGS / "power_intensive.yaml")
    b = load_config(CONFIGS / "power_intensive.yaml", seed=7, mode="spc")
    assert b.mode is Mode.SPC
    assert not np.array_equal(a.service.power_kw, b.service.power_kw)


def test_circuit_from_file(tmp_path):
    inner = {"circuit": _doc("reference_pack.yaml")["circuit"]}
    _write(tmp_path, inner, "pack.yaml")
    doc = _doc("motivating.yaml")
    doc["circuit"] = {"file": "pack.yaml", "series_resistance_ohm": 0.07}
    cfg = load_config(_write(tmp_path, doc))
    assert cfg.circuit.series_resistance_ohm == 0.07
    assert cfg.circuit.i_max_amp == 1000.0


def test_ocv_csv(tmp_path):
    (tmp_path / "ocv.csv").write_text("soc,voltage_v\n0,620\n0.5,710\n1,800\n")
    doc = _doc("reference_pack.yaml")
    for k in ("ocv_intercept_v", "ocv_slope_v_per_soc"):
        del doc["circuit"][k]
    doc["circuit"]["ocv_csv"] = "ocv.csv"
    cfg = load_config(_write(tmp_path, doc))
    assert cfg.circuit.ocv.table(0.5) == pytest.approx(710.0)
    assert cfg.circuit.ocv.slope == pytest.approx(180.0)


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["circuit"].update(file="nowhere.yaml"), "nowhere.yaml"),
    (lambda d: d["circuit"].pop("v_min_volt"), "circuit.v_min_volt"),
    (lambda d: d["circuit"].update(series_resistance_ohm="abc"), "series_resistance_ohm"),
    (lambda d: d.pop("bess"), "bess"),
    (lambda d: d["forecast"].update(file="f.csv"), "exactly one"),
    (lambda d: d["service"]["synthetic"].update(colour="red"), "colour"),
    (lambda d: d["service"].update(file="svc.csv"), "exactly one"),
    (lambda d: d["simulation"].update(soc0=1.5), "initial SOC"),
    (lambda d: d["simulation"].update(plant_ocv="spline"), "plant_ocv"),
    (lambda d: d["scheduler"].update(mode="mpc"), "scheduler.mode"),
    (lambda d: d["scheduler"].update(horizon=0), "horizon"),
])
def test_config_errors(tmp_path, mutate, needle):
    doc = copy.deepcopy(_doc("power_intensive.yaml"))
    mutate(doc)
    with pytest.raises(ConfigError, match=needle):
        load_config(_write(tmp_path, doc))


def test_forecast_shorter_than_horizon(tmp_path):
    doc = _doc("motivating.yaml")
    doc["scheduler"]["horizon"] = 8
    with pytest.raises(ConfigError, match="covers 6 steps"):
        load_config(_write(tmp_path, doc))


def test_forecast_truncated_to_horizon(tmp_path):
    doc = _doc("motivating.yaml")
    doc["scheduler"]["horizon"] = 3
    assert load_config(_write(tmp_path, doc)).forecasts.horizon == 3


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="missing.yaml"):
        load_config(tmp_path / "missing.yaml")


def test_not_a_mapping(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(p)
