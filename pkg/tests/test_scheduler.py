import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bess_dpc.circuit import reference_pack
from bess_dpc.envelope import build_envelope
from bess_dpc.fixtures import (
    motivating_bess,
    motivating_forecast,
    motivating_pack,
    stress_bess,
    stress_forecasts,
    stress_pack,
)
from bess_dpc.forecast import ForecastSet
from bess_dpc.qpsolver import INFEASIBLE, SOLVED
from bess_dpc.scheduler import (
    FAMILIES,
    InfeasibleScheduleError,
    Mode,
    SchedulerBuildError,
    SchedulerConfig,
    build_problem,
    build_spc_problem,
    certify,
    complementarity_gap,
    config_for_mode,
    power_limits,
    read_schedule_csv,
    schedule,
    shift_warm_start,
    write_schedule_csv,
)

PACK = reference_pack()
BESS = stress_bess()


def cfg(mode, horizon=6, soft=False, bess=BESS, pack=PACK, **kw):
    return config_for_mode(mode, pack, bess, horizon, soft_constraints=soft, **kw)


def zero_fc(T):
    return ForecastSet.constant(0, 0, 0, 0, T)


class TestConfig:
    def test_mode_parse(self):
        assert Mode.parse("DPC_NO_VOLTAGE") is Mode.DPC_NO_VOLTAGE
        assert Mode.parse("spc") is Mode.SPC
        with pytest.raises(ValueError):
            Mode.parse("bogus")

    def test_requires_envelope(self):
        with pytest.raises(SchedulerBuildError):
            SchedulerConfig(Mode.DPC, BESS, 4)

    def test_weights(self):
        with pytest.raises(SchedulerBuildError):
            SchedulerConfig(Mode.SPC, BESS, 3, cost_weights=(1.0, -1.0, 1.0))
        with pytest.raises(SchedulerBuildError):
            SchedulerConfig(Mode.SPC, BESS, 0)
        assert np.array_equal(SchedulerConfig(Mode.SPC, BESS, 2).weights(), [1.0, 1.0])

    def test_nv_envelope_is_current_only(self):
        c = cfg(Mode.DPC_NO_VOLTAGE)
        assert len(c.envelope.upper) == 1 and len(c.envelope.lower) == 1


class TestSpc:
    def test_motivating_all_zero(self):
        for soft in (False, True):
            c = config_for_mode(Mode.SPC, reference_pack(), motivating_bess(), 6, soft_constraints=soft)
            r = schedule(0.2, motivating_forecast(), c)
            assert r.feasible
            assert np.max(np.abs(r.offsets_kw)) < 1e-6

    def test_excess_forecast_shifts_by_excess(self):
        fc = ForecastSet.constant(0.0, 800.0, 0.0, 0.0, 5)
        r = schedule(0.5, fc, cfg(Mode.SPC, 5))
        np.testing.assert_allclose(r.offsets_kw, -80.0, atol=1e-5)

    @pytest.mark.parametrize("mode", list(Mode))
    def test_zero_forecast_zero_offsets(self, mode):
        r = schedule(0.5, zero_fc(8), cfg(mode, 8, soft=True))
        assert r.feasible
        np.testing.assert_allclose(r.offsets_kw, 0.0, atol=1e-9)
        assert r.objective_value == pytest.approx(0.0, abs=1e-12)

    def test_static_spread_rejected_before_solving(self):
        fc = ForecastSet.constant(-800.0, 800.0, 0.0, 0.0, 3)
        with pytest.raises(InfeasibleScheduleError):
            build_spc_problem(0.5, fc, cfg(Mode.SPC, 3))
        r = schedule(0.5, fc, cfg(Mode.SPC, 3))
        assert r.solver_status == INFEASIBLE
        assert set(r.diagnosis) == {"power_upper", "power_lower"}

    def test_horizon_mismatch(self):
        with pytest.raises(SchedulerBuildError):
            build_problem(0.5, zero_fc(4), cfg(Mode.SPC, 6))


class TestDpc:
    def test_low_soc_charges_early(self):
        c = cfg(Mode.DPC, 16, soft=False)
        fc = ForecastSet.constant(-600.0, 600.0, -5.2, 4.1, 16)
        assert c.envelope.upper_at(0.2) == pytest.approx(606.0)
        r = schedule(0.2, fc, c)
        assert r.feasible
        assert r.offsets_kw[0] < -1.0
        assert max(certify(r, 0.2, fc, c).values()) <= 1e-5

    def test_motivating_tuned_pack(self):
        c = config_for_mode(Mode.DPC, motivating_pack(), motivating_bess(), 6)
        assert c.envelope.upper_at(0.2) < 600.0
        fc = motivating_forecast()
        r = schedule(0.2, fc, c)
        assert r.feasible
        assert min(r.offsets_kw[:2]) < 0.0
        up, _ = power_limits(r, 0.2, fc, c)
        assert fc.p_hi_kw[2] + r.offsets_kw[2] <= up[2] + 1e-4

    def test_no_voltage_weaker_at_low_soc(self):
        fc = ForecastSet.constant(0.0, 0.0, 0.0, 0.0, 3)
        d, nv = cfg(Mode.DPC, 3), cfg(Mode.DPC_NO_VOLTAGE, 3)
        up_d, _ = power_limits(np.zeros(3), 0.05, fc, d)
        up_nv, _ = power_limits(np.zeros(3), 0.05, fc, nv)
        assert np.all(up_nv > up_d)

    def test_envelope_domain_check(self):
        narrow = dataclasses.replace(cfg(Mode.DPC), envelope=build_envelope(PACK, soc_domain=(0.3, 0.7)))
        with pytest.raises(SchedulerBuildError):
            build_problem(0.5, zero_fc(6), narrow)


class TestSoftAndInfeasible:
    FC = ForecastSet.constant(-700.0, 700.0, 0.0, 17.5, 4)

    def test_hard_infeasible_reports_families(self):
        r = schedule(0.05, self.FC, cfg(Mode.SPC, 4))
        assert r.solver_status == INFEASIBLE
        assert r.diagnosis and set(r.diagnosis) <= set(FAMILIES)
        assert not r.feasible

    def test_soft_returns_slack(self):
        r = schedule(0.05, self.FC, cfg(Mode.SPC, 4, soft=True))
        assert r.feasible
        assert np.all(np.isfinite(r.offsets_kw))
        assert sum(r.slack_usage.values()) > 1.0
        assert r.slack_per_step.shape == (4,)


def test_schedule_csv_round_trip(tmp_path):
    r = schedule(0.2, stress_forecasts(), config_for_mode(Mode.DPC, stress_pack(), BESS, 16))
    write_schedule_csv(tmp_path / "s.csv", r)
    back = read_schedule_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(back["F_kw"], r.offsets_kw)
    np.testing.assert_array_equal(back["soc_lo"], r.soc_pi.soc_lo)
    np.testing.assert_array_equal(back["soc_hi"], r.soc_pi.soc_hi)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,F_kw,soc_lo,soc_hi,slack_total"


def test_warm_start_shift():
    c = config_for_mode(Mode.DPC, stress_pack(), BESS, 16)
    r = schedule(0.3, stress_forecasts(), c)
    w = shift_warm_start(r, 16, True)
    assert w is not None and np.all(np.isfinite(w))
    r2 = schedule(0.3, stress_forecasts(), c, warm_start=w)
    np.testing.assert_allclose(r2.offsets_kw, r.offsets_kw, atol=1e-4)
    assert shift_warm_start(None, 16, True) is None


def test_stress_fixture_complementarity():
    for mode in Mode:
        c = config_for_mode(mode, stress_pack(), BESS, 16)
        for soc0 in (0.1, 0.3, 0.5):
            r = schedule(soc0, stress_forecasts(), c)
            lay = build_problem(soc0, stress_forecasts(), c).layout
            assert r.complementarity_kw <= 1e-3 or r.sign_fixed
            assert complementarity_gap(r.solution.x, lay) == pytest.approx(r.complementarity_kw)


forecast_steps = st.tuples(st.floats(-300, 0), st.floats(0, 500), st.floats(-3, 0), st.floats(0, 3))


@settings(max_examples=15)
@given(st.floats(0.3, 0.7), st.lists(forecast_steps, min_size=4, max_size=4))
def test_mode_dominance(soc0, steps):
    fc = ForecastSet(*[np.array(col) for col in zip(*steps)])
    T = 4
    nv_env = build_envelope(PACK, include_voltage=False, soc_domain=(BESS.soc_min, BESS.soc_max))
    big = dataclasses.replace(BESS, rated_power_kw=nv_env.max_discharge_kw + nv_env.max_charge_kw)
    results = []
    for mode, b in ((Mode.SPC, big), (Mode.DPC_NO_VOLTAGE, BESS), (Mode.DPC, BESS)):
        r = schedule(soc0, fc, cfg(mode, T, bess=b))
        if not r.feasible:
            return
        results.append(r.objective_value)
    tol = 1e-4 * (1 + max(results))
    assert results[0] <= results[1] + tol <= results[2] + 2 * tol


@settings(max_examples=15)
@given(st.sampled_from(list(Mode)), st.floats(0.1, 0.9), st.integers(1, 10))
def test_null_forecast_fixed_point(mode, soc0, T):
    r = schedule(soc0, zero_fc(T), cfg(mode, T))
    np.testing.assert_allclose(r.offsets_kw, 0.0, atol=1e-8)


@settings(max_examples=15)
@given(st.sampled_from(list(Mode)), st.floats(0.15, 0.85), st.floats(0, 650), st.floats(0, 5))
def test_certified_when_solved_hard(mode, soc0, p_hi, w_hi):
    fc = ForecastSet.constant(-p_hi, p_hi, -w_hi, w_hi, 6)
    c = cfg(mode, 6)
    r = schedule(soc0, fc, c)
    if r.solver_status == SOLVED:
        worst = certify(r, soc0, fc, c)
        assert worst["power_upper"] <= 1e-4 and worst["power_lower"] <= 1e-4
        assert worst["soc_lower"] <= 1e-7 and worst["soc_upper"] <= 1e-7
