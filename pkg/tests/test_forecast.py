import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bess_dpc.forecast import (
    ForecastError,
    ForecastSet,
    block_energies,
    empirical_quantile,
    estimate_energy_pis,
    estimate_forecast_set,
    estimate_power_pis,
    read_forecast_csv,
    read_power_trace_csv,
    write_forecast_csv,
    write_power_trace_csv,
)


def quantile_oracle(data, q):
    x = sorted(data)
    pos = (len(x) - 1) * q
    k = int(np.floor(pos))
    if k + 1 >= len(x):
        return x[-1]
    return x[k] + (pos - k) * (x[k + 1] - x[k])


class TestQuantile:
    def test_one_to_hundred(self):
        assert empirical_quantile(range(1, 101), 0.05) == pytest.approx(5.95)

    def test_constant(self):
        assert empirical_quantile([7.0] * 9, 0.37) == 7.0

    def test_symmetric_pair(self):
        assert empirical_quantile([-1.0, 1.0], 0.5) == 0.0

    def test_errors(self):
        with pytest.raises(ForecastError):
            empirical_quantile([], 0.5)
        with pytest.raises(ForecastError):
            empirical_quantile([1.0], 1.5)


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=60), st.floats(0, 1))
def test_quantile_matches_oracle(data, q):
    assert empirical_quantile(data, q) == pytest.approx(quantile_oracle(data, q), abs=1e-6)


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=60), st.floats(0, 1), st.floats(0, 1))
def test_quantile_monotone(data, a, b):
    lo, hi = min(a, b), max(a, b)
    assert empirical_quantile(data, lo) <= empirical_quantile(data, hi) + 1e-9


class TestPowerPis:
    def test_heavy_tailed_symmetric(self):
        rng = np.random.default_rng(3)
        x = np.where(rng.random(20000) < 0.2, rng.choice([-600.0, 600.0], 20000), rng.normal(0, 50, 20000))
        lo, hi = estimate_power_pis(x, 0.05, 0.95, 4)
        assert lo[0] == -600.0 and hi[0] == 600.0
        assert lo.shape == (4,)

    def test_zero(self):
        lo, hi = estimate_power_pis(np.zeros(200), 0.05, 0.95, 3)
        assert np.all(lo == 0) and np.all(hi == 0)

    def test_ramp(self):
        lo, hi = estimate_power_pis(np.arange(1.0, 101.0), 0.05, 0.95, 2)
        assert lo[0] == pytest.approx(5.95) and hi[0] == pytest.approx(95.05)

    def test_too_short(self):
        with pytest.raises(ForecastError):
            estimate_power_pis(np.zeros(99), 0.05, 0.95, 3)


class TestEnergyPis:
    def test_constant(self):
        lo, hi = estimate_energy_pis(np.full(900, 600.0), 90, 0.05, 0.95, 5)
        assert lo[0] == pytest.approx(15.0) and hi[0] == pytest.approx(15.0)

    def test_alternating_cancels(self):
        x = np.tile([600.0, -600.0], 900)
        lo, hi = estimate_energy_pis(x, 90, 0.05, 0.95, 2)
        assert abs(lo[0]) < 0.2 and abs(hi[0]) < 0.2

    def test_partial_block_dropped(self):
        assert block_energies(np.ones(185), 90).size == 2

    def test_too_short(self):
        with pytest.raises(ForecastError):
            block_energies(np.ones(50), 90)

    def test_unit_resample_scales_power(self):
        x = np.random.default_rng(0).normal(0, 100, 500)
        p_lo, p_hi = estimate_power_pis(x, 0.1, 0.9, 1)
        w_lo, w_hi = estimate_energy_pis(x, 1, 0.1, 0.9, 1)
        assert w_lo[0] == pytest.approx(p_lo[0] / 3600) and w_hi[0] == pytest.approx(p_hi[0] / 3600)


def test_contraction_counterexample():
    # block averaging does not always shrink quantiles: here every 1 s sample
    # at the 5% level is 0 while every 2 s block carries 0.5
    x = np.tile([0.0, 1.0], 100)
    p_lo, _ = estimate_power_pis(x, 0.05, 0.95, 1)
    w_lo, _ = estimate_energy_pis(x, 2, 0.05, 0.95, 1)
    assert abs(w_lo[0]) / (2 / 3600) > abs(p_lo[0])


@given(st.lists(st.floats(-700, 700), min_size=180, max_size=400), st.sampled_from([1, 10, 90]))
def test_energy_pis_bounded_by_extremes(x, block):
    w_lo, w_hi = estimate_energy_pis(x, block, 0.05, 0.95, 1)
    step_h = block / 3600
    assert min(x) - 1e-9 <= w_lo[0] / step_h <= w_hi[0] / step_h <= max(x) + 1e-9


class TestForecastSet:
    def test_constant_and_head(self):
        fc = ForecastSet.constant(-600, 600, -5.2, 4.1, 16)
        assert fc.horizon == 16 and fc.head(4).horizon == 4
        assert fc.energy_within_power(0.025)

    def test_point(self):
        fc = ForecastSet.point([0, 600], 0.5)
        np.testing.assert_array_equal(fc.w_hi_kwh, [0, 300])

    def test_energy_exceeding_power(self):
        assert not ForecastSet.constant(-10, 10, -5, 5, 2).energy_within_power(0.025)

    def test_invalid(self):
        with pytest.raises(ForecastError):
            ForecastSet(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2))
        with pytest.raises(ForecastError):
            ForecastSet.constant(1, 0, 0, 0, 2)

    def test_estimate(self):
        x = np.sin(np.arange(3600) / 50.0) * 500
        fc = estimate_forecast_set(x, 8)
        assert fc.horizon == 8 and np.all(fc.p_lo_kw <= fc.p_hi_kw)


def test_trace_csv_round_trip(tmp_path):
    x = np.array([0.0, 1.5, -2.25, 1e-7])
    write_power_trace_csv(tmp_path / "t.csv", x)
    np.testing.assert_array_equal(read_power_trace_csv(tmp_path / "t.csv"), x)


def test_trace_gap_rejected(tmp_path):
    (tmp_path / "t.csv").write_text("t_s,power_kw\n0,1\n1,2\n3,4\n")
    with pytest.raises(ForecastError):
        read_power_trace_csv(tmp_path / "t.csv")


def test_trace_header_and_values(tmp_path):
    (tmp_path / "a.csv").write_text("time,p\n0,1\n")
    with pytest.raises(ForecastError):
        read_power_trace_csv(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("t_s,power_kw\n0,nan\n")
    with pytest.raises(ForecastError):
        read_power_trace_csv(tmp_path / "b.csv")


def test_forecast_csv_round_trip(tmp_path):
    fc = ForecastSet(np.array([-600.0, -1.5]), np.array([600.0, 2.0]), np.array([-5.2, 0.0]), np.array([4.1, 0.1]))
    write_forecast_csv(tmp_path / "f.csv", fc)
    back = read_forecast_csv(tmp_path / "f.csv")
    for name in ("p_lo_kw", "p_hi_kw", "w_lo_kwh", "w_hi_kwh"):
        np.testing.assert_array_equal(getattr(back, name), getattr(fc, name))
