import io
import math

import numpy as np
import pytest

from slipnet import harness
from slipnet.dynamics import AircraftParams
from slipnet.exceptions import DomainError, ScenarioError
from slipnet.friction import ReferenceRoad, optimal_point_closed_form

WET = ReferenceRoad.WET.params
SHORT = harness.SimConfig(t_max=2.0)


class Fixed:
    """Stand-in estimator returning a constant estimate and counting calls."""

    def __init__(self, mean=0.12, var=1e-4):
        self.mean, self.var, self.calls = mean, var, 0

    def __call__(self, x):
        self.calls += 1
        assert x.shape == (30,)
        return self.mean, self.var


def test_schedule_from_code_splits_evenly():
    s = harness.RoadSchedule.from_code("dsd")
    assert [seg.start for seg in s.segments] == [0.0, 4.0, 8.0]
    assert [seg.name for seg in s.segments] == ["Dry", "Snow", "Dry"]
    assert s.surface_at(3.99, 0) == ReferenceRoad.DRY.params
    assert s.surface_at(4.0, 0) == ReferenceRoad.SNOW.params
    assert s.transition_times(np.arange(0, 12, 0.5), np.zeros(24)) == [4.0, 8.0]


def test_schedule_distance_trigger():
    s = harness.RoadSchedule.from_code("WD", duration=300.0, trigger="distance")
    assert s.index_at(100.0, 149.0) == 0
    assert s.index_at(0.0, 150.0) == 1


@pytest.mark.parametrize("code", ["", "DXD"])
def test_schedule_rejects_bad_codes(code):
    with pytest.raises(DomainError):
        harness.RoadSchedule.from_code(code)


def test_schedule_validation():
    seg = harness.Segment(WET, 0.0)
    with pytest.raises(DomainError):
        harness.RoadSchedule(())
    with pytest.raises(DomainError):
        harness.RoadSchedule((seg, harness.Segment(WET, 0.0)))
    with pytest.raises(DomainError):
        harness.RoadSchedule((seg,), trigger="speed")


def test_torque_profiles():
    s = harness.Sinusoid(100.0, 50.0, 0.5)
    assert s(0.0) == 50.0 and s(0.5) == pytest.approx(150.0)
    assert s(1.5) == 0.0  # clamped, brakes cannot pull
    assert harness.Constant(-3.0)(1.0) == 0.0
    p = harness.PilotStep(1000.0, ramp=0.5, start=1.0)
    assert p(0.5) == 0.0 and p(1.25) == pytest.approx(500.0) and p(9.0) == 1000.0
    assert harness.PilotStep(1000.0, ramp=0.0)(0.0) == 1000.0


def test_sim_config_validation():
    with pytest.raises(DomainError):
        harness.SimConfig(tick=2.5e-3 + 1e-4)
    with pytest.raises(DomainError):
        harness.SimConfig(window=1)


def test_tuned_sinusoid_covers_slip_range():
    profile = harness.tune_sinusoid(WET)
    r = harness.run_open_loop(harness.RoadSchedule.fixed(WET), profile, sim=harness.SimConfig(t_max=6.0))
    lam = r.trace["lambda_L"]
    assert lam.min() <= 0.01 and lam.max() >= 0.4


def test_zero_torque_never_queries_estimator():
    est = Fixed()
    r = harness.run_open_loop(harness.RoadSchedule.fixed("wet"), harness.Constant(0.0), estimator=est, sim=SHORT)
    assert est.calls == 0
    assert np.all(np.isnan(r.trace["lambda_star_hat"]))
    assert r.metrics["valid_estimates"] == 0


def test_estimates_start_once_window_is_full():
    est = Fixed()
    r = harness.run_open_loop(harness.RoadSchedule.fixed("wet"), harness.Constant(4000.0), estimator=est, sim=SHORT)
    hat = r.trace["lambda_star_hat"]
    first = int(np.argmax(np.isfinite(hat)))
    assert first >= 15
    assert np.all(np.isfinite(hat[first:]))
    assert est.calls == np.isfinite(hat).sum()
    np.testing.assert_allclose(r.trace["sigma_norm"][first:], 0.01 / 0.12)


def test_trace_columns_and_true_optimum_follow_segments():
    r = harness.run_open_loop(harness.RoadSchedule.from_code("DS", duration=1.0), harness.Constant(2000.0), sim=SHORT)
    assert tuple(r.trace) == harness.TRACE_COLUMNS
    t, true = r.trace["t"], r.trace["lambda_star_true"]
    dry = optimal_point_closed_form(ReferenceRoad.DRY.params).lambda_star
    snow = optimal_point_closed_form(ReferenceRoad.SNOW.params).lambda_star
    np.testing.assert_array_equal(true[t < 0.5], dry)
    np.testing.assert_array_equal(true[t >= 0.5], snow)
    np.testing.assert_allclose(np.diff(t), 5e-3, atol=1e-12)


def test_runs_are_bit_identical_and_csv_round_trips(tmp_path, desk_estimator):
    def once():
        est = harness.MCDropoutEstimator.from_estimator(desk_estimator, seed=7, s_forwards=50)
        return harness.run_open_loop(harness.RoadSchedule.fixed("wet"), harness.Constant(4000.0), estimator=est, sim=SHORT)

    a, b = once(), once()
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = harness.read_trace_csv(tmp_path / "a.csv")
    for col in harness.TRACE_COLUMNS:
        np.testing.assert_array_equal(back[col], a.trace[col])


def test_read_trace_csv_rejects_bad_header():
    with pytest.raises(ScenarioError):
        harness.read_trace_csv(io.StringIO("t,v\n0,1\n"))


def _synthetic_trace(n=200, dt=5e-3, v0=60.0, a=3.0):
    t = np.arange(n) * dt
    lam = np.where(np.arange(n) < n // 2, 0.05, 0.2)
    est = np.full(n, 0.13)
    sn = np.where(lam < 0.1, 0.3, 0.1)
    return {
        "t": t, "v": v0 - a * t, "omega_L": np.zeros(n), "omega_R": np.zeros(n),
        "lambda_L": lam, "mu_L": np.zeros(n), "T_b_L": np.zeros(n), "F_z": np.zeros(n),
        "sigma_norm": sn, "lambda_star_hat": est, "lambda_star_true": np.full(n, 0.13),
    }


def test_metrics_on_synthetic_trace():
    tr = _synthetic_trace()
    m = harness.compute_metrics(tr, window=15)
    assert m["tracking_rmse"] == 0.0
    T = tr["t"][-1]
    assert m["stopping_distance_m"] == pytest.approx(60.0 * T - 1.5 * T ** 2, rel=1e-12)
    # independent band recount
    lam = tr["lambda_L"]
    trailing_max = np.array([lam[max(0, i - 14):i + 1].max() if i >= 14 else np.nan for i in range(lam.size)])
    low = trailing_max <= 0.08
    high = trailing_max > 0.1
    assert m["low_slip_ticks"] == low.sum() and m["high_slip_ticks"] == high.sum()
    assert m["low_slip_sigma_norm"] == pytest.approx(tr["sigma_norm"][low].mean())
    assert m["high_slip_sigma_norm"] == pytest.approx(tr["sigma_norm"][high].mean())
    assert m["band_ratio"] == pytest.approx(m["low_slip_sigma_norm"] / m["high_slip_sigma_norm"])


def test_metrics_stopping_distance_matches_constant_deceleration():
    a, v0 = 4.0, 40.0
    t = np.linspace(0, v0 / a, 10_001)
    tr = _synthetic_trace()
    tr = {k: np.resize(v, t.size) for k, v in tr.items()}
    tr["t"], tr["v"] = t, v0 - a * t
    assert harness.compute_metrics(tr)["stopping_distance_m"] == pytest.approx(v0 ** 2 / (2 * a), rel=1e-9)


def test_rolling_slip_bounds():
    lo, hi = harness.rolling_slip_bounds(np.array([0.1, 0.3, 0.2, 0.0]), 2)
    assert np.isnan(lo[0]) and np.isnan(hi[0])
    np.testing.assert_array_equal(lo[1:], [0.1, 0.2, 0.0])
    np.testing.assert_array_equal(hi[1:], [0.3, 0.3, 0.2])


def test_transition_stats_on_synthetic_result():
    sched = harness.RoadSchedule.from_code("DS", duration=1.0)
    tr = _synthetic_trace()
    tr["sigma_norm"] = np.full(tr["t"].size, 0.1)
    tr["sigma_norm"][tr["t"] >= 0.6] = 0.5
    res = harness.ExperimentResult(tr, {}, sched)
    (stats,) = harness.transition_stats(res, horizon=0.4)
    assert stats["time"] == pytest.approx(0.5)
    assert stats["from"] == "Dry" and stats["to"] == "Snow" and stats["high_to_low"] == 1.0
    assert stats["ratio"] == pytest.approx(5.0)


def test_closed_loop_requires_estimator_for_live_setpoint():
    with pytest.raises(DomainError):
        harness.run_closed_loop(harness.RoadSchedule.fixed("wet"), "mlp", harness.Constant(1.0))
    with pytest.raises(DomainError):
        harness.run_closed_loop(harness.RoadSchedule.fixed("wet"), "learned", harness.Constant(1.0))


def test_live_setpoint_stops_within_five_percent_of_oracle(desk_estimator):
    sched = harness.RoadSchedule.fixed("wet")
    pilot = harness.PilotStep(10_000.0, 0.5)
    oracle = harness.run_closed_loop(sched, "oracle", pilot)
    est = harness.MCDropoutEstimator.from_estimator(desk_estimator, seed=0, s_forwards=100)
    live = harness.run_closed_loop(sched, "mlp", pilot, estimator=est)
    assert live.metrics["final_speed"] <= harness.SimConfig().v_stop + 1.0
    assert live.metrics["stopping_distance_m"] <= 1.05 * oracle.metrics["stopping_distance_m"]
