import numpy as np
import pytest

from feederdispatch import solver
from feederdispatch.battery import ModelBank
from feederdispatch.dayahead import (DayAheadConfig, DispatchPlan, OffsetPlan,
                                     _ForecastView, plan_day)
from feederdispatch.forecast import SyntheticShape, point_forecast, synthesize_history
from feederdispatch.mpc import MpcLimits
from feederdispatch.sim import (BatteryPlant, ErrorStats, InitState, PlantConfig,
                                PlantStateError, SimulationRun, format_report,
                                peak_shave_check, run_day, run_multi_day,
                                step_trace, tracking_report, write_run_artifacts)
from feederdispatch.timegrid import DEFAULT_GRID

grid = DEFAULT_GRID


def _flat_plan(level=150.0):
    n = grid.n_slots
    fc = _ForecastView(np.full(n, level), np.zeros(n), np.zeros(n))
    offset = OffsetPlan(f=np.zeros(n), soe_low=np.full(n + 1, 250.0),
                        soe_high=np.full(n + 1, 250.0), objective=0.0,
                        certificate=solver.SolveCertificate("optimal"))
    return DispatchPlan(p_hat=fc.point.copy(), forecast=fc, offset=offset)


@pytest.fixture(scope="module")
def noiseless_day(bank_module):
    plan = _flat_plan(150.0)
    trace = step_trace(plan.forecast.point)
    run = run_day(plan, PlantConfig.noiseless(), InitState(soc=0.5),
                  trace_kw=trace, seed=1, bank=bank_module)
    return plan, run


@pytest.fixture(scope="module")
def bank_module():
    return ModelBank()


def test_gcp_composition_exact(noiseless_day):
    _, run = noiseless_day
    assert np.array_equal(run.p_kw, run.l_kw + run.b_kw)


def test_self_consistency_flat_day(noiseless_day):
    # matched plant, zero noise, persistence-exact trace: tracking is limited
    # only by the solver tolerance
    plan, run = noiseless_day
    p_avg = run.slot_average(run.p_kw)
    assert np.abs(plan.p_hat - p_avg).max() <= 1e-3
    assert all(s == "solved" for s in run.status)


def test_controller_plant_soc_agreement(noiseless_day):
    _, run = noiseless_day
    assert np.abs(run.soc - run.soc_ctrl).max() <= 0.005


def test_b_respects_power_envelope(noiseless_day):
    _, run = noiseless_day
    lim = MpcLimits()
    bound = max(abs(lim.i_min), lim.i_max) * lim.v_max / 1000.0
    assert np.abs(run.b_kw).max() <= bound + 1e-9


def test_run_determinism(bank_module):
    plan = _flat_plan(140.0)
    rng = np.random.default_rng(99)
    trace = step_trace(plan.forecast.point, rng, noise_std=1.0)
    cfg = PlantConfig()
    runs = [run_day(plan, cfg, InitState(soc=0.5), trace_kw=trace, seed=42,
                    bank=bank_module) for _ in range(2)]
    for field in ("l_kw", "b_kw", "p_kw", "soc", "v", "i_a", "e_kwh"):
        assert np.array_equal(getattr(runs[0], field), getattr(runs[1], field))


def test_disabled_battery_reproduces_forecast_error(bank_module):
    plan = _flat_plan(130.0)
    rng = np.random.default_rng(5)
    trace = step_trace(plan.forecast.point, rng, noise_std=2.0)
    run = run_day(plan, PlantConfig.noiseless(), InitState(soc=0.5), trace_kw=trace,
                  seed=5, bank=bank_module, battery_enabled=False)
    assert np.all(run.i_a == 0.0)
    assert np.array_equal(run.p_kw, run.l_kw)
    rep = tracking_report(run, plan)
    assert rep.dispatch.rmse == pytest.approx(rep.no_dispatch.rmse, abs=1e-12)
    assert all(s == "disabled" for s in run.status)


def test_error_stats():
    stats = ErrorStats.of(np.zeros(10))
    assert (stats.rmse, stats.mean, stats.max_abs) == (0.0, 0.0, 0.0)
    stats = ErrorStats.of(np.full(10, 1.0))
    assert (stats.rmse, stats.mean, stats.max_abs) == (1.0, 1.0, 1.0)
    rng = np.random.default_rng(0)
    err = rng.standard_normal(288)
    stats = ErrorStats.of(err)
    assert stats.max_abs >= stats.rmse >= abs(stats.mean)


def test_tracking_report_constant_offset(bank_module):
    plan = _flat_plan(120.0)
    n = grid.n_steps
    run = SimulationRun(k=np.arange(n), l_kw=np.full(n, 119.0),
                        b_kw=np.zeros(n), p_kw=np.full(n, 119.0),
                        soc=np.full(n, 0.5), soc_ctrl=np.full(n, 0.5),
                        v=np.full(n, 650.0), i_a=np.zeros(n), e_kwh=np.zeros(n),
                        b_setpoint_kw=np.zeros(n), horizon=np.ones(n, int),
                        status=["solved"] * n, active=["-"] * n,
                        solve_seconds=np.zeros(n), seed=0, config={})
    rep = tracking_report(run, plan)
    assert rep.dispatch.rmse == pytest.approx(1.0)
    assert rep.dispatch.mean == pytest.approx(1.0)
    assert rep.dispatch.max_abs == pytest.approx(1.0)
    text = format_report(rep)
    assert "no dispatch" in text and "dispatch" in text


def test_peak_shave_check(bank_module):
    plan = _flat_plan(120.0)
    n = grid.n_steps
    p = np.full(n, 119.0)
    p[30 * 10:30 * 11] = 205.0        # one hot slot
    run = SimulationRun(k=np.arange(n), l_kw=p, b_kw=np.zeros(n), p_kw=p,
                        soc=np.full(n, 0.5), soc_ctrl=np.full(n, 0.5),
                        v=np.full(n, 650.0), i_a=np.zeros(n), e_kwh=np.zeros(n),
                        b_setpoint_kw=np.zeros(n), horizon=np.ones(n, int),
                        status=["solved"] * n, active=["-"] * n,
                        solve_seconds=np.zeros(n), seed=0, config={})
    viol = peak_shave_check(run, p_max=200.0)
    assert len(viol) == 1 and viol[0].slot == 10
    assert viol[0].excess_kw == pytest.approx(5.0)
    assert peak_shave_check(run, p_max=119.0, tol_kw=0.0) == []


def test_plant_state_error():
    plant = BatteryPlant(PlantConfig.noiseless(), seed=0, initial_soc=0.999)
    with pytest.raises(PlantStateError) as exc:
        for k in range(100):
            plant.apply_current(810.0, step=k)
    assert exc.value.step < 100
    assert "SOC" in str(exc.value)


def test_plant_converter_inversion():
    plant = BatteryPlant(PlantConfig.noiseless(), seed=0, initial_soc=0.5)
    for cmd in (-150.0, -20.0, 0.0, 35.0, 180.0):
        i = plant.current_for_power(cmd)
        m = plant._model()
        v = float(m.c @ plant.x + m.d_i * i + m.d_1)
        assert 0.98 * v * i / 1000.0 == pytest.approx(cmd, abs=1e-9)


def test_plant_perturbation_bounds():
    from feederdispatch.battery import TABLE1
    from feederdispatch.sim import perturbed_table
    rng = np.random.default_rng(3)
    table = perturbed_table(TABLE1, 0.05, rng)
    for base, pert in zip(TABLE1, table):
        for field in ("e", "rs", "r1", "c1", "r2", "c2", "r3", "c3"):
            ratio = getattr(pert, field) / getattr(base, field)
            assert 0.95 <= ratio <= 1.05
        assert (pert.k1, pert.sigma2) == (base.k1, base.sigma2)
    assert perturbed_table(TABLE1, 0.0, rng) is TABLE1


def test_step_trace_exact_repeat():
    profile = np.arange(288, dtype=float)
    trace = step_trace(profile)
    assert trace.shape == (8640,)
    assert np.array_equal(trace.reshape(288, 30).mean(axis=1), profile)
    rng = np.random.default_rng(0)
    noisy = step_trace(profile, rng, noise_std=1.0)
    assert not np.array_equal(noisy, trace)


def test_artifacts_roundtrip(tmp_path, noiseless_day, bank_module):
    plan, run = noiseless_day
    rep = tracking_report(run, plan)
    write_run_artifacts(tmp_path, run, plan, rep, {"seed": 1}, emit_plots=True,
                        limits=MpcLimits())
    for name in ("steps.csv", "plan.csv", "report.txt", "config.json",
                 "forecast_panel.csv", "tracking_panel.csv", "battery_panel.csv"):
        assert (tmp_path / name).exists()
    rows = [l for l in (tmp_path / "steps.csv").read_text().splitlines()
            if not l.startswith("#") and not l.startswith("k,")]
    assert len(rows) == grid.n_steps
    # plot data round-trips exactly
    data = np.array([[float(v) for v in l.split(",")[1:]]
                     for l in (tmp_path / "tracking_panel.csv").read_text().splitlines()
                     if not l.startswith("#")])
    assert np.array_equal(data[:, 0], plan.p_hat)
    assert np.array_equal(data[:, 1], run.slot_average(run.p_kw))


# ---------------------------------------------------------------------------
# multi-day chains
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def two_day_chain(bank_module):
    history = synthesize_history(seed=7, days=45)
    cfg = DayAheadConfig(soe0=250.0)
    results = run_multi_day(2, history, cfg, MpcLimits(), PlantConfig(),
                            seed=3, initial_soc=0.5, bank=bank_module)
    return results


def test_multi_day_soc_continuity(two_day_chain):
    results = two_day_chain
    assert len(results) == 2
    assert results[1].run.initial_soc == results[0].run.soc[-1]


def test_multi_day_reports(two_day_chain):
    for res in two_day_chain:
        assert res.report.no_dispatch.rmse > res.report.dispatch.rmse
        assert res.run.soc.min() >= 0.05


def test_offset_sign_follows_stored_energy(day_forecast):
    # planning from a nearly full battery biases the plan to discharge,
    # from a nearly empty one to charge
    high = plan_day(day_forecast, DayAheadConfig(soe0=430.0))
    low = plan_day(day_forecast, DayAheadConfig(soe0=70.0))
    assert high.offset.f.mean() < 0.0
    assert low.offset.f.mean() > 0.0


def test_three_day_perfect_forecast_soc_band(bank_module):
    # zero forecast error and no noise: the battery stays near its start
    history = synthesize_history(seed=11, days=45)
    shape = SyntheticShape()
    cfg = DayAheadConfig(soe0=250.0)
    plant = PlantConfig.noiseless()
    results = run_multi_day(3, history, cfg, MpcLimits(), plant, seed=8,
                            initial_soc=0.5, shape=shape, bank=bank_module)
    for res in results:
        assert np.abs(res.run.soc - 0.5).max() <= 0.2
