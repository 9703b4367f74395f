"""Closed-loop simulation: prosumption replay plus battery physics driven by the
10-second controller over one or more days, with tracking reports.

The plant battery uses the same equivalent-circuit family as the controller but
with independently perturbable parameters, converter actuation error and
measurement noise, so model mismatch is exercised without real hardware. The
composite GCP record always satisfies P = L + B exactly; measurement noise only
affects what the controller sees.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace, asdict
from pathlib import Path

import numpy as np

from . import battery, mpc
from .battery import (ModelBank, KalmanState, TtcParameters, TABLE1,
                      kalman_update, soc_step)
from .dayahead import (DayAheadConfig, DispatchPlan, plan_day, save_plan)
from .forecast import (ProsumptionForecast, SyntheticShape, HistoricalDay,
                       TargetDayInfo, forecast_day, is_working_dayofyear,
                       synthesize_day)
from .mpc import MpcLimits, StepTelemetry, build_problem, solve
from .timegrid import TimeGrid, DEFAULT_GRID

CONVERTER_EFF = 0.98


class PlantStateError(RuntimeError):
    """Plant SOC left [0, 1]; carries the offending step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class PlantConfig:
    param_perturbation: float = 0.05    # +-fraction on the circuit parameters
    voltage_noise_v: float = 0.1        # DC voltage measurement noise std
    power_noise_kw: float = 0.5         # GCP power measurement noise std
    actuation_error_frac: float = 0.01  # multiplicative converter error
    actuation_noise_kw: float = 0.5     # additive converter noise std
    step_noise_kw: float = 1.0          # 10-s prosumption noise around the slot value
    step_noise_ar: float = 0.9
    parameter_table: tuple[TtcParameters, ...] | None = None

    def __post_init__(self):
        for name in ("voltage_noise_v", "power_noise_kw", "actuation_noise_kw",
                     "step_noise_kw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @staticmethod
    def noiseless() -> "PlantConfig":
        return PlantConfig(param_perturbation=0.0, voltage_noise_v=0.0,
                           power_noise_kw=0.0, actuation_error_frac=0.0,
                           actuation_noise_kw=0.0, step_noise_kw=0.0)


_PHYSICAL_FIELDS = ("e", "rs", "r1", "c1", "r2", "c2", "r3", "c3")


def perturbed_table(base: tuple[TtcParameters, ...], fraction: float,
                    rng: np.random.Generator) -> tuple[TtcParameters, ...]:
    """Independent multiplicative perturbation of every circuit parameter."""
    if fraction == 0.0:
        return base
    out = []
    for p in base:
        mult = {name: 1.0 + fraction * (2.0 * rng.random() - 1.0)
                for name in _PHYSICAL_FIELDS}
        out.append(replace(p, **{name: getattr(p, name) * mult[name]
                                 for name in _PHYSICAL_FIELDS}))
    return tuple(out)


class BatteryPlant:
    """Battery physics seen by the simulator: SOC-scheduled circuit plus a
    converter that realizes an AC power command as a DC current."""

    def __init__(self, cfg: PlantConfig, seed: int, initial_soc: float,
                 ts: float = battery.TS_CONTROL, c_nom: float = battery.C_NOM_AH):
        table = cfg.parameter_table or TABLE1
        rng = np.random.default_rng([seed, 777])
        self.table = perturbed_table(table, cfg.param_perturbation, rng)
        self.models = tuple(battery.reduce_and_discretize(p, ts) for p in self.table)
        self.ts = ts
        self.c_nom = c_nom
        self.soc = float(initial_soc)
        self.x = np.zeros(2)
        self.last_i = 0.0

    def _model(self):
        return self.models[battery.schedule_index(self.soc)]

    def current_for_power(self, b_ac_kw: float) -> float:
        """DC current whose converter-side power equals the AC command:
        eff * v(i) * i / 1000 = b_ac_kw with v(i) = (C x + E) + Rs' i."""
        m = self._model()
        v0 = float(m.c @ self.x + m.d_1)
        rs = m.d_i
        disc = v0 * v0 + 4.0 * rs * 1000.0 * b_ac_kw / CONVERTER_EFF
        return (-v0 + np.sqrt(max(disc, 0.0))) / (2.0 * rs)

    def apply_power(self, b_cmd_kw: float, rng: np.random.Generator,
                    cfg: PlantConfig, step: int) -> tuple[float, float, float]:
        """Actuate a power set-point; returns (i, terminal voltage, realized AC kW)."""
        b_applied = b_cmd_kw * (1.0 + cfg.actuation_error_frac * rng.standard_normal())
        if cfg.actuation_noise_kw > 0.0:
            b_applied += cfg.actuation_noise_kw * rng.standard_normal()
        i = self.current_for_power(b_applied)
        return self._advance(i, step)

    def apply_current(self, i: float, step: int) -> tuple[float, float, float]:
        return self._advance(i, step)

    def _advance(self, i: float, step: int) -> tuple[float, float, float]:
        m = self._model()
        v = float(m.c @ self.x + m.d_i * i + m.d_1)
        b_real = CONVERTER_EFF * v * i / 1000.0
        self.x = m.a @ self.x + m.b_i * i + m.b_1
        self.soc = self.soc + (self.ts / 3600.0) * i / self.c_nom
        self.last_i = i
        if not 0.0 <= self.soc <= 1.0:
            raise PlantStateError(f"plant SOC {self.soc:.4f} left [0, 1] at step {step}",
                                  step=step)
        return i, v, b_real

    def measure_voltage(self, rng: np.random.Generator, cfg: PlantConfig) -> float:
        """Terminal voltage reading at the start of a step, previous current
        still flowing."""
        m = self._model()
        v = float(m.c @ self.x + m.d_i * self.last_i + m.d_1)
        if cfg.voltage_noise_v > 0.0:
            v += cfg.voltage_noise_v * rng.standard_normal()
        return v


def step_trace(profile_kw: np.ndarray, rng: np.random.Generator | None = None,
               noise_std: float = 0.0, ar: float = 0.9,
               grid: TimeGrid = DEFAULT_GRID) -> np.ndarray:
    """10-second prosumption realization from a daily slot profile: each slot
    value held for 30 steps plus optional AR(1) fast noise."""
    trace = np.repeat(np.asarray(profile_kw, dtype=float), grid.steps_per_slot)
    if noise_std > 0.0 and rng is not None:
        noise = np.empty(grid.n_steps)
        prev = rng.normal(0.0, noise_std / np.sqrt(1 - ar * ar))
        for k in range(grid.n_steps):
            prev = ar * prev + rng.normal(0.0, noise_std)
            noise[k] = prev
        trace = trace + noise
    return trace


@dataclass
class InitState:
    soc: float = 0.5
    kalman: KalmanState | None = None
    last_load: float | None = None


@dataclass
class SimulationRun:
    """Full closed-loop trace of one day."""

    k: np.ndarray
    l_kw: np.ndarray
    b_kw: np.ndarray
    p_kw: np.ndarray               # l_kw + b_kw, exact composition
    soc: np.ndarray                # plant SOC after each step
    soc_ctrl: np.ndarray           # controller-side integrator estimate
    v: np.ndarray
    i_a: np.ndarray
    e_kwh: np.ndarray
    b_setpoint_kw: np.ndarray
    horizon: np.ndarray
    status: list[str]
    active: list[str]
    solve_seconds: np.ndarray
    seed: int
    config: dict
    initial_soc: float = 0.0
    final_soc: float = 0.0
    final_kalman: KalmanState | None = None
    final_last_load: float = 0.0

    def slot_average(self, series: np.ndarray, grid: TimeGrid = DEFAULT_GRID) -> np.ndarray:
        return series.reshape(grid.n_slots, grid.steps_per_slot).mean(axis=1)


def run_day(plan: DispatchPlan, plant_cfg: PlantConfig, init: InitState, *,
            trace_kw: np.ndarray, seed: int = 0,
            rng: np.random.Generator | None = None,
            plant: BatteryPlant | None = None,
            bank: ModelBank | None = None,
            limits: MpcLimits = MpcLimits(),
            grid: TimeGrid = DEFAULT_GRID,
            battery_enabled: bool = True) -> SimulationRun:
    """Execute one day of real-time operation (8640 control steps).

    Per step: previous-interval measurements arrive, the slot set-point and
    window indices are derived, the persistence forecast and dispatch error are
    computed, the Kalman filter is updated from the DC voltage reading, the
    model is scheduled by SOC and the control problem solved, and the first
    current of the law is actuated on the plant.
    """
    trace_kw = np.asarray(trace_kw, dtype=float)
    if trace_kw.shape != (grid.n_steps,):
        raise ValueError(f"trace must have {grid.n_steps} values")
    rng = rng if rng is not None else np.random.default_rng([seed, 1])
    bank = bank if bank is not None else ModelBank()
    plant = plant if plant is not None else BatteryPlant(plant_cfg, seed, init.soc)
    kalman = init.kalman if init.kalman is not None else KalmanState.initial()
    last_load = init.last_load if init.last_load is not None else float(plan.forecast.point[0])
    soc_ctrl = plant.soc
    initial_soc = plant.soc

    n = grid.n_steps
    rec = {name: np.zeros(n) for name in
           ("l_kw", "b_kw", "p_kw", "soc", "soc_ctrl", "v", "i_a", "e_kwh",
            "b_setpoint_kw", "solve_seconds")}
    horizon = np.zeros(n, dtype=int)
    status: list[str] = []
    active: list[str] = []

    slot_sum = 0.0
    slot_count = 0
    prev_sample = 0.0        # measured composite of the previous step

    for k in range(n):
        window = grid.window_of(k)
        if k == window.k_lo:
            slot_sum = 0.0
            slot_count = 0
        elif k > 0:
            slot_sum += prev_sample
            slot_count += 1
        p_avg = slot_sum / slot_count if slot_count else 0.0

        v_meas = plant.measure_voltage(rng, plant_cfg)
        model = bank.voltage_model(soc_ctrl)
        kalman = kalman_update(kalman, model, plant.last_i, v_meas)

        t0 = time.perf_counter()
        telemetry = StepTelemetry(p_avg=p_avg, last_load=last_load, soc=soc_ctrl,
                                  x=kalman.x, v=v_meas)
        problem = build_problem(k, plan, telemetry, bank, limits, grid)
        if battery_enabled:
            decision = solve(problem)
            i_k, v_k, b_k = plant.apply_power(decision.b_setpoint, rng, plant_cfg, k)
            st, act, b_sp = decision.status, decision.active, decision.b_setpoint
        else:
            i_k, v_k, b_k = plant.apply_current(0.0, k)
            st, act, b_sp = "disabled", "-", 0.0
        rec["solve_seconds"][k] = time.perf_counter() - t0

        l_k = trace_kw[k]
        p_k = l_k + b_k
        soc_ctrl = soc_step(soc_ctrl, i_k, ts=grid.step_seconds)

        rec["l_kw"][k] = l_k
        rec["b_kw"][k] = b_k
        rec["p_kw"][k] = p_k
        rec["soc"][k] = plant.soc
        rec["soc_ctrl"][k] = soc_ctrl
        rec["v"][k] = v_k
        rec["i_a"][k] = i_k
        rec["e_kwh"][k] = problem.e_k
        rec["b_setpoint_kw"][k] = b_sp
        horizon[k] = problem.horizon
        status.append(st)
        active.append(act)

        p_meas = p_k + (plant_cfg.power_noise_kw * rng.standard_normal()
                        if plant_cfg.power_noise_kw > 0.0 else 0.0)
        prev_sample = p_meas
        last_load = p_meas - b_k

    return SimulationRun(k=np.arange(n), l_kw=rec["l_kw"], b_kw=rec["b_kw"],
                         p_kw=rec["p_kw"], soc=rec["soc"], soc_ctrl=rec["soc_ctrl"],
                         v=rec["v"], i_a=rec["i_a"], e_kwh=rec["e_kwh"],
                         b_setpoint_kw=rec["b_setpoint_kw"], horizon=horizon,
                         status=status, active=active,
                         solve_seconds=rec["solve_seconds"], seed=seed,
                         config=asdict(plant_cfg), initial_soc=initial_soc,
                         final_soc=plant.soc, final_kalman=kalman,
                         final_last_load=last_load)


# ---------------------------------------------------------------------------
# Tracking metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    max_abs: float

    @staticmethod
    def of(err: np.ndarray) -> "ErrorStats":
        err = np.asarray(err, dtype=float)
        return ErrorStats(rmse=float(np.sqrt(np.mean(err ** 2))),
                          mean=float(np.mean(err)),
                          max_abs=float(np.max(np.abs(err))))


@dataclass(frozen=True)
class TrackingReport:
    dispatch: ErrorStats          # plan vs realized 5-minute GCP averages
    no_dispatch: ErrorStats       # forecast vs realized 5-minute prosumption


def tracking_report(run: SimulationRun, plan: DispatchPlan,
                    forecast: ProsumptionForecast | None = None,
                    grid: TimeGrid = DEFAULT_GRID) -> TrackingReport:
    """Per-slot error statistics in both operating modes."""
    fc = forecast if forecast is not None else plan.forecast
    p_avg = run.slot_average(run.p_kw, grid)
    l_avg = run.slot_average(run.l_kw, grid)
    return TrackingReport(dispatch=ErrorStats.of(plan.p_hat - p_avg),
                          no_dispatch=ErrorStats.of(np.asarray(fc.point) - l_avg))


def format_report(report: TrackingReport, label: str = "") -> str:
    head = f"Tracking error statistics (kW){' - ' + label if label else ''}"
    rows = [head,
            f"{'':14s}{'RMSE':>9s}{'Mean':>9s}{'Max':>9s}",
            f"{'no dispatch':14s}{report.no_dispatch.rmse:9.3f}"
            f"{report.no_dispatch.mean:9.3f}{report.no_dispatch.max_abs:9.3f}",
            f"{'dispatch':14s}{report.dispatch.rmse:9.3f}"
            f"{report.dispatch.mean:9.3f}{report.dispatch.max_abs:9.3f}"]
    return "\n".join(rows)


@dataclass(frozen=True)
class PeakViolation:
    slot: int
    avg_p_kw: float
    excess_kw: float


def peak_shave_check(run: SimulationRun, p_max: float, tol_kw: float = 2.0,
                     grid: TimeGrid = DEFAULT_GRID) -> list[PeakViolation]:
    """Slots whose realized 5-minute average exceeds the cap beyond tolerance."""
    p_avg = run.slot_average(run.p_kw, grid)
    out = []
    for slot in np.nonzero(p_avg > p_max + tol_kw)[0]:
        out.append(PeakViolation(slot=int(slot), avg_p_kw=float(p_avg[slot]),
                                 excess_kw=float(p_avg[slot] - p_max)))
    return out


# ---------------------------------------------------------------------------
# Multi-day operation
# ---------------------------------------------------------------------------


@dataclass
class DayResult:
    day_index: int
    target: TargetDayInfo
    forecast: ProsumptionForecast
    plan: DispatchPlan
    run: SimulationRun
    report: TrackingReport


PLAN_LEAD_SLOTS = 12     # the plan is computed one hour before the day starts


def run_multi_day(days: int, history: list[HistoricalDay],
                  dayahead_cfg: DayAheadConfig, limits: MpcLimits,
                  plant_cfg: PlantConfig, *, seed: int = 0,
                  initial_soc: float = 0.5,
                  shape: SyntheticShape = SyntheticShape(),
                  realization_scale: float = 1.0,
                  radiation_forecast_noise: float = 0.0,
                  bank: ModelBank | None = None,
                  grid: TimeGrid = DEFAULT_GRID,
                  battery_enabled: bool = True) -> list[DayResult]:
    """Chain consecutive days with battery-state continuity.

    Each day's plan is computed one hour before its start, predicting the
    initial stored energy by persistence: the SOC observed at 23:00 (for the
    first day, the SOC the simulation starts from). The realized prosumption is
    a fresh synthetic draw for the target date, optionally scaled to emulate
    systematically biased forecasts.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    bank = bank if bank is not None else ModelBank()
    plant = BatteryPlant(plant_cfg, seed, initial_soc)
    kalman = KalmanState.initial()
    last_load: float | None = None
    soc_at_plan_time = initial_soc

    last = max(history, key=lambda d: (d.year, d.day_of_year))
    results: list[DayResult] = []
    for d in range(days):
        doy = last.day_of_year + 1 + d
        year = last.year + (doy - 1) // 365
        doy = (doy - 1) % 365 + 1
        rng_day = np.random.default_rng([seed, 10_000 + d])
        true_day = synthesize_day(rng_day, year, doy, shape)
        true_profile = true_day.profile * realization_scale
        r_star = true_day.daily_radiation
        if radiation_forecast_noise > 0.0:
            r_star = max(0.0, r_star * (1.0 + radiation_forecast_noise
                                        * rng_day.standard_normal()))
        target = TargetDayInfo(year=year, day_of_year=doy, radiation_forecast=r_star,
                               is_working_day=is_working_dayofyear(doy))
        fc = forecast_day(history, target)
        cfg_d = replace(dayahead_cfg, soe0=soc_at_plan_time * dayahead_cfg.e_nom)
        try:
            plan = plan_day(fc, cfg_d)
        except Exception as exc:
            if hasattr(exc, "add_note"):
                exc.add_note(f"while planning day {d} of the chain")
            raise
        trace = step_trace(true_profile, rng_day, plant_cfg.step_noise_kw,
                           plant_cfg.step_noise_ar, grid)
        run = run_day(plan, plant_cfg, InitState(soc=plant.soc, kalman=kalman,
                                                 last_load=last_load),
                      trace_kw=trace, seed=seed, rng=rng_day, plant=plant,
                      bank=bank, limits=limits, grid=grid,
                      battery_enabled=battery_enabled)
        results.append(DayResult(day_index=d, target=target, forecast=fc,
                                 plan=plan, run=run,
                                 report=tracking_report(run, plan, fc, grid)))
        kalman = run.final_kalman
        last_load = run.final_last_load
        soc_at_plan_time = float(run.soc[(grid.n_slots - PLAN_LEAD_SLOTS)
                                         * grid.steps_per_slot - 1])
    return results


# ---------------------------------------------------------------------------
# Run artifacts
# ---------------------------------------------------------------------------

STEPS_HEADER = "# feederdispatch run v1"
_FMT = "%.17g"


def write_run_artifacts(out_dir, run: SimulationRun, plan: DispatchPlan,
                        report: TrackingReport, config_snapshot: dict | None = None,
                        emit_plots: bool = False,
                        limits: MpcLimits | None = None) -> None:
    """Write the per-step trace, plan, report and config snapshot (plain text)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "steps.csv", "w") as fh:
        fh.write(STEPS_HEADER + "\n")
        fh.write("k,l_kw,b_kw,p_kw,soc,v_v,i_a,e_kwh,horizon,status,active,"
                 "b_setpoint_kw\n")
        for k in range(run.k.size):
            vals = [run.l_kw[k], run.b_kw[k], run.p_kw[k], run.soc[k], run.v[k],
                    run.i_a[k], run.e_kwh[k]]
            fh.write(f"{k}," + ",".join(_FMT % v for v in vals)
                     + f",{run.horizon[k]},{run.status[k]},{run.active[k]},"
                     + (_FMT % run.b_setpoint_kw[k]) + "\n")
    save_plan(out / "plan.csv", plan)
    with open(out / "report.txt", "w") as fh:
        fh.write(format_report(report) + "\n")
    with open(out / "config.json", "w") as fh:
        json.dump(config_snapshot or run.config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if emit_plots:
        write_plot_data(out, run, plan, limits)


def write_plot_data(out_dir, run: SimulationRun, plan: DispatchPlan,
                    limits: MpcLimits | None = None,
                    grid: TimeGrid = DEFAULT_GRID) -> None:
    """Tabular data for the three standard panels: forecast band + offset,
    plan vs realizations, and battery SOC/current/voltage with limits."""
    out = Path(out_dir)
    fc = plan.forecast
    f = plan.offset.f
    with open(out / "forecast_panel.csv", "w") as fh:
        fh.write("# slot,l_hat_kw,member_min_kw,member_max_kw,f_kw,p_hat_kw\n")
        lo = np.asarray(fc.point) - np.asarray(fc.envelope_high)
        hi = np.asarray(fc.point) - np.asarray(fc.envelope_low)
        for i in range(plan.p_hat.size):
            fh.write(f"{i}," + ",".join(_FMT % v for v in
                                        (fc.point[i], lo[i], hi[i], f[i],
                                         plan.p_hat[i])) + "\n")
    with open(out / "tracking_panel.csv", "w") as fh:
        fh.write("# slot,p_hat_kw,p_avg_kw,l_avg_kw\n")
        p_avg = run.slot_average(run.p_kw, grid)
        l_avg = run.slot_average(run.l_kw, grid)
        for i in range(plan.p_hat.size):
            fh.write(f"{i}," + ",".join(_FMT % v for v in
                                        (plan.p_hat[i], p_avg[i], l_avg[i])) + "\n")
    lim = limits or MpcLimits()
    with open(out / "battery_panel.csv", "w") as fh:
        fh.write(f"# limits: i=[{lim.i_min},{lim.i_max}] v=[{lim.v_min},{lim.v_max}]"
                 f" soc=[{lim.soc_min},{lim.soc_max}]\n")
        fh.write("# k,soc,i_a,v_v\n")
        for k in range(run.k.size):
            fh.write(f"{k}," + ",".join(_FMT % v for v in
                                        (run.soc[k], run.i_a[k], run.v[k])) + "\n")
