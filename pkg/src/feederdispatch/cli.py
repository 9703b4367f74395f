"""Command-line front end: dataset synthesis, day-ahead planning, closed-loop
simulation and report formatting.

Exit codes: 0 success, 2 configuration error, 3 infeasible plan, 4 plant abort,
5 solver failure. Set FEEDERDISPATCH_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .battery import ModelBank, load_parameter_table
from .dayahead import (DayAheadConfig, InfeasiblePlanError, load_plan, plan_day,
                       save_plan)
from .forecast import (SyntheticShape, TargetDayInfo, forecast_day,
                       is_working_dayofyear, load_history, save_history,
                       synthesize_history)
from .mpc import MpcLimits
from .sim import (InitState, PlantConfig, PlantStateError, format_report,
                  peak_shave_check, run_day, run_multi_day, step_trace,
                  tracking_report, write_run_artifacts)
from .solver import SolverError
from .timegrid import DEFAULT_GRID

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_PLANT_ABORT = 4
EXIT_SOLVER_FAILURE = 5

log = logging.getLogger("feederdispatch")


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "seed": int,
    "initial_soc": float,
    "dayahead": {
        "soe0_kwh": float, "soe_min_kwh": float, "soe_max_kwh": float,
        "b_min_kw": float, "b_max_kw": float, "p_max_kw": (float, type(None)),
        "eta": float, "e_nom_kwh": float, "soe_backoff_kwh": float,
        "power_backoff_kw": float, "objective": str,
    },
    "mpc": {
        "i_min_a": float, "i_max_a": float, "di_min_a": float, "di_max_a": float,
        "v_min_v": float, "v_max_v": float, "soc_min": float, "soc_max": float,
    },
    "plant": {
        "param_perturbation": float, "voltage_noise_v": float,
        "power_noise_kw": float, "actuation_error_frac": float,
        "actuation_noise_kw": float, "step_noise_kw": float,
        "step_noise_ar": float, "parameter_file": (str, type(None)),
    },
    "paths": {"history": str, "plan": str, "trace": str, "out_dir": str},
}


def _validate(section: dict, schema: dict, where: str) -> None:
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {where}{key!r}")
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            _validate(value, spec, f"{where}{key}.")
        else:
            types = spec if isinstance(spec, tuple) else (spec,)
            if float in types:
                types = types + (int,)
            if not isinstance(value, types) or isinstance(value, bool):
                raise ConfigError(f"config key {where}{key!r} has wrong type "
                                  f"({type(value).__name__})")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    _validate(doc, _SCHEMA, "")
    return doc


def dayahead_config(doc: dict, soe0: float | None = None,
                    p_max: float | None = None) -> DayAheadConfig:
    d = doc.get("dayahead", {})
    cfg = DayAheadConfig(
        soe0=float(d.get("soe0_kwh", soe0 if soe0 is not None else 250.0)),
        soe_min=float(d.get("soe_min_kwh", 50.0)),
        soe_max=float(d.get("soe_max_kwh", 450.0)),
        b_min=float(d.get("b_min_kw", -250.0)),
        b_max=float(d.get("b_max_kw", 250.0)),
        p_max=d.get("p_max_kw"),
        eta=float(d.get("eta", 0.96)),
        e_nom=float(d.get("e_nom_kwh", 500.0)),
        soe_backoff=float(d.get("soe_backoff_kwh", 0.0)),
        power_backoff=float(d.get("power_backoff_kw", 0.0)),
        objective=d.get("objective", "l1"),
    )
    if soe0 is not None:
        cfg = replace(cfg, soe0=soe0)
    if p_max is not None:
        cfg = replace(cfg, p_max=p_max)
    return cfg


def mpc_limits(doc: dict) -> MpcLimits:
    m = doc.get("mpc", {})
    return MpcLimits(i_min=float(m.get("i_min_a", -810.0)),
                     i_max=float(m.get("i_max_a", 810.0)),
                     di_min=float(m.get("di_min_a", -200.0)),
                     di_max=float(m.get("di_max_a", 200.0)),
                     v_min=float(m.get("v_min_v", 530.0)),
                     v_max=float(m.get("v_max_v", 750.0)),
                     soc_min=float(m.get("soc_min", 0.10)),
                     soc_max=float(m.get("soc_max", 0.90)))


def plant_config(doc: dict) -> PlantConfig:
    p = doc.get("plant", {})
    table = None
    if p.get("parameter_file"):
        table = load_parameter_table(p["parameter_file"])
    return PlantConfig(param_perturbation=float(p.get("param_perturbation", 0.05)),
                       voltage_noise_v=float(p.get("voltage_noise_v", 0.1)),
                       power_noise_kw=float(p.get("power_noise_kw", 0.5)),
                       actuation_error_frac=float(p.get("actuation_error_frac", 0.01)),
                       actuation_noise_kw=float(p.get("actuation_noise_kw", 0.5)),
                       step_noise_kw=float(p.get("step_noise_kw", 1.0)),
                       step_noise_ar=float(p.get("step_noise_ar", 0.9)),
                       parameter_table=table)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    days = args.days
    history = synthesize_history(args.seed, days)
    save_history(args.out, history)
    print(f"wrote {days} days to {args.out}")
    return EXIT_OK


def cmd_plan(args) -> int:
    doc = load_config(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    history = load_history(args.history or doc.get("paths", {}).get("history"))
    if args.target_day is not None:
        doy = args.target_day
        year = args.target_year
    else:
        last = max(history, key=lambda d: (d.year, d.day_of_year))
        doy = last.day_of_year % 365 + 1
        year = last.year + (1 if doy == 1 else 0)
    r_star = args.radiation if args.radiation is not None else float(
        np.mean([d.daily_radiation for d in history[-10:]]))
    target = TargetDayInfo(year=year, day_of_year=doy, radiation_forecast=r_star,
                           is_working_day=is_working_dayofyear(doy))
    cfg = dayahead_config(doc, p_max=args.p_max)
    t0 = time.perf_counter()
    fc = forecast_day(history, target)
    plan = plan_day(fc, cfg)
    wall = time.perf_counter() - t0
    save_plan(args.out, plan)
    cert = plan.offset.certificate
    print(f"plan for year {year} day {doy}: feasible, objective {plan.offset.objective:.3f}, "
          f"peak {plan.p_hat.max():.1f} kW, wall time {wall:.2f} s "
          f"({cert.iterations} solver iterations)")
    print(f"wrote {plan.p_hat.size} slots to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    doc = load_config(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    limits = mpc_limits(doc)
    plant_cfg = plant_config(doc)
    out_dir = Path(args.out_dir or doc.get("paths", {}).get("out_dir", "run_out"))
    bank = ModelBank()
    initial_soc = args.initial_soc if args.initial_soc is not None \
        else float(doc.get("initial_soc", 0.5))

    if args.days is not None:
        history = load_history(args.history or doc.get("paths", {}).get("history"))
        cfg = dayahead_config(doc, soe0=0.0, p_max=args.p_max)
        results = run_multi_day(args.days, history, cfg, limits, plant_cfg,
                                seed=seed, initial_soc=initial_soc, bank=bank)
        for res in results:
            day_dir = out_dir / f"day{res.day_index}"
            write_run_artifacts(day_dir, res.run, res.plan, res.report, doc,
                                emit_plots=args.emit_plots, limits=limits)
            print(format_report(res.report, label=f"day {res.day_index}"))
            if cfg.p_max is not None:
                viol = peak_shave_check(res.run, cfg.p_max)
                print(f"peak-shave violations above {cfg.p_max} kW: {len(viol)}")
        focs = [r.run.soc[-1] for r in results]
        print("day-final plant SOC: " + ", ".join(f"{s:.3f}" for s in focs))
        return EXIT_OK

    plan = load_plan(args.plan or doc.get("paths", {}).get("plan"),
                     dayahead_config(doc))
    trace_path = args.trace or doc.get("paths", {}).get("trace")
    if trace_path:
        trace = np.loadtxt(trace_path, comments="#")
        if trace.shape != (DEFAULT_GRID.n_steps,):
            raise ConfigError(f"trace must hold {DEFAULT_GRID.n_steps} values")
    else:
        rng = np.random.default_rng([seed, 3])
        trace = step_trace(np.asarray(plan.forecast.point), rng,
                           plant_cfg.step_noise_kw, plant_cfg.step_noise_ar)
    run = run_day(plan, plant_cfg, InitState(soc=initial_soc), trace_kw=trace,
                  seed=seed, bank=bank, limits=limits,
                  battery_enabled=not args.no_battery)
    report = tracking_report(run, plan)
    write_run_artifacts(out_dir, run, plan, report, doc,
                        emit_plots=args.emit_plots, limits=limits)
    print(format_report(report))
    if args.p_max is not None:
        viol = peak_shave_check(run, args.p_max)
        print(f"peak-shave violations above {args.p_max} kW: {len(viol)}")
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "report.txt"
    if not path.exists():
        raise ConfigError(f"no report at {path}")
    print(path.read_text().rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="feederdispatch",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic historical dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plan", help="compute a day-ahead dispatch plan")
    p.add_argument("--config", default=None)
    p.add_argument("--history", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--target-day", type=int, default=None)
    p.add_argument("--target-year", type=int, default=2016)
    p.add_argument("--radiation", type=float, default=None)
    p.add_argument("--p-max", type=float, default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="closed-loop simulation of one or more days")
    p.add_argument("--config", default=None)
    p.add_argument("--plan", default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--history", default=None)
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--initial-soc", type=float, default=None)
    p.add_argument("--p-max", type=float, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--emit-plots", action="store_true")
    p.add_argument("--no-battery", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="print the report of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FEEDERDISPATCH_LOG", "warning").upper())
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasiblePlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PlantStateError as exc:
        print(f"plant abort at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_PLANT_ABORT
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
