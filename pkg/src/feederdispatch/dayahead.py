"""Day-ahead dispatch planning: the offset profile and the dispatch plan.

The plan committed for the next day is p_hat = point forecast + offset. The
offset is sized so that, propagating the battery state of energy against the
worst realizations inside the forecast envelopes, SOE and power stay within
bounds; it thereby steers the battery back toward a flexible energy level.

The optimization is solved as a linear program over the positive/negative parts
of the two worst-case battery powers K = f + envelope_low and
G = f + envelope_high (charging and discharging are weighted by different
efficiency coefficients, which the split keeps linear). A quadratic-cost
variant (sum of squared offsets) is available behind ``objective="quadratic"``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import solver
from .forecast import ProsumptionForecast

TS_PLAN = 300.0              # s, slot length
E_NOM_KWH = 500.0            # kWh, pack energy capacity
COMPLEMENTARITY_TOL = 1e-6


class InfeasiblePlanError(RuntimeError):
    """Day-ahead problem admits no offset within bounds; reports the first
    violated slot and constraint."""

    def __init__(self, message: str, slot: int | None = None, constraint: str = ""):
        super().__init__(message)
        self.slot = slot
        self.constraint = constraint


@dataclass(frozen=True)
class DayAheadConfig:
    soe0: float                       # kWh, predicted SOE at 00:00
    soe_min: float = 50.0             # kWh
    soe_max: float = 450.0            # kWh
    b_min: float = -250.0             # kW (discharge limit)
    b_max: float = 250.0              # kW (charge limit)
    p_max: float | None = None        # kW, optional peak-shaving cap on the plan
    eta: float = 0.96                 # conversion efficiency
    ts: float = TS_PLAN               # s
    e_nom: float = E_NOM_KWH          # kWh, for SOC <-> SOE conversion
    soe_backoff: float = 0.0          # kWh margin inside the SOE bounds
    power_backoff: float = 0.0        # kW margin inside the power bounds
    objective: str = "l1"             # "l1" | "quadratic"

    def __post_init__(self):
        if not self.soe_min < self.soe_max:
            raise ValueError("soe_min must be < soe_max")
        if not self.b_min < 0.0 < self.b_max:
            raise ValueError("need b_min < 0 < b_max")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if self.objective not in ("l1", "quadratic"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass(frozen=True)
class OffsetPlan:
    f: np.ndarray                 # kW, offset profile
    soe_low: np.ndarray           # kWh, worst-case low SOE trajectory (n+1 points)
    soe_high: np.ndarray          # kWh, worst-case high SOE trajectory
    objective: float
    certificate: solver.SolveCertificate


@dataclass(frozen=True)
class DispatchPlan:
    p_hat: np.ndarray
    forecast: ProsumptionForecast
    offset: OffsetPlan


class _ForecastView:
    """Duck-typed forecast view used where only the three arrays matter."""

    def __init__(self, point, envelope_low, envelope_high):
        self.point = np.asarray(point, dtype=float)
        self.envelope_low = np.asarray(envelope_low, dtype=float)
        self.envelope_high = np.asarray(envelope_high, dtype=float)


def beta_coeffs(cfg: DayAheadConfig) -> tuple[float, float]:
    """Charge/discharge energy coefficients, kWh per kW over one slot.

    Charging stores eta-fold less than drawn; discharging drains 1/eta-fold
    more than delivered.
    """
    base = cfg.ts / 3600.0
    return base * cfg.eta, base / cfg.eta


def worst_case_soe(f: np.ndarray, forecast: ProsumptionForecast,
                   cfg: DayAheadConfig) -> tuple[np.ndarray, np.ndarray]:
    """Propagate the SOE recursion against the envelope extremes.

    Positive battery power contributes beta_plus-weighted energy, negative
    power beta_minus-weighted (signed), starting from soe0 on both trajectories.
    """
    f = np.asarray(f, dtype=float)
    beta_p, beta_m = beta_coeffs(cfg)

    def propagate(b: np.ndarray) -> np.ndarray:
        delta = beta_p * np.maximum(b, 0.0) + beta_m * np.minimum(b, 0.0)
        return cfg.soe0 + np.concatenate([[0.0], np.cumsum(delta)])

    return propagate(f + forecast.envelope_low), propagate(f + forecast.envelope_high)


def _offset_lp(l_hat, env_low, env_high, cfg: DayAheadConfig) -> solver.LinearProgram:
    """Assemble the LP over z = [K+, K-, G+, G-] (all >= 0)."""
    n = l_hat.size
    beta_p, beta_m = beta_coeffs(cfg)
    z = np.zeros((n, n))
    eye = np.eye(n)
    tril = np.tril(np.ones((n, n)))
    b_lo = cfg.b_min + cfg.power_backoff
    b_hi = cfg.b_max - cfg.power_backoff

    # coupling: (K+ - K-) - (G+ - G-) = env_low - env_high
    a_eq = np.hstack([eye, -eye, -eye, eye])
    b_eq = env_low - env_high

    rows = [
        # SOE low >= soe_min:  -(beta_p K+ - beta_m K-) cumulated <= soe0 - soe_min
        np.hstack([-beta_p * tril, beta_m * tril, z, z]),
        # SOE high <= soe_max
        np.hstack([z, z, beta_p * tril, -beta_m * tril]),
        # power bounds on K and G
        np.hstack([eye, -eye, z, z]),
        np.hstack([-eye, eye, z, z]),
        np.hstack([z, z, eye, -eye]),
        np.hstack([z, z, -eye, eye]),
    ]
    rhs = [
        np.full(n, cfg.soe0 - cfg.soe_min - cfg.soe_backoff),
        np.full(n, cfg.soe_max - cfg.soe_backoff - cfg.soe0),
        np.full(n, b_hi),
        np.full(n, -b_lo),
        np.full(n, b_hi),
        np.full(n, -b_lo),
    ]
    if cfg.p_max is not None:
        # plan cap: f + l_hat <= p_max with f = K+ - K- - env_low
        rows.append(np.hstack([eye, -eye, z, z]))
        rhs.append(cfg.p_max - l_hat + env_low)
    return solver.LinearProgram(c=np.ones(4 * n), a_ineq=np.vstack(rows),
                                b_ineq=np.concatenate(rhs), a_eq=a_eq, b_eq=b_eq,
                                lb=np.zeros(4 * n), ub=np.full(4 * n, np.inf))


def _diagnose_infeasibility(l_hat, env_low, env_high, cfg: DayAheadConfig) -> InfeasiblePlanError:
    """Elastic re-solve to locate the first slot whose constraint cannot hold."""
    n = l_hat.size
    p = _offset_lp(l_hat, env_low, env_high, cfg)
    m = p.a_ineq.shape[0]
    a_ineq = np.hstack([p.a_ineq, -np.eye(m)])
    c = np.concatenate([np.zeros(4 * n), np.ones(m)])
    a_eq = np.hstack([p.a_eq, np.zeros((n, m))])
    elastic = solver.LinearProgram(c=c, a_ineq=a_ineq, b_ineq=p.b_ineq,
                                   a_eq=a_eq, b_eq=p.b_eq,
                                   lb=np.concatenate([np.zeros(4 * n), np.zeros(m)]),
                                   ub=np.full(4 * n + m, np.inf))
    sol, cert = solver.solve_lp(elastic)
    if sol is None:
        return InfeasiblePlanError("day-ahead problem infeasible (diagnosis solve failed)")
    slacks = sol.x[4 * n:]
    groups = ["soe_min", "soe_max", "b_max(K)", "b_min(K)", "b_max(G)", "b_min(G)"]
    if cfg.p_max is not None:
        groups.append("p_max")
    worst = int(np.argmax(slacks))
    group, slot = groups[worst // n], worst % n
    first = int(np.argmax(slacks > 1e-9)) if np.any(slacks > 1e-9) else worst
    first_group, first_slot = groups[first // n], first % n
    return InfeasiblePlanError(
        f"day-ahead problem infeasible: first violation at slot {first_slot} "
        f"({first_group}), total bound violation {slacks.sum():.3f}; "
        f"largest single violation {slacks[worst]:.3f} at slot {slot} ({group})",
        slot=first_slot, constraint=first_group)


def _solve_offset_arrays(l_hat, env_low, env_high, cfg: DayAheadConfig) -> OffsetPlan:
    l_hat = np.asarray(l_hat, dtype=float)
    env_low = np.asarray(env_low, dtype=float)
    env_high = np.asarray(env_high, dtype=float)
    n = l_hat.size
    if cfg.objective == "quadratic":
        return _solve_offset_quadratic(l_hat, env_low, env_high, cfg)
    p = _offset_lp(l_hat, env_low, env_high, cfg)
    sol, cert = solver.solve_lp(p)
    if cert.status == "infeasible":
        raise _diagnose_infeasibility(l_hat, env_low, env_high, cfg)
    if cert.status != "optimal":
        raise solver.SolverError("day-ahead LP solve failed")
    kp, km = sol.x[:n], sol.x[n:2 * n]
    gp, gm = sol.x[2 * n:3 * n], sol.x[3 * n:]
    scale = 1.0 + float(np.abs(sol.x).max(initial=0.0))
    comp = max(float(np.max(kp * km, initial=0.0)), float(np.max(gp * gm, initial=0.0)))
    if comp > COMPLEMENTARITY_TOL * scale:
        # the split relaxation came back loose (simultaneous charge/discharge);
        # the underlying nonconvex problem is not represented by this solution
        raise InfeasiblePlanError(
            f"offset solution not physically realizable: positive/negative split "
            f"overlaps by {comp:.2e} (binding SOE ceiling requires dissipation)")
    f = kp - km - env_low
    soe_low, soe_high = worst_case_soe(f, _ForecastView(l_hat, env_low, env_high), cfg)
    return OffsetPlan(f=f, soe_low=soe_low, soe_high=soe_high,
                      objective=cert.objective, certificate=cert)


def _solve_offset_quadratic(l_hat, env_low, env_high, cfg: DayAheadConfig) -> OffsetPlan:
    """min sum f^2 variant: a concave-maximization over [K+, K-, G+] with G-
    eliminated through the coupling equality."""
    n = l_hat.size
    lp = _offset_lp(l_hat, env_low, env_high, cfg)
    # substitution: G- = G+ - (K+ - K-) + env_low - env_high
    sub = np.zeros((4 * n, 3 * n))
    sub[:n, :n] = np.eye(n)
    sub[n:2 * n, n:2 * n] = np.eye(n)
    sub[2 * n:3 * n, 2 * n:] = np.eye(n)
    sub[3 * n:, :n] = -np.eye(n)
    sub[3 * n:, n:2 * n] = np.eye(n)
    sub[3 * n:, 2 * n:] = np.eye(n)
    shift = np.concatenate([np.zeros(3 * n), env_low - env_high])
    # the split direction (1,1,1) is objective-flat, so the variables need
    # explicit ceilings for the interior-point geometry to stay bounded
    env_span = float(max(np.abs(env_low).max(initial=0.0),
                         np.abs(env_high).max(initial=0.0)))
    big = 2.0 * (cfg.b_max - cfg.b_min) + 2.0 * env_span + 100.0
    a_rows = np.vstack([lp.a_ineq @ sub,
                        -sub[:n], -sub[n:2 * n], -sub[2 * n:3 * n], -sub[3 * n:],
                        np.eye(3 * n)])
    b_rows = np.concatenate([lp.b_ineq - lp.a_ineq @ shift,
                             np.zeros(3 * n), -shift[3 * n:],
                             np.full(3 * n, big)])
    # maximize -|f|^2 with f = K+ - K- - env_low (constant term dropped)
    sel = np.zeros((n, 3 * n))
    sel[:, :n] = np.eye(n)
    sel[:, n:2 * n] = -np.eye(n)
    prob = solver.QcqpProblem(c=2.0 * sel.T @ env_low, q=np.zeros((3 * n, 3 * n)),
                              l=np.zeros(3 * n), r=1.0,
                              a_ineq=a_rows, b_ineq=b_rows,
                              q_obj=sel.T @ sel)
    # interior start from a Chebyshev-center LP
    m_rows = a_rows.shape[0]
    cheb = solver.LinearProgram(
        c=np.concatenate([np.zeros(3 * n), [-1.0]]),
        a_ineq=np.hstack([a_rows, np.ones((m_rows, 1))]), b_ineq=b_rows,
        lb=np.concatenate([np.full(3 * n, -np.inf), [0.0]]),
        ub=np.concatenate([np.full(3 * n, np.inf), [1e6]]))
    cheb_sol, cheb_cert = solver.solve_lp(cheb)
    if cheb_cert.status != "optimal" or cheb_sol.x[-1] <= 1e-9:
        raise _diagnose_infeasibility(l_hat, env_low, env_high, cfg)
    sol, cert = solver.solve_qcqp(prob, x0=cheb_sol.x[:3 * n])
    if cert.status == "infeasible":
        raise _diagnose_infeasibility(l_hat, env_low, env_high, cfg)
    if cert.status != "optimal" or cert.kkt_residual > 1e-6:
        raise solver.SolverError("day-ahead quadratic solve failed")
    kp, km = sol.x[:n], sol.x[n:2 * n]
    f = kp - km - env_low
    soe_low, soe_high = worst_case_soe(f, _ForecastView(l_hat, env_low, env_high), cfg)
    # the split relaxation can understate the high trajectory; accept only
    # physically realizable offsets
    if soe_low.min() < cfg.soe_min + cfg.soe_backoff - 1e-6 \
            or soe_high.max() > cfg.soe_max - cfg.soe_backoff + 1e-6:
        raise InfeasiblePlanError(
            "offset solution not physically realizable: worst-case SOE "
            "re-propagation leaves the configured bounds")
    return OffsetPlan(f=f, soe_low=soe_low, soe_high=soe_high,
                      objective=float(f @ f), certificate=cert)


def solve_offset(forecast: ProsumptionForecast, cfg: DayAheadConfig) -> OffsetPlan:
    """Compute the offset profile for a full day's forecast."""
    return _solve_offset_arrays(forecast.point, forecast.envelope_low,
                                forecast.envelope_high, cfg)


def assemble_plan(forecast: ProsumptionForecast, offset: OffsetPlan) -> DispatchPlan:
    """Element-wise plan p_hat = point + offset, keeping provenance."""
    if forecast.point.shape != offset.f.shape:
        raise ValueError("forecast and offset lengths differ")
    return DispatchPlan(p_hat=forecast.point + offset.f, forecast=forecast, offset=offset)


def plan_day(forecast: ProsumptionForecast, cfg: DayAheadConfig) -> DispatchPlan:
    return assemble_plan(forecast, solve_offset(forecast, cfg))


# ---------------------------------------------------------------------------
# Plan files
# ---------------------------------------------------------------------------
#
# 288 CSV rows: slot, p_hat_kw, f_kw, l_hat_kw, env_low_kw, env_high_kw
# preceded by '#'-prefixed header lines.

PLAN_HEADER = "# feederdispatch plan v1"
_PLAN_COLUMNS = "# columns: slot,p_hat_kw,f_kw,l_hat_kw,env_low_kw,env_high_kw"


def save_plan(path, plan: DispatchPlan) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(PLAN_HEADER + "\n")
        fh.write(_PLAN_COLUMNS + "\n")
        w = csv.writer(fh)
        fc = plan.forecast
        for i in range(plan.p_hat.size):
            w.writerow([i] + [repr(float(v)) for v in
                              (plan.p_hat[i], plan.offset.f[i], fc.point[i],
                               fc.envelope_low[i], fc.envelope_high[i])])


def load_plan(path, cfg: DayAheadConfig | None = None) -> DispatchPlan:
    """Rebuild a DispatchPlan from a plan file (SOE trajectories re-propagated
    when a config is supplied, zero otherwise)."""
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            rows.append(line.strip().split(","))
    data = np.array([[float(v) for v in row] for row in rows])
    if data.shape[1] != 6:
        raise ValueError(f"{path}: expected 6 columns per plan row")
    order = np.argsort(data[:, 0])
    data = data[order]
    view = _ForecastView(data[:, 3], data[:, 4], data[:, 5])
    f = data[:, 2]
    if cfg is not None:
        soe_low, soe_high = worst_case_soe(f, view, cfg)
    else:
        soe_low = soe_high = np.zeros(f.size + 1)
    offset = OffsetPlan(f=f, soe_low=soe_low, soe_high=soe_high,
                        objective=np.nan,
                        certificate=solver.SolveCertificate(status="optimal"))
    return DispatchPlan(p_hat=data[:, 1], forecast=view, offset=offset)
