"""Shrinking-horizon model predictive control of the battery current.

Every 10 seconds the controller computes the energy still owed to the current
5-minute slot of the dispatch plan and solves a convex program for the DC
current trajectory up to the slot end: maximize the summed current subject to
the predicted AC energy throughput staying below the energy target, plus
current magnitude/rate, voltage-trajectory and SOC-trajectory limits. Only the
first component is actuated; the next cycle re-solves with fresh measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import solver
from .battery import DiscreteStateSpace, ModelBank, TransitionMatrices
from .dayahead import DispatchPlan
from .timegrid import TimeGrid, DEFAULT_GRID
from .forecast import short_term_predict

ALPHA = 10.0 / 3600.0 * 0.98   # kWh per kW of DC power over one step, incl. converter loss
KKT_ACCEPT = 1e-6

STATUS_SOLVED = "solved"
STATUS_CLIPPED = "infeasible-clipped"
STATUS_FAILURE = "solver-failure"


@dataclass(frozen=True)
class MpcLimits:
    i_min: float = -810.0      # A (1C discharge)
    i_max: float = 810.0       # A
    di_min: float = -200.0     # A per step
    di_max: float = 200.0
    v_min: float = 530.0       # V
    v_max: float = 750.0
    soc_min: float = 0.10
    soc_max: float = 0.90

    def __post_init__(self):
        if not self.i_min < 0.0 < self.i_max:
            raise ValueError("need i_min < 0 < i_max")
        if not self.v_min < self.v_max:
            raise ValueError("need v_min < v_max")
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if not self.di_min < 0.0 < self.di_max:
            raise ValueError("need di_min < 0 < di_max")


@dataclass(frozen=True)
class StepTelemetry:
    """Measurements available to the controller at the start of a step."""

    p_avg: float               # kW, average composite GCP power so far in the slot
    last_load: float           # kW, prosumption of the previous step
    soc: float                 # controller-side SOC estimate
    x: np.ndarray              # voltage-model state estimate (from the Kalman filter)
    v: float                   # V, measured DC voltage


@dataclass
class MpcProblem:
    horizon: int
    e_k: float                     # kWh energy target for the rest of the slot
    phi_v: np.ndarray
    psi_v_i: np.ndarray
    psi_v_1: np.ndarray
    phi_soc: np.ndarray
    psi_soc_i: np.ndarray
    x_k: np.ndarray
    soc_k: float
    v_k: float                     # measured voltage, used for set-point conversion
    limits: MpcLimits
    alpha: float = ALPHA
    _a_ineq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.horizon <= 30:
            raise ValueError("horizon must be in 1..30")
        sym = 0.5 * (self.psi_v_i + self.psi_v_i.T)
        shift = 1e-9 * max(1.0, float(np.abs(sym).max()))
        try:
            np.linalg.cholesky(sym + shift * np.eye(self.horizon))
        except np.linalg.LinAlgError:
            w_min = float(np.linalg.eigvalsh(sym).min())
            raise ValueError(f"psi_v_i symmetric part not PSD (min eig {w_min:.3e})")
        self._a_ineq = _stack_constraints(self.psi_v_i, self.psi_soc_i, self.horizon)


def _diff_matrix(h: int) -> np.ndarray:
    """First-difference operator: row j computes i[j+1] - i[j]."""
    d = np.zeros((max(h - 1, 0), h))
    for j in range(h - 1):
        d[j, j] = -1.0
        d[j, j + 1] = 1.0
    return d


def _stack_constraints(psi_v, psi_soc, h: int) -> np.ndarray:
    eye = np.eye(h)
    d = _diff_matrix(h)
    return np.vstack([eye, -eye, d, -d, psi_v, -psi_v, psi_soc, -psi_soc])


def dispatch_error(p_star: float, p_plus: float) -> float:
    """Energy gap (kWh) between the slot's committed average power and its
    expected realization; negative means the battery must discharge."""
    return (300.0 / 3600.0) * (p_star - p_plus)


def expected_average(window, k: int, p_k: float, short_term: np.ndarray) -> float:
    """Expected slot-average composite power: observed part plus the short-term
    prosumption predictions for the remaining steps."""
    short_term = np.asarray(short_term, dtype=float)
    expected = window.k_hi - k + 1
    if short_term.size != expected:
        raise ValueError(f"short_term must have {expected} values, got {short_term.size}")
    return ((k - window.k_lo) * p_k + float(short_term.sum())) / 30.0


def build_problem(k: int, plan: DispatchPlan, telemetry: StepTelemetry,
                  bank: ModelBank, limits: MpcLimits,
                  grid: TimeGrid = DEFAULT_GRID) -> MpcProblem:
    """Assemble the step-k control problem from the plan and fresh telemetry."""
    window = grid.window_of(k)
    horizon = window.k_hi - k + 1
    p_star = float(plan.p_hat[window.slot])
    p_plus = expected_average(window, k, telemetry.p_avg,
                              short_term_predict(telemetry.last_load, horizon))
    e_k = dispatch_error(p_star, p_plus)
    vm = bank.voltage_model(telemetry.soc)
    tv = bank.transitions(vm, horizon)
    ts = bank.transitions(bank.soc_model, horizon)
    return MpcProblem(horizon=horizon, e_k=e_k,
                      phi_v=tv.phi, psi_v_i=tv.psi_i, psi_v_1=tv.psi_1,
                      phi_soc=ts.phi, psi_soc_i=ts.psi_i,
                      x_k=np.asarray(telemetry.x, dtype=float), soc_k=telemetry.soc,
                      v_k=telemetry.v, limits=limits)


@dataclass(frozen=True)
class ControlDecision:
    i_traj: np.ndarray
    i_first: float
    b_setpoint: float          # kW
    status: str
    active: str = ""           # active constraint groups at the optimum
    kkt_residual: float = np.nan
    iterations: int = 0

    def __post_init__(self):
        if self.i_traj.size and self.i_first != self.i_traj[0]:
            raise ValueError("i_first must equal i_traj[0]")


def to_power_setpoint(i_first: float, v_k: float) -> float:
    """Real-power set-point (kW) for the converter: measured voltage times the
    first current of the control law."""
    return v_k * i_first / 1000.0


def _rhs(p: MpcProblem) -> np.ndarray:
    h = p.horizon
    lim = p.limits
    v_free = p.phi_v @ p.x_k + p.psi_v_1 @ np.ones(h)
    soc_free = (p.phi_soc * p.soc_k).ravel()
    ones_r = np.ones(max(h - 1, 0))
    return np.concatenate([
        np.full(h, lim.i_max), np.full(h, -lim.i_min),
        lim.di_max * ones_r, -lim.di_min * ones_r,
        np.full(h, lim.v_max) - v_free, v_free - np.full(h, lim.v_min),
        np.full(h, lim.soc_max) - soc_free, soc_free - np.full(h, lim.soc_min),
    ])


def _throughput_terms(p: MpcProblem) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic-constraint (q, l) of the AC energy throughput in kWh.

    Voltage-current products are V*A = W; the 1e-3 factor brings them to kW
    before the per-step kWh conversion in alpha.
    """
    scale = p.alpha / 1000.0
    q = scale * 0.5 * (p.psi_v_i + p.psi_v_i.T)
    l = scale * (p.phi_v @ p.x_k + p.psi_v_1 @ np.ones(p.horizon))
    return q, l


def _active_groups(p: MpcProblem, x: np.ndarray, fq: float) -> str:
    names = ("box", "box", "rate", "rate", "v", "v", "soc", "soc")
    h = p.horizon
    sizes = (h, h, h - 1, h - 1, h, h, h, h)
    slack = _rhs(p) - p._a_ineq @ x
    active = []
    if abs(fq) < 1e-6 * (1.0 + abs(p.e_k)):
        active.append("throughput")
    pos = 0
    seen = set(active)
    for name, size in zip(names, sizes):
        if size and float(slack[pos:pos + size].min()) < 1e-6 and name not in seen:
            active.append(name)
            seen.add(name)
        pos += size
    return ",".join(active) if active else "-"


def _warm_start(prob: solver.QcqpProblem, h: int) -> np.ndarray | None:
    """Strictly feasible start on the uniform-current ray (rate rows are zero
    there); needed whenever the zero current does not satisfy the throughput
    constraint strictly, i.e. for non-positive energy targets."""
    ones = np.ones(h)
    q1 = float(ones @ prob.q_sym @ ones)
    l1 = float(prob.l @ ones)
    if q1 <= 0.0 or l1 <= 0.0:
        return None
    target = prob.r - 0.05 * (1.0 + abs(prob.r))
    disc = l1 * l1 + 4.0 * q1 * target
    c = (-l1 + np.sqrt(disc)) / (2.0 * q1) if disc >= 0.0 else -l1 / (2.0 * q1)
    x0 = c * ones
    if prob.f_quad(x0) < 0.0 and np.all(prob.b_ineq - prob.a_ineq @ x0 > 0.0):
        return x0
    return None


def solve(p: MpcProblem) -> ControlDecision:
    """Solve the control problem; on infeasibility the throughput constraint is
    dropped first (closest achievable energy), then the box alone decides."""
    q, l = _throughput_terms(p)
    prob = solver.QcqpProblem(c=np.ones(p.horizon), q=q, l=l, r=p.e_k,
                              a_ineq=p._a_ineq, b_ineq=_rhs(p))
    x0 = _warm_start(prob, p.horizon) if p.e_k <= 1e-3 else None
    sol, cert = solver.solve_qcqp(prob, x0=x0)
    if cert.status == "optimal" and cert.kkt_residual <= KKT_ACCEPT:
        i_traj = sol.x
        return ControlDecision(i_traj=i_traj, i_first=float(i_traj[0]),
                               b_setpoint=to_power_setpoint(float(i_traj[0]), p.v_k),
                               status=STATUS_SOLVED,
                               active=_active_groups(p, i_traj, prob.f_quad(i_traj)),
                               kkt_residual=cert.kkt_residual,
                               iterations=cert.iterations)
    if cert.status == "infeasible":
        i_traj, ok = _closest_feasible(p, q, l)
        status = STATUS_CLIPPED if ok else STATUS_FAILURE
        i_first = float(i_traj[0])
        return ControlDecision(i_traj=i_traj, i_first=i_first,
                               b_setpoint=to_power_setpoint(i_first, p.v_k),
                               status=status, active="-",
                               iterations=cert.iterations)
    zero = np.zeros(p.horizon)
    return ControlDecision(i_traj=zero, i_first=0.0, b_setpoint=0.0,
                           status=STATUS_FAILURE, active="-",
                           iterations=cert.iterations)


def _closest_feasible(p: MpcProblem, q: np.ndarray, l: np.ndarray) -> tuple[np.ndarray, bool]:
    """Throughput constraint dropped: minimize the energy throughput subject to
    the linear constraints (the infeasible case is always a too-negative energy
    target, so the minimum-throughput point is the closest achievable one)."""
    h = p.horizon
    # epigraph variable t bounds the throughput from above
    q_aug = np.zeros((h + 1, h + 1))
    q_aug[:h, :h] = q
    l_aug = np.concatenate([l, [-1.0]])
    a_aug = np.hstack([p._a_ineq, np.zeros((p._a_ineq.shape[0], 1))])
    prob = solver.QcqpProblem(c=np.concatenate([np.zeros(h), [-1.0]]),
                              q=q_aug, l=l_aug, r=0.0,
                              a_ineq=a_aug, b_ineq=_rhs(p))
    x0 = np.zeros(h + 1)
    x0[h] = 1.0
    sol, cert = solver.solve_qcqp(prob, x0=x0)
    if cert.status == "optimal":
        return sol.x[:h], True
    return np.zeros(h), False
