"""Convex optimization kernels: a dense LP solver and a small QCQP solver.

The LP side (day-ahead problem, ~1000 variables, solved once per day) wraps the
HiGHS backend of :func:`scipy.optimize.linprog`. The QCQP side (real-time MPC,
<= 30 variables, solved every 10 seconds) is a log-barrier interior-point method
specialized to the class "linear objective, one convex quadratic inequality,
linear inequalities". Both return a certificate whose KKT residual is computed
by the same public evaluators used in the test suite.

Conventions: LPs minimize, QCQPs maximize. All solves are deterministic for
identical inputs (fixed iteration schedules, no randomized pivoting).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, nnls

LP_ITERATION_CAP = 200
QCQP_ITERATION_CAP = 100
FEAS_TOL = 1e-8          # absolute feasibility
GAP_TOL = 1e-8           # relative duality gap driven below this
PSD_EIG_TOL = -1e-9


class SolverError(Exception):
    """Numerical failure inside a solve (iteration cap, singular KKT system)."""


@dataclass
class SolveCertificate:
    status: str                 # "optimal" | "infeasible" | "failure"
    objective: float = np.nan
    kkt_residual: float = np.nan
    iterations: int = 0
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# Linear programming
# ---------------------------------------------------------------------------


@dataclass
class LinearProgram:
    """min c'x  s.t.  a_ineq x <= b_ineq,  a_eq x = b_eq,  lb <= x <= ub."""

    c: np.ndarray
    a_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        for name in ("a_ineq", "a_eq"):
            a = getattr(self, name)
            if a is not None:
                a = np.atleast_2d(np.asarray(a, dtype=float))
                setattr(self, name, a)
                if a.shape[1] != n:
                    raise ValueError(f"{name} has {a.shape[1]} columns, expected {n}")
        if (self.a_ineq is None) != (self.b_ineq is None):
            raise ValueError("a_ineq and b_ineq must be given together")
        if (self.a_eq is None) != (self.b_eq is None):
            raise ValueError("a_eq and b_eq must be given together")
        if self.b_ineq is not None:
            self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()
            if self.b_ineq.size != self.a_ineq.shape[0]:
                raise ValueError("b_ineq length mismatch")
        if self.b_eq is not None:
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if self.b_eq.size != self.a_eq.shape[0]:
                raise ValueError("b_eq length mismatch")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound length mismatch")


@dataclass
class LpSolution:
    x: np.ndarray
    dual_ineq: np.ndarray       # >= 0, for a_ineq x <= b_ineq
    dual_eq: np.ndarray
    dual_lb: np.ndarray         # >= 0, for x >= lb
    dual_ub: np.ndarray         # >= 0, for x <= ub


def lp_kkt_residual(p: LinearProgram, sol: LpSolution) -> float:
    """Relative KKT residual of an LP primal/dual pair, recomputed from scratch."""
    x = sol.x
    n = x.size
    stat = p.c.copy()
    comp = 0.0
    primal = 0.0
    dual = 0.0
    if p.a_ineq is not None:
        slack = p.b_ineq - p.a_ineq @ x
        stat += p.a_ineq.T @ sol.dual_ineq
        primal = max(primal, float(np.max(-slack, initial=0.0)))
        dual = max(dual, float(np.max(-sol.dual_ineq, initial=0.0)))
        comp = max(comp, float(np.max(np.abs(sol.dual_ineq * slack), initial=0.0)))
    if p.a_eq is not None:
        stat += p.a_eq.T @ sol.dual_eq
        primal = max(primal, float(np.max(np.abs(p.a_eq @ x - p.b_eq), initial=0.0)))
    lb_f = np.where(np.isfinite(p.lb), p.lb, 0.0)
    ub_f = np.where(np.isfinite(p.ub), p.ub, 0.0)
    slack_lb = np.where(np.isfinite(p.lb), x - lb_f, np.inf)
    slack_ub = np.where(np.isfinite(p.ub), ub_f - x, np.inf)
    stat += -sol.dual_lb + sol.dual_ub
    primal = max(primal, float(np.max(-np.minimum(slack_lb, slack_ub), initial=0.0)))
    dual = max(dual, float(np.max(-sol.dual_lb, initial=0.0)),
               float(np.max(-sol.dual_ub, initial=0.0)))
    with np.errstate(invalid="ignore"):
        comp_lb = np.where(np.isfinite(slack_lb), np.abs(sol.dual_lb * slack_lb), 0.0)
        comp_ub = np.where(np.isfinite(slack_ub), np.abs(sol.dual_ub * slack_ub), 0.0)
    comp = max(comp, float(np.max(comp_lb, initial=0.0)), float(np.max(comp_ub, initial=0.0)))
    obj_scale = 1.0 + abs(float(p.c @ x))
    c_scale = 1.0 + float(np.max(np.abs(p.c), initial=0.0))
    return max(float(np.max(np.abs(stat))) / c_scale, primal / obj_scale,
               dual / c_scale, comp / obj_scale)


def solve_lp(p: LinearProgram) -> tuple[LpSolution | None, SolveCertificate]:
    """Solve an LP; infeasibility is certified by a phase-1 positive optimum."""
    t0 = time.perf_counter()
    bounds = list(zip(p.lb, p.ub))
    res = linprog(p.c, A_ub=p.a_ineq, b_ub=p.b_ineq, A_eq=p.a_eq, b_eq=p.b_eq,
                  bounds=bounds, method="highs",
                  options={"maxiter": max(LP_ITERATION_CAP * 100, 10000)})
    wall = time.perf_counter() - t0
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        # confirm with an elastic phase-1: positive optimum certifies infeasibility
        viol = _phase1_violation(p)
        status = "infeasible" if viol > FEAS_TOL else "failure"
        return None, SolveCertificate(status=status, objective=viol,
                                      kkt_residual=np.nan, iterations=nit, wall_time=wall)
    if res.status != 0:
        return None, SolveCertificate(status="failure", iterations=nit, wall_time=wall)
    x = np.asarray(res.x, dtype=float)
    # scipy marginals are d(objective)/d(rhs); convert to nonnegative multipliers.
    m_in = p.a_ineq.shape[0] if p.a_ineq is not None else 0
    m_eq = p.a_eq.shape[0] if p.a_eq is not None else 0
    dual_ineq = -np.asarray(res.ineqlin.marginals) if m_in else np.zeros(0)
    dual_eq = -np.asarray(res.eqlin.marginals) if m_eq else np.zeros(0)
    dual_lb = np.asarray(res.lower.marginals)
    dual_ub = -np.asarray(res.upper.marginals)
    sol = LpSolution(x=x, dual_ineq=np.maximum(dual_ineq, 0.0), dual_eq=dual_eq,
                     dual_lb=np.maximum(dual_lb, 0.0), dual_ub=np.maximum(dual_ub, 0.0))
    cert = SolveCertificate(status="optimal", objective=float(p.c @ x),
                            kkt_residual=lp_kkt_residual(p, sol),
                            iterations=nit, wall_time=wall)
    return sol, cert


def _phase1_violation(p: LinearProgram) -> float:
    """Minimum total constraint violation with bounds kept hard (elastic LP)."""
    n = p.c.size
    m_in = p.a_ineq.shape[0] if p.a_ineq is not None else 0
    m_eq = p.a_eq.shape[0] if p.a_eq is not None else 0
    n_s = m_in + m_eq
    if n_s == 0:
        return 0.0
    c = np.concatenate([np.zeros(n), np.ones(n_s)])
    rows = []
    rhs = []
    if m_in:
        a = np.hstack([p.a_ineq, -np.eye(m_in, n_s)])
        rows.append(a)
        rhs.append(p.b_ineq)
    if m_eq:
        s_eq = np.zeros((m_eq, n_s))
        s_eq[:, m_in:] = np.eye(m_eq)
        rows.append(np.hstack([p.a_eq, -s_eq]))
        rhs.append(p.b_eq)
        rows.append(np.hstack([-p.a_eq, -s_eq]))
        rhs.append(-p.b_eq)
    a_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    lb = np.concatenate([p.lb, np.zeros(n_s)])
    ub = np.concatenate([p.ub, np.full(n_s, np.inf)])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=list(zip(lb, ub)), method="highs")
    if res.status != 0:
        return np.inf
    return float(res.fun)


# ---------------------------------------------------------------------------
# QCQP: maximize c'x  s.t.  x'(sym q)x + l'x <= r,  a_ineq x <= b_ineq
# ---------------------------------------------------------------------------


@dataclass
class QcqpProblem:
    """maximize c'x - x'(q_obj)x  s.t.  x'(sym q)x + l'x <= r,  a_ineq x <= b_ineq.

    ``q_obj`` is an optional PSD concavity term of the objective (None for the
    plain linear-objective class used by the controller).
    """

    c: np.ndarray
    q: np.ndarray
    l: np.ndarray
    r: float
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    q_obj: np.ndarray | None = None
    q_sym: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.q = np.asarray(self.q, dtype=float).reshape(n, n)
        self.l = np.asarray(self.l, dtype=float).ravel()
        if self.l.size != n:
            raise ValueError("l length mismatch")
        self.a_ineq = np.atleast_2d(np.asarray(self.a_ineq, dtype=float))
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()
        if self.a_ineq.shape[1] != n or self.a_ineq.shape[0] != self.b_ineq.size:
            raise ValueError("inequality system dimension mismatch")
        self.q_sym = 0.5 * (self.q + self.q.T)
        w_min = float(np.linalg.eigvalsh(self.q_sym).min()) if n else 0.0
        if w_min < PSD_EIG_TOL * max(1.0, float(np.abs(self.q_sym).max(initial=0.0))):
            raise ValueError(f"quadratic constraint not PSD (min eigenvalue {w_min:.3e})")
        if self.q_obj is not None:
            self.q_obj = 0.5 * (np.asarray(self.q_obj, dtype=float).reshape(n, n)
                                + np.asarray(self.q_obj, dtype=float).reshape(n, n).T)
            w_min = float(np.linalg.eigvalsh(self.q_obj).min())
            if w_min < PSD_EIG_TOL * max(1.0, float(np.abs(self.q_obj).max(initial=0.0))):
                raise ValueError("objective curvature q_obj must be PSD")

    def f_quad(self, x: np.ndarray) -> float:
        return float(x @ self.q_sym @ x + self.l @ x - self.r)

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x)
        if self.q_obj is not None:
            val -= float(x @ self.q_obj @ x)
        return val

    def objective_gradient(self, x: np.ndarray) -> np.ndarray:
        if self.q_obj is None:
            return self.c
        return self.c - 2.0 * self.q_obj @ x


@dataclass
class QcqpSolution:
    x: np.ndarray
    dual_quad: float
    dual_ineq: np.ndarray


def qcqp_kkt_residual(p: QcqpProblem, sol: QcqpSolution) -> float:
    """Relative KKT residual for the maximization QCQP, recomputed from scratch."""
    x = sol.x
    fq = p.f_quad(x)
    slack = p.b_ineq - p.a_ineq @ x
    stat = -p.objective_gradient(x) + sol.dual_quad * (2.0 * p.q_sym @ x + p.l) \
        + p.a_ineq.T @ sol.dual_ineq
    obj_scale = 1.0 + abs(p.objective(x))
    c_scale = 1.0 + float(np.max(np.abs(p.c), initial=0.0))
    primal = max(fq, float(np.max(-slack, initial=0.0)), 0.0)
    dual = max(0.0, -sol.dual_quad, float(np.max(-sol.dual_ineq, initial=0.0)))
    comp = max(abs(sol.dual_quad * fq),
               float(np.max(np.abs(sol.dual_ineq * slack), initial=0.0)))
    return max(float(np.max(np.abs(stat), initial=0.0)) / c_scale,
               primal / obj_scale, dual / c_scale, comp / obj_scale)


def _newton_center(p: QcqpProblem, x: np.ndarray, t: float, iter_budget: int):
    """Damped Newton minimization of the barrier at parameter t.

    Returns (x, used, centered); the duality-gap bound m/t is only valid at a
    centered point, so callers must not trust it when ``centered`` is False.
    Step length 1/(1+lambda) in the damped phase (self-concordance guarantees
    descent without a merit-function search); full steps near the center. A
    halving loop only guards strict feasibility against rounding.
    """
    a, b = p.a_ineq, p.b_ineq
    used = 0
    centered = False
    for _ in range(iter_budget):
        fq = p.f_quad(x)
        slack = b - a @ x
        gq = 2.0 * p.q_sym @ x + p.l
        inv_f = 1.0 / (-fq)
        inv_s = 1.0 / slack
        grad = -t * p.objective_gradient(x) + gq * inv_f + a.T @ inv_s
        hess = (2.0 * p.q_sym) * inv_f + np.outer(gq, gq) * inv_f**2 \
            + (a * inv_s[:, None]**2).T @ a
        if p.q_obj is not None:
            hess = hess + (2.0 * t) * p.q_obj
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            hess = hess + 1e-10 * np.eye(x.size) * max(1.0, np.abs(hess).max())
            step = -np.linalg.solve(hess, grad)
        used += 1
        decrement = float(-grad @ step)
        if not np.isfinite(decrement) or decrement < 0.0:
            # numerical breakdown of the Newton system; retry regularized once
            hess = hess + 1e-8 * np.eye(x.size) * max(1.0, np.abs(hess).max())
            step = -np.linalg.solve(hess, grad)
            decrement = float(-grad @ step)
            if not np.isfinite(decrement) or decrement < 0.0:
                break
        if decrement <= 2e-9:
            centered = True
            break
        # consume at most 90% of any slack per step: full plunges toward a
        # boundary poison the next Newton system's conditioning
        alpha = min(1.0, _max_step(fq, gq, p.q_sym, slack, a, step))
        phi0 = t * (-p.objective(x)) - np.log(-fq) - float(np.sum(np.log(slack)))
        ok = False
        for _ in range(40):
            x_new = x + alpha * step
            fq_new = p.f_quad(x_new)
            slack_new = b - a @ x_new
            if fq_new < 0.0 and np.all(slack_new > 0.0):
                phi = t * (-p.objective(x_new)) - np.log(-fq_new) \
                    - float(np.sum(np.log(slack_new)))
                if phi <= phi0 - 0.25 * alpha * decrement:
                    ok = True
                    break
            alpha *= 0.5
        if not ok:
            break
        x = x_new
    return x, used, centered


def _max_step(fq, gq, q_sym, slack, a, step, consume: float = 0.99):
    """Largest alpha consuming at most ``consume`` of each constraint slack."""
    d = a @ step
    pos = d > 0.0
    alpha = consume * float(np.min(slack[pos] / d[pos])) if np.any(pos) else np.inf
    qd = float(step @ q_sym @ step)
    gd = float(gq @ step)
    fq_room = consume * fq          # fq < 0: leave (1-consume) of the slack
    if qd > 1e-300:
        alpha_q = (-gd + np.sqrt(max(gd * gd - 4.0 * qd * fq_room, 0.0))) / (2.0 * qd)
        if alpha_q > 0.0:
            alpha = min(alpha, alpha_q)
    elif gd > 0.0:
        alpha = min(alpha, -fq_room / gd)
    return alpha


def _strictly_feasible(p: QcqpProblem, x: np.ndarray, margin: float = 0.0) -> bool:
    return p.f_quad(x) < -margin and bool(np.all(p.b_ineq - p.a_ineq @ x > margin))


def _phase1(p: QcqpProblem, iterations: list[int]) -> np.ndarray | None:
    """Find a strictly feasible point by minimizing the max violation s,
    exiting as soon as some iterate has s < 0."""
    n = p.c.size
    x = np.zeros(n)
    s0 = max(p.f_quad(x), float(np.max(p.a_ineq @ x - p.b_ineq, initial=-1.0))) + 1.0
    # augmented problem over z = (x, s): constraints f_i(x) - s < 0
    z = np.concatenate([x, [s0]])
    m = p.b_ineq.size + 1
    a_aug = np.hstack([p.a_ineq, -np.ones((p.b_ineq.size, 1))])
    q_aug = np.zeros((n + 1, n + 1))
    q_aug[:n, :n] = 2.0 * p.q_sym
    e_s = np.zeros(n + 1)
    e_s[n] = 1.0
    t = 1.0
    scale = 1.0 + abs(s0)
    for _ in range(40):
        for _ in range(QCQP_ITERATION_CAP):
            xx, s = z[:n], z[n]
            fq = p.f_quad(xx) - s
            slack = p.b_ineq - p.a_ineq @ xx + s
            if fq >= 0 or np.any(slack <= 0):
                return None
            gq = np.concatenate([2.0 * p.q_sym @ xx + p.l, [-1.0]])
            inv_f = 1.0 / (-fq)
            inv_s = 1.0 / slack
            grad = t * e_s + gq * inv_f + a_aug.T @ inv_s
            hess = q_aug * inv_f + np.outer(gq, gq) * inv_f**2 \
                + (a_aug * inv_s[:, None]**2).T @ a_aug
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                hess = hess + 1e-10 * np.eye(n + 1) * max(1.0, np.abs(hess).max())
                step = -np.linalg.solve(hess, grad)
            iterations[0] += 1
            decrement = float(-grad @ step)
            if decrement <= 2e-9:
                break
            lam = np.sqrt(decrement)
            alpha = 1.0 if lam < 0.25 else 1.0 / (1.0 + lam)
            for _ in range(60):
                z_new = z + alpha * step
                xn, sn = z_new[:n], z_new[n]
                if (p.f_quad(xn) - sn < 0) and np.all(p.b_ineq - p.a_ineq @ xn + sn > 0):
                    break
                alpha *= 0.5
            else:
                break
            z = z_new
            if z[n] < -1e-6 * scale:
                return z[:n]
        if z[n] < -1e-9 * scale:
            return z[:n]
        if m / t < 1e-12 * scale:
            break
        t *= 30.0
    return z[:n] if z[n] < 0.0 else None


def solve_qcqp(p: QcqpProblem,
               x0: np.ndarray | None = None) -> tuple[QcqpSolution | None, SolveCertificate]:
    """Barrier interior-point solve of the maximization QCQP.

    ``x0`` optionally supplies a strictly feasible starting point; the optimum
    does not depend on it (convexity), only the path taken.
    """
    t_start = time.perf_counter()
    n = p.c.size
    m = p.b_ineq.size + 1
    iterations = [0]

    # objective scaling for conditioning and scale-invariance of the path
    c_norm = float(np.max(np.abs(p.c), initial=0.0))
    if p.q_obj is not None:
        c_norm = max(c_norm, float(np.abs(p.q_obj).max(initial=0.0)))
    c_scaled = p.c / c_norm if c_norm > 0 else p.c

    x = None
    if x0 is not None and _strictly_feasible(p, np.asarray(x0, dtype=float)):
        x = np.asarray(x0, dtype=float).copy()
    elif _strictly_feasible(p, np.zeros(n)):
        x = np.zeros(n)
    else:
        x = _phase1(p, iterations)
        if x is None:
            wall = time.perf_counter() - t_start
            return None, SolveCertificate(status="infeasible", iterations=iterations[0],
                                          wall_time=wall)

    p_scaled = object.__new__(QcqpProblem)
    p_scaled.__dict__.update(p.__dict__)
    p_scaled.c = c_scaled
    if p.q_obj is not None and c_norm > 0:
        p_scaled.q_obj = p.q_obj / c_norm

    t = 100.0
    mu = 100.0
    stalled = 0
    # beyond this the active slacks drop under float resolution of b - a x
    t_cap = 1e13 / max(1.0, float(np.abs(p.b_ineq).max(initial=0.0)))
    for _ in range(60):
        x, used, centered = _newton_center(p_scaled, x, t, QCQP_ITERATION_CAP)
        iterations[0] += used
        if not centered:
            # stuck against a boundary; the iterate may already certify, so
            # stop and let the KKT evaluation decide
            stalled += 1
            if stalled > 1:
                break
            continue
        stalled = 0
        tol_abs = GAP_TOL * (1.0 + abs(p_scaled.objective(x)))
        if m / t <= tol_abs or t >= t_cap:
            break
        t = min(min(mu * t, max(2.0 * t, 1.01 * m / tol_abs)), t_cap)

    fq = p.f_quad(x)
    slack = p.b_ineq - p.a_ineq @ x
    scale_back = c_norm if c_norm > 0 else 1.0
    dual_quad = scale_back / (t * (-fq))
    dual_ineq = scale_back / (t * slack)
    sol = QcqpSolution(x=x, dual_quad=dual_quad, dual_ineq=dual_ineq)
    refined = _refine_duals(p, x, fq, slack)
    if refined is not None and qcqp_kkt_residual(p, refined) < qcqp_kkt_residual(p, sol):
        sol = refined
    residual = qcqp_kkt_residual(p, sol)
    status = "optimal" if residual <= 1e-6 else "failure"
    cert = SolveCertificate(status=status, objective=p.objective(x),
                            kkt_residual=residual, iterations=iterations[0],
                            wall_time=time.perf_counter() - t_start)
    return (sol, cert) if status == "optimal" else (None, cert)


def _refine_duals(p: QcqpProblem, x: np.ndarray, fq: float,
                  slack: np.ndarray) -> QcqpSolution | None:
    """Least-squares multipliers restricted to the near-active constraints; the
    barrier duals are only as exact as the last centering step, while the
    active set at the optimum determines the multipliers to machine precision."""
    b_scale = 1.0 + np.abs(p.b_ineq)
    act = slack <= 1e-6 * b_scale
    quad_act = abs(fq) <= 1e-6 * (1.0 + abs(p.r))
    cols = []
    if quad_act:
        cols.append(2.0 * p.q_sym @ x + p.l)
    if np.any(act):
        cols.extend(p.a_ineq[act])
    if not cols:
        return QcqpSolution(x=x, dual_quad=0.0, dual_ineq=np.zeros(p.b_ineq.size))
    g = np.column_stack(cols)
    try:
        lam, _ = nnls(g, p.objective_gradient(x))
    except Exception:
        return None
    dual_quad = 0.0
    k = 0
    if quad_act:
        dual_quad = float(lam[0])
        k = 1
    dual_ineq = np.zeros(p.b_ineq.size)
    dual_ineq[np.nonzero(act)[0]] = lam[k:]
    return QcqpSolution(x=x, dual_quad=dual_quad, dual_ineq=dual_ineq)
