"""Independent brute-force oracles used to cross-check the optimization paths.

These deliberately avoid the library's solver code: feasibility and objectives
are evaluated directly from problem data with plain numpy.
"""

import numpy as np

from feederdispatch.dayahead import DayAheadConfig, beta_coeffs


def grid_offset_search(l_hat, env_low, env_high, cfg: DayAheadConfig,
                       resolution: float = 0.1):
    """Exhaustive grid search of the day-ahead offset on a small horizon.

    Minimizes sum(|f + env_low| + |f + env_high|) over per-slot grids subject to
    the propagated worst-case stored-energy recursion, the battery power bounds
    on both worst-case powers and the optional plan cap. Returns
    (objective, f) or (None, None) when no grid point is feasible.
    """
    l_hat = np.asarray(l_hat, float)
    env_low = np.asarray(env_low, float)
    env_high = np.asarray(env_high, float)
    n = l_hat.size
    assert n <= 4, "grid oracle is exponential in the slot count"
    beta_p, beta_m = beta_coeffs(cfg)
    b_lo = cfg.b_min + cfg.power_backoff
    b_hi = cfg.b_max - cfg.power_backoff

    grids = []
    for i in range(n):
        lo = b_lo - env_low[i]
        hi = b_hi - env_high[i]
        if cfg.p_max is not None:
            hi = min(hi, cfg.p_max - l_hat[i])
        if hi < lo:
            return None, None
        start = np.ceil(lo / resolution) * resolution
        grids.append(np.arange(start, hi + 1e-12, resolution))
        if grids[-1].size == 0:
            return None, None

    mesh = np.meshgrid(*grids, indexing="ij")
    f = np.stack([m.ravel() for m in mesh])          # (n, points)

    def soe_traj(env):
        b = f + env[:, None]
        delta = beta_p * np.maximum(b, 0.0) + beta_m * np.minimum(b, 0.0)
        return cfg.soe0 + np.cumsum(delta, axis=0)

    low = soe_traj(env_low)
    high = soe_traj(env_high)
    feas = np.all(low >= cfg.soe_min + cfg.soe_backoff - 1e-9, axis=0) \
        & np.all(high <= cfg.soe_max - cfg.soe_backoff + 1e-9, axis=0)
    if not np.any(feas):
        return None, None
    obj = (np.abs(f + env_low[:, None]) + np.abs(f + env_high[:, None])).sum(axis=0)
    obj = np.where(feas, obj, np.inf)
    j = int(np.argmin(obj))
    return float(obj[j]), f[:, j].copy()


def grid_current_search(q_sym, l, r, a_ineq, b_ineq, c, lo, hi,
                        resolution: float = 0.05):
    """Exhaustive 2-D grid search of maximize c'x subject to the quadratic
    constraint and the linear inequality system. Returns (objective, x) or
    (None, None)."""
    g = np.arange(lo, hi + 1e-12, resolution)
    x0, x1 = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([x0.ravel(), x1.ravel()])         # (2, points)
    fq = np.einsum("ij,ip,jp->p", q_sym, pts, pts) + l @ pts - r
    feas = fq <= 1e-12
    if a_ineq is not None and len(a_ineq):
        feas &= np.all(a_ineq @ pts <= np.asarray(b_ineq)[:, None] + 1e-12, axis=0)
    if not np.any(feas):
        return None, None
    obj = np.where(feas, c @ pts, -np.inf)
    j = int(np.argmax(obj))
    return float(obj[j]), pts[:, j].copy()


def textbook_kalman(a, b_i, b_1, c, d_i, d_1, k, sigma_g, x0, p0, currents, voltages):
    """Plain covariance-form Kalman recursion (gain + (I-GC)P update), written
    independently of the library implementation."""
    x = np.asarray(x0, float).copy()
    p = np.asarray(p0, float).copy()
    cv = np.asarray(c, float).ravel()
    xs, ps = [], []
    for i_prev, v_meas in zip(currents, voltages):
        x = a @ x + b_i * i_prev + b_1
        p = a @ p @ a.T + k @ k.T
        s = float(cv @ p @ cv) + sigma_g ** 2
        gain = p @ cv / s
        innov = v_meas - float(cv @ x) - d_i * i_prev - d_1
        x = x + gain * innov
        p = (np.eye(x.size) - np.outer(gain, cv)) @ p
        xs.append(x.copy())
        ps.append(p.copy())
    return xs, ps


def mpc_constraints_satisfied(p, i_traj, tol=1e-6):
    """Re-check every control constraint from problem data only."""
    i_traj = np.asarray(i_traj, float)
    lim = p.limits
    ok = np.all(i_traj >= lim.i_min - tol) and np.all(i_traj <= lim.i_max + tol)
    if i_traj.size > 1:
        d = np.diff(i_traj)
        ok &= np.all(d >= lim.di_min - tol) and np.all(d <= lim.di_max + tol)
    v = p.phi_v @ p.x_k + p.psi_v_i @ i_traj + p.psi_v_1 @ np.ones(p.horizon)
    ok &= np.all(v >= lim.v_min - tol) and np.all(v <= lim.v_max + tol)
    soc = (p.phi_soc * p.soc_k).ravel() + p.psi_soc_i @ i_traj
    ok &= np.all(soc >= lim.soc_min - tol) and np.all(soc <= lim.soc_max + tol)
    return bool(ok)


def mpc_throughput(p, i_traj):
    """AC energy throughput (kWh) of a current trajectory, from problem data."""
    i_traj = np.asarray(i_traj, float)
    v = p.phi_v @ p.x_k + p.psi_v_i @ i_traj + p.psi_v_1 @ np.ones(p.horizon)
    return p.alpha * float(v @ i_traj) / 1000.0


def dayahead_plan_feasible(plan, cfg, tol=1e-6):
    """Independent evaluator of every day-ahead constraint on a finished plan."""
    from feederdispatch.dayahead import worst_case_soe
    fc = plan.forecast
    f = plan.offset.f
    low, high = worst_case_soe(f, fc, cfg)
    ok = np.all(low >= cfg.soe_min + cfg.soe_backoff - tol)
    ok &= np.all(high <= cfg.soe_max - cfg.soe_backoff + tol)
    k = f + np.asarray(fc.envelope_low)
    g = f + np.asarray(fc.envelope_high)
    for b in (k, g):
        ok &= np.all(b >= cfg.b_min + cfg.power_backoff - tol)
        ok &= np.all(b <= cfg.b_max - cfg.power_backoff + tol)
    if cfg.p_max is not None:
        ok &= np.all(plan.p_hat <= cfg.p_max + tol)
    return bool(ok)
