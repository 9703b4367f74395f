import numpy as np
import pytest

from feederdispatch import solver
from feederdispatch.solver import (LinearProgram, QcqpProblem, lp_kkt_residual,
                                   qcqp_kkt_residual, solve_lp, solve_qcqp)

from oracles import grid_current_search


def test_lp_one_dimensional():
    sol, cert = solve_lp(LinearProgram(c=[1.0], a_ineq=[[-1.0]], b_ineq=[-3.0]))
    assert cert.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0, abs=1e-9)
    assert cert.kkt_residual <= 1e-6


def test_lp_infeasible_certified():
    sol, cert = solve_lp(LinearProgram(c=[1.0], a_ineq=[[1.0], [-1.0]],
                                       b_ineq=[0.0, -1.0]))
    assert sol is None
    assert cert.status == "infeasible"
    assert cert.objective > 1e-6          # phase-1 positive optimum


def test_lp_certificate_honesty():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((8, 5))
    b = rng.standard_normal(8) + 4.0
    c = rng.standard_normal(5)
    p = LinearProgram(c=c, a_ineq=a, b_ineq=b, lb=np.full(5, -10.0),
                      ub=np.full(5, 10.0))
    sol, cert = solve_lp(p)
    assert cert.status == "optimal"
    assert abs(lp_kkt_residual(p, sol) - cert.kkt_residual) <= 1e-12
    assert cert.kkt_residual <= 1e-6


def test_lp_with_equalities():
    # min -x0-2x1 s.t. x0+x1<=3, x0-x1=1, 0<=x<=2.5
    p = LinearProgram(c=[-1.0, -2.0], a_ineq=[[1.0, 1.0]], b_ineq=[3.0],
                      a_eq=[[1.0, -1.0]], b_eq=[1.0],
                      lb=[0.0, 0.0], ub=[2.5, 2.5])
    sol, cert = solve_lp(p)
    assert cert.status == "optimal"
    assert sol.x == pytest.approx([2.0, 1.0], abs=1e-9)
    assert cert.kkt_residual <= 1e-8


def test_qcqp_quadratic_cap():
    p = QcqpProblem(c=[1.0], q=[[1.0]], l=[0.0], r=4.0,
                    a_ineq=[[1.0], [-1.0]], b_ineq=[10.0, 10.0])
    sol, cert = solve_qcqp(p)
    assert cert.status == "optimal"
    assert sol.x[0] == pytest.approx(2.0, abs=1e-6)
    assert cert.kkt_residual <= 1e-6


def test_qcqp_symmetric_optimum():
    p = QcqpProblem(c=[1.0, 1.0], q=np.eye(2), l=np.zeros(2), r=2.0,
                    a_ineq=np.vstack([np.eye(2), -np.eye(2)]),
                    b_ineq=np.full(4, 10.0))
    sol, cert = solve_qcqp(p)
    assert sol.x == pytest.approx([1.0, 1.0], abs=1e-6)


def test_qcqp_infeasible():
    p = QcqpProblem(c=[1.0], q=[[1.0]], l=[0.0], r=-1.0,
                    a_ineq=[[1.0], [-1.0]], b_ineq=[10.0, 10.0])
    sol, cert = solve_qcqp(p)
    assert sol is None
    assert cert.status == "infeasible"


def test_qcqp_rejects_indefinite():
    with pytest.raises(ValueError):
        QcqpProblem(c=[1.0, 1.0], q=[[1.0, 0.0], [0.0, -1.0]], l=np.zeros(2),
                    r=1.0, a_ineq=np.eye(2), b_ineq=[1.0, 1.0])


def _random_instance(rng, n=2, box=20.0):
    m = rng.standard_normal((n, n))
    q = m @ m.T + 0.1 * np.eye(n)
    l = 0.5 * rng.standard_normal(n)
    r = float(rng.random() * 4 + 0.5)
    c = rng.standard_normal(n)
    c /= max(1e-9, np.abs(c).max())
    a = np.vstack([np.eye(n), -np.eye(n)])
    return QcqpProblem(c=c, q=q, l=l, r=r, a_ineq=a, b_ineq=np.full(2 * n, box))


def test_qcqp_grid_oracle_two_vars():
    rng = np.random.default_rng(42)
    for _ in range(10):
        p = _random_instance(rng)
        sol, cert = solve_qcqp(p)
        assert cert.status == "optimal"
        best, _ = grid_current_search(p.q_sym, p.l, p.r, p.a_ineq, p.b_ineq,
                                      p.c, -20.0, 20.0, resolution=0.05)
        gap = cert.objective - best
        assert gap >= -1e-7
        assert gap <= 0.05 * (np.abs(p.c).sum() + 2.0)


def test_qcqp_closed_form_five_vars():
    # loose box, quadratic constraint active alone: KKT gives lambda and x in
    # closed form from Q^{-1}, an independent derivation path
    rng = np.random.default_rng(9)
    for _ in range(10):
        n = 5
        m = rng.standard_normal((n, n))
        q = m @ m.T + np.eye(n)
        l = rng.standard_normal(n)
        r = float(rng.random() * 5 + 1.0)
        c = rng.standard_normal(n)
        u = np.linalg.solve(q, c)
        w = np.linalg.solve(q, l)
        a_ = float(c @ u)
        d_ = float(l @ w)
        lam = np.sqrt(a_ / (d_ + 4.0 * r))
        x_star = (u / lam - w) / 2.0
        box = float(np.abs(x_star).max()) + 5.0
        p = QcqpProblem(c=c, q=q, l=l, r=r,
                        a_ineq=np.vstack([np.eye(n), -np.eye(n)]),
                        b_ineq=np.full(2 * n, box))
        sol, cert = solve_qcqp(p)
        assert cert.status == "optimal"
        assert cert.objective == pytest.approx(float(c @ x_star), rel=1e-6, abs=1e-6)
        assert sol.x == pytest.approx(x_star, rel=1e-4, abs=1e-5)


def test_qcqp_certificate_honesty(rng):
    p = _random_instance(rng)
    sol, cert = solve_qcqp(p)
    assert abs(qcqp_kkt_residual(p, sol) - cert.kkt_residual) <= 1e-12


def test_qcqp_deterministic():
    p = _random_instance(np.random.default_rng(5))
    x1 = solve_qcqp(p)[0].x
    x2 = solve_qcqp(p)[0].x
    assert np.array_equal(x1, x2)


def test_qcqp_objective_scaling_invariance():
    p = _random_instance(np.random.default_rng(6))
    x1 = solve_qcqp(p)[0].x
    p2 = QcqpProblem(c=7.0 * p.c, q=p.q, l=p.l, r=p.r, a_ineq=p.a_ineq,
                     b_ineq=p.b_ineq)
    x2 = solve_qcqp(p2)[0].x
    assert x2 == pytest.approx(x1, abs=1e-7)


def test_qcqp_start_point_independence():
    p = _random_instance(np.random.default_rng(8))
    objs = []
    rng = np.random.default_rng(80)
    found = 0
    while found < 10:
        x0 = rng.uniform(-2, 2, size=2)
        if p.f_quad(x0) < -1e-6 and np.all(p.b_ineq - p.a_ineq @ x0 > 1e-6):
            sol, cert = solve_qcqp(p, x0=x0)
            assert cert.status == "optimal"
            objs.append(cert.objective)
            found += 1
    objs = np.array(objs)
    scale = 1.0 + np.abs(objs).max()
    assert (objs.max() - objs.min()) / scale <= 1e-6
