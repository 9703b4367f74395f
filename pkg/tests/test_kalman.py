import numpy as np
import pytest

from feederdispatch.battery import (TABLE1, KalmanState, kalman_update,
                                    reduce_and_discretize, voltage_step)

from oracles import textbook_kalman


def _simulate_measurements(m, rng, steps=50):
    x = rng.uniform(-1, 1, 2)
    currents, voltages = [], []
    for _ in range(steps):
        i = float(rng.uniform(-400, 400))
        x_next = m.a @ x + m.b_i * i + m.b_1
        v = float(m.c @ x_next + m.d_i * i + m.d_1 + m.g * rng.standard_normal())
        currents.append(i)
        voltages.append(v)
        x = x_next
    return currents, voltages


def test_matches_textbook_recursion(rng):
    m = reduce_and_discretize(TABLE1[2], 10.0)
    currents, voltages = _simulate_measurements(m, rng)
    st = KalmanState.initial()
    xs_ref, ps_ref = textbook_kalman(m.a, m.b_i, m.b_1, m.c, m.d_i, m.d_1, m.k,
                                     m.g, st.x, st.p, currents, voltages)
    for i_prev, v_meas, x_ref, p_ref in zip(currents, voltages, xs_ref, ps_ref):
        st = kalman_update(st, m, i_prev, v_meas)
        assert st.x == pytest.approx(x_ref, abs=1e-10)
        assert st.p == pytest.approx(p_ref, abs=1e-10)


def test_covariance_trace_non_increasing(rng):
    m = reduce_and_discretize(TABLE1[1], 10.0)
    currents, voltages = _simulate_measurements(m, rng)
    st = KalmanState.initial()
    for i_prev, v_meas in zip(currents, voltages):
        p_pred = m.a @ st.p @ m.a.T + m.k @ m.k.T
        st = kalman_update(st, m, i_prev, v_meas)
        assert np.trace(st.p) <= np.trace(p_pred) + 1e-12


def test_huge_noise_ignores_measurement():
    m = reduce_and_discretize(TABLE1[2], 10.0)
    noisy = type(m)(a=m.a, b_i=m.b_i, b_1=m.b_1, c=m.c, d_i=m.d_i, d_1=m.d_1,
                    k=m.k, g=1e9, n=m.n, label=m.label)
    st = KalmanState.initial()
    st2 = kalman_update(st, noisy, 100.0, 1e5)
    x_pred = m.a @ st.x + m.b_i * 100.0 + m.b_1
    assert st2.x == pytest.approx(x_pred, abs=1e-4)


def test_tiny_noise_trusts_measurement():
    m = reduce_and_discretize(TABLE1[2], 10.0)
    sharp = type(m)(a=m.a, b_i=m.b_i, b_1=m.b_1, c=m.c, d_i=m.d_i, d_1=m.d_1,
                    k=m.k, g=1e-6, n=m.n, label=m.label)
    st = KalmanState.initial()
    v_meas = 655.0
    st2 = kalman_update(st, sharp, 50.0, v_meas)
    predicted_output = float(m.c @ st2.x) + m.d_i * 50.0 + m.d_1
    assert predicted_output == pytest.approx(v_meas, abs=1e-4)


def test_information_and_joseph_agree(rng):
    m = reduce_and_discretize(TABLE1[4], 10.0)
    currents, voltages = _simulate_measurements(m, rng)
    a = KalmanState.initial()
    b = KalmanState.initial()
    for i_prev, v_meas in zip(currents, voltages):
        a = kalman_update(a, m, i_prev, v_meas, form="information")
        b = kalman_update(b, m, i_prev, v_meas, form="joseph")
        assert a.x == pytest.approx(b.x, abs=1e-8)
        assert a.p == pytest.approx(b.p, abs=1e-8)


def test_unknown_form_rejected():
    m = reduce_and_discretize(TABLE1[0], 10.0)
    with pytest.raises(ValueError):
        kalman_update(KalmanState.initial(), m, 0.0, 650.0, form="nope")


def test_covariance_stays_symmetric_psd(rng):
    m = reduce_and_discretize(TABLE1[0], 10.0)
    st = KalmanState.initial()
    for _ in range(200):
        st = kalman_update(st, m, float(rng.uniform(-800, 800)),
                           float(rng.uniform(560, 640)))
        assert st.p == pytest.approx(st.p.T, abs=1e-12)
        assert np.linalg.eigvalsh(st.p).min() >= -1e-12


def test_state_tracks_true_plant(rng):
    # matched model, moderate noise: estimate converges toward the true state
    m = reduce_and_discretize(TABLE1[2], 10.0)
    x_true = np.array([0.5, -0.3])
    st = KalmanState.initial()
    for _ in range(300):
        i = float(rng.uniform(-300, 300))
        x_true = m.a @ x_true + m.b_i * i + m.b_1
        v = float(m.c @ x_true + m.d_i * i + m.d_1)
        st = kalman_update(st, m, i, v)
    assert float(m.c @ st.x) == pytest.approx(float(m.c @ x_true), abs=0.05)
