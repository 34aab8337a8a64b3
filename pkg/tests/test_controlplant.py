import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from qkdncs.controlplant import (
    KalmanState,
    PIController,
    PlantModel,
    kalman_predict,
    kalman_update,
    pi_control,
    plant_step,
)
from qkdncs.errors import SingularInnovationError


def scalar_plant():
    return PlantModel([[1.0]], [[0.0]], [[1.0]], 1.0)


def riccati_fixed_point(q, r, iterations=100_000, tol=1e-15):
    """Scalar A = C = 1 prior-variance recurrence iterated to its fixed point."""
    p = 1.0
    for _ in range(iterations):
        nxt = p - p * p / (p + r) + q
        if abs(nxt - p) < tol:
            return nxt
        p = nxt
    return p


# -- plant --------------------------------------------------------------------


def test_autonomous_identity_plant():
    model = PlantModel(np.eye(2), np.zeros((2, 1)), [[1.0, 0.0]], 0.01)
    x, y = plant_step(model, [3.0, -1.0], 5.0)
    assert np.array_equal(x, [3.0, -1.0])
    assert y[0] == 3.0


def test_servo_unit_step_from_rest():
    servo = PlantModel.servo(damping=0.5, gain=1.0)
    x, _ = plant_step(servo, [0.0, 0.0], 1.0)
    assert x == pytest.approx([0.0, 0.01])


def test_default_servo_scales_with_gain():
    servo = PlantModel.servo()
    x, _ = plant_step(servo, [0.0, 0.0], 1.0)
    assert x == pytest.approx([0.0, 0.01 * 10.0])


def test_zero_stays_zero():
    servo = PlantModel.servo()
    x = np.zeros(2)
    for _ in range(100):
        x, y = plant_step(servo, x, 0.0)
    assert not x.any() and not y.any()


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        plant_step(PlantModel.servo(), [0.0, 0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        PlantModel(np.eye(2), np.zeros((3, 1)), [[1.0, 0.0]])


def test_default_servo_controllable_and_observable():
    s = PlantModel.servo()
    ctrb = np.hstack([s.B, s.A @ s.B])
    obsv = np.vstack([s.C, s.C @ s.A])
    assert np.linalg.matrix_rank(ctrb) == 2
    assert np.linalg.matrix_rank(obsv) == 2


# -- PI ------------------------------------------------------------------------------


def test_proportional_only():
    u, _ = pi_control(PIController(kp=1.0, ki=0.0), 2.0, 0.0)
    assert u == 2.0


def test_integral_accumulates():
    ctrl = PIController(kp=0.0, ki=1.0, Ts=1.0)
    out = []
    for _ in range(3):
        u, ctrl = pi_control(ctrl, 1.0, 0.0)
        out.append(u)
    assert out == [1.0, 2.0, 3.0]


def test_saturation():
    u, _ = pi_control(PIController(kp=100.0, ki=0.0, clamp=(-10.0, 10.0)), 1.0, 0.0)
    assert u == 10.0


def test_integrator_frozen_while_saturated():
    ctrl = PIController(kp=100.0, ki=1.0, Ts=1.0, clamp=(-10.0, 10.0))
    _, ctrl = pi_control(ctrl, 1.0, 0.0)
    assert ctrl.integrator == 0.0


def test_nonfinite_integrator_rejected():
    with pytest.raises(ValueError):
        pi_control(PIController(integrator=float("nan")), 0.0, 0.0)


def test_reset_clears_integrator():
    assert PIController(integrator=3.0).reset().integrator == 0.0


def test_closed_loop_step_settles():
    servo = PlantModel.servo()
    ctrl = PIController()
    x = np.zeros(2)
    y = 0.0
    errors = []
    for _ in range(1000):
        u, ctrl = pi_control(ctrl, 1.0, y)
        x, yv = plant_step(servo, x, u)
        y = float(yv[0])
        errors.append(1.0 - y)
    assert max(abs(e) for e in errors[-100:]) < 0.01


# -- Kalman ---------------------------------------------------------------------------


def test_static_predict_is_identity():
    ks = KalmanState.initial(scalar_plant(), 0.0, 1.0, x0=[2.0], P0=[[3.0]])
    nxt = kalman_predict(ks, scalar_plant(), 7.0)
    assert nxt.x_hat[0] == 2.0 and nxt.P_cov[0, 0] == 3.0


def test_scalar_predict_adds_process_noise():
    ks = KalmanState.initial(scalar_plant(), 0.25, 1.0, P0=[[1.5]])
    assert kalman_predict(ks, scalar_plant(), 0.0).P_cov[0, 0] == pytest.approx(1.75)


def test_untrusted_measurement_keeps_prior():
    ks = KalmanState.initial(scalar_plant(), 0.0, 1e12, x0=[1.0], P0=[[1.0]])
    out = kalman_update(ks, scalar_plant(), 100.0)
    assert out.gain_K[0, 0] == pytest.approx(0.0, abs=1e-11)
    assert out.x_hat[0] == pytest.approx(1.0, abs=1e-9)


def test_perfect_measurement_wins():
    model = PlantModel(np.eye(2), np.zeros((2, 1)), np.eye(2))
    ks = KalmanState.initial(model, np.zeros((2, 2)), np.zeros((2, 2)))
    out = kalman_update(ks, model, [4.0, -2.0])
    assert out.x_hat == pytest.approx([4.0, -2.0])


def test_singular_innovation():
    ks = KalmanState.initial(scalar_plant(), 0.0, 0.0, P0=[[0.0]])
    with pytest.raises(SingularInnovationError):
        kalman_update(ks, scalar_plant(), 1.0)


def test_scalar_riccati_oracle():
    q, r = 0.01, 1.0
    closed_form = (q + np.sqrt(q * q + 4 * q * r)) / 2
    assert riccati_fixed_point(q, r) == pytest.approx(closed_form, abs=1e-12)
    assert closed_form == pytest.approx(0.10512, abs=1e-5)

    model = scalar_plant()
    ks = KalmanState.initial(model, q, r)
    for _ in range(200):
        ks = kalman_update(kalman_predict(ks, model, 0.0), model, 0.0)
    assert kalman_predict(ks, model, 0.0).P_cov[0, 0] == pytest.approx(closed_form, abs=1e-4)
    for _ in range(800):
        ks = kalman_update(kalman_predict(ks, model, 0.0), model, 0.0)
    assert kalman_predict(ks, model, 0.0).P_cov[0, 0] == pytest.approx(closed_form, abs=1e-6)


def test_servo_covariance_converges_to_riccati_solution():
    servo = PlantModel.servo()
    Q = servo.B @ servo.B.T * 0.04 + 1e-6 * np.eye(2)
    R = np.array([[1e-4]])
    # prior-covariance DARE is the dual problem: (A^T, C^T)
    oracle = scipy.linalg.solve_discrete_are(servo.A.T, servo.C.T, Q, R)
    ks = KalmanState.initial(servo, Q, R)
    for _ in range(5000):
        ks = kalman_update(kalman_predict(ks, servo, 0.0), servo, 0.0)
    prior = kalman_predict(ks, servo, 0.0).P_cov
    assert prior == pytest.approx(oracle, abs=1e-6)


def test_covariance_stays_psd_and_predict_grows_trace():
    rng = np.random.default_rng(11)
    servo = PlantModel.servo()
    Q = servo.B @ servo.B.T * 0.01
    ks = KalmanState.initial(servo, Q, 1e-3)
    x = np.zeros(2)
    for _ in range(10_000):
        u = rng.normal()
        x, y = plant_step(servo, x, u, rng.normal(0, 0.1))
        prior = kalman_predict(ks, servo, u)
        assert np.trace(prior.P_cov) >= np.trace(servo.A @ ks.P_cov @ servo.A.T) - 1e-15
        ks = kalman_update(prior, servo, y + rng.normal(0, np.sqrt(1e-3)))
        assert np.linalg.eigvalsh(ks.P_cov).min() >= -1e-12
        assert np.all(np.isfinite(ks.gain_K))


def test_filter_beats_raw_measurement():
    servo = PlantModel.servo()
    q_std, r_std = 0.2, 0.05
    Q = servo.B @ servo.B.T * q_std**2
    R = r_std**2
    kal_err, raw_err = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ks = KalmanState.initial(servo, Q, R, P0=np.zeros((2, 2)))
        x = np.zeros(2)
        for i in range(200):
            u = np.sin(0.05 * i)
            x, y = plant_step(servo, x, u, rng.normal(0, q_std))
            meas = y[0] + rng.normal(0, r_std)
            ks = kalman_update(kalman_predict(ks, servo, u), servo, meas)
            kal_err.append((ks.x_hat[0] - x[0]) ** 2)
            # pseudo-inverse of C recovers position only from the raw reading
            raw_err.append((meas - x[0]) ** 2)
    assert np.mean(kal_err) <= np.mean(raw_err)


@given(st.floats(1e-4, 10), st.floats(1e-4, 10))
def test_scalar_fixed_point_satisfies_recurrence(q, r):
    p = (q + np.sqrt(q * q + 4 * q * r)) / 2
    assert p - p * p / (p + r) + q == pytest.approx(p, rel=1e-9)
