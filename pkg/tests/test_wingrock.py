import math

import numpy as np
import pytest
from scipy.linalg import expm

from rlsforget import wingrock as wr

C2 = np.array(wr.THETA_NOMINAL)


def test_regressor_examples():
    np.testing.assert_array_equal(wr.regressor((0, 0)), [1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(wr.regressor((1, 1)), [1, 1, 1, 1, 1, 1])
    np.testing.assert_array_equal(wr.regressor(wr.PlantState(-2, 3)), [1, -2, 3, 6, -6, -8])


def test_regressor_parity():
    rng = np.random.default_rng(0)
    for x in rng.uniform(-3, 3, (50, 2)):
        a, b = wr.regressor(x), wr.regressor(-x)
        assert b[0] == 1.0
        np.testing.assert_allclose(b[1:], -a[1:], rtol=1e-15)


def test_true_uncertainty_examples():
    assert wr.true_uncertainty((0, 0), C2) == pytest.approx(0.8)
    assert wr.true_uncertainty((0.3, -1.0), np.zeros(6)) == 0.0
    assert wr.true_uncertainty((1, 1), C2) == pytest.approx(1.1296)


def test_aileron_examples():
    g = wr.ControllerGains()
    assert wr.aileron((0, 0), 0.0, g) == 0.0
    assert wr.aileron((0, 0), 1.0, g) == 1.5
    assert wr.aileron((1, 1), 0.0, g) == pytest.approx(-2.8)


def test_square_wave():
    sq = wr.SquareWave(0.5, 10.0, 30.0, 0.1)
    assert sq(0.0) == pytest.approx(0.6)
    assert sq(4.99) == pytest.approx(0.6)
    assert sq(5.0) == pytest.approx(-0.4)
    assert sq(10.0) == pytest.approx(0.6)
    assert sq(30.0) == pytest.approx(0.1)
    assert sq(29.99) == pytest.approx(-0.4)


def test_integrate_equilibrium_and_initial_slope():
    x = wr.integrate_step(wr.PlantState(0, 0), np.zeros(6), 0.0, 0.01)
    assert (x.x1, x.x2) == (0.0, 0.0)
    dt = 1e-6
    x = wr.integrate_step(wr.PlantState(0, 0), C2, 0.0, dt)
    assert x.x2 / dt == pytest.approx(0.8, rel=1e-6)
    with pytest.raises(ValueError):
        wr.integrate_step(wr.PlantState(0, 0), C2, 0.0, 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integrate_divergence():
    with pytest.raises(wr.PlantDivergenceError):
        wr.integrate_step(wr.PlantState(1e120, 0.0), C2, 0.0, 0.01)


def test_rk4_linear_case_vs_matrix_exponential():
    theta = np.array([0.0, -2.0, -0.5, 0.0, 0.0, 0.0])
    A = np.array([[0.0, 1.0], [theta[1], theta[2]]])
    x0 = np.array([0.7, -0.3])
    for dt in (0.1, 0.05, 0.01):
        x = wr.integrate_step(wr.PlantState(*x0), theta, 0.0, dt)
        exact = expm(A * dt) @ x0
        # local error of RK4 is O(dt^5)
        assert np.max(np.abs(x.as_array() - exact)) <= 0.05 * dt**5


def rk4_order_slope():
    x0 = wr.PlantState(0.5, 0.2)
    T = 1.0

    def solve(dt):
        x = x0
        for _ in range(int(round(T / dt))):
            x = wr.integrate_step(x, C2, 0.0, dt)
        return x.as_array()

    ref = solve(1e-4)
    dts = np.array([0.1, 0.05, 0.025, 0.0125])
    errs = np.array([np.max(np.abs(solve(dt) - ref)) for dt in dts])
    return np.polyfit(np.log(dts), np.log(errs), 1)[0]


def test_rk4_convergence_order():
    assert rk4_order_slope() >= 3.8


def test_schedule_and_measurement():
    sched = wr.PlantSchedule([(0.0, C2), (50.0, np.array(wr.THETA_SHIFTED))], noise_start=60.0, noise_variance=0.1)
    np.testing.assert_array_equal(sched.theta_at(49.99), C2)
    np.testing.assert_array_equal(sched.theta_at(50.0), wr.THETA_SHIFTED)
    np.testing.assert_array_equal(sched.theta_at(5000 * 0.01), wr.THETA_SHIFTED)
    rng = sched.make_rng()
    x = (0.2, -0.1)
    assert wr.measure(x, C2, 59.99, sched, rng) == wr.true_uncertainty(x, C2)
    quiet = wr.PlantSchedule([(0.0, C2)])
    assert wr.measure(x, C2, 1e6, quiet, rng) == wr.true_uncertainty(x, C2)
    for bad in ([], [(1.0, C2)], [(0.0, C2), (0.0, C2)]):
        with pytest.raises(ValueError):
            wr.PlantSchedule(bad)
    with pytest.raises(ValueError):
        wr.PlantSchedule(noise_variance=-1.0)


def test_noise_statistics():
    sched = wr.PlantSchedule([(0.0, np.zeros(6))], noise_start=0.0, noise_variance=0.1, rng_seed=11)
    rng = sched.make_rng()
    n = 100_000
    nu = np.array([wr.measure((0.0, 0.0), np.zeros(6), 1.0, sched, rng) for _ in range(n)])
    assert abs(nu.mean()) <= 3 * math.sqrt(0.1) / math.sqrt(n)
    assert abs(nu.var() - 0.1) <= 0.05 * 0.1


def test_noise_determinism():
    sched = wr.PlantSchedule(noise_start=0.0, noise_variance=0.1, rng_seed=3)
    a = [wr.measure((0.1, 0.1), C2, 1.0, sched, sched.make_rng()) for _ in range(2)]
    assert a[0] == a[1]
