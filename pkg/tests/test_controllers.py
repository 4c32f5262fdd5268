import numpy as np
import pytest

from mpsf.controllers import (
    LqrGain,
    aggressive_policy,
    constant_reference,
    lqr_policy,
    sinusoid_reference,
    solve_dare,
)
from mpsf.dynamics import QUADROTOR_A, QUADROTOR_B


class TestSolveDare:
    def test_scalar_golden_ratio(self):
        # P solves P^2 - P - 1 = 0 for A=B=Q=R=1.
        gain = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert gain.P[0, 0] == pytest.approx((1 + np.sqrt(5)) / 2, abs=1e-9)
        assert gain.K[0, 0] == pytest.approx((np.sqrt(5) - 1) / 2, abs=1e-9)

    def test_zero_dynamics(self):
        Q = np.diag([2.0, 3.0])
        gain = solve_dare(np.zeros((2, 2)), np.array([[1.0], [0.5]]), Q, [[1.0]])
        np.testing.assert_allclose(gain.P, Q, atol=1e-12)
        np.testing.assert_allclose(gain.K, 0.0, atol=1e-12)

    def test_quadrotor_closed_loop_stable(self):
        gain = solve_dare(QUADROTOR_A, QUADROTOR_B, np.eye(2), np.eye(1))
        Acl = QUADROTOR_A - QUADROTOR_B @ gain.K
        assert np.max(np.abs(np.linalg.eigvals(Acl))) < 1.0

    def test_dare_residual(self):
        A, B = QUADROTOR_A, QUADROTOR_B
        Q, R = np.eye(2), np.eye(1)
        P = solve_dare(A, B, Q, R).P
        resid = P - (Q + A.T @ P @ A
                     - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A))
        assert np.linalg.norm(resid, "fro") <= 1e-8
        # symmetric positive definite
        np.testing.assert_allclose(P, P.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(P)) > 0

    def test_unstabilizable_pair_diverges(self):
        # unstable mode with no input authority
        A = np.diag([2.0, 0.5])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(ArithmeticError, match="DARE diverged"):
            solve_dare(A, B, np.eye(2), np.eye(1))


class TestLqrPolicy:
    def test_zero_error_zero_input(self):
        gain = solve_dare(QUADROTOR_A, QUADROTOR_B, np.eye(2), np.eye(1))
        pol = lqr_policy(gain, constant_reference(2, 1))
        np.testing.assert_allclose(pol.query(np.zeros(2), 0), np.zeros(1))

    def test_scalar_hand_value(self):
        gain = LqrGain(K=np.array([[0.618]]), P=np.array([[1.618]]))
        pol = lqr_policy(gain, constant_reference(1, 1))
        assert pol.query(np.array([1.0]), 0)[0] == pytest.approx(-0.618)

    def test_sinusoid_reference_samples(self):
        # amplitude 1 m, period 5 s at 15 Hz
        ref = sinusoid_reference(4, 1, dt=1.0 / 15.0, amplitude=1.0, period=5.0)
        x0, _ = ref(0)
        assert x0[0] == 0.0
        assert x0[1] == pytest.approx(2 * np.pi / 5.0)
        x_k, _ = ref(10)  # t = 2/3 s
        assert x_k[0] == pytest.approx(np.sin(2 * np.pi * (2 / 3) / 5.0), abs=1e-12)
        # peak amplitude reached on a grid that divides the quarter period
        ref4 = sinusoid_reference(4, 1, dt=1.0 / 15.0, amplitude=1.0, period=4.0)
        x_quarter, _ = ref4(15)  # t = 1 s
        assert x_quarter[0] == pytest.approx(1.0, abs=1e-9)
        assert x_quarter[1] == pytest.approx(0.0, abs=1e-9)

    def test_policy_is_pure(self):
        gain = solve_dare(QUADROTOR_A, QUADROTOR_B, np.eye(2), np.eye(1))
        pol = lqr_policy(gain, sinusoid_reference(2, 1, 0.04, 1.5, 10.0,
                                                  input_follows_position=True))
        x = np.array([0.3, -0.1])
        np.testing.assert_array_equal(pol.query(x, 17), pol.query(x, 17))


class TestAggressivePolicy:
    def test_pushes_outward_at_boundary(self):
        # At the +0.75 m position boundary while the reference sinusoid peaks
        # at +1.5 m, the commanded setpoint lies beyond the boundary.
        gain = solve_dare(QUADROTOR_A, QUADROTOR_B, np.eye(2), np.eye(1))
        ref = sinusoid_reference(2, 1, dt=0.04, amplitude=1.5, period=10.0,
                                 input_follows_position=True)
        pol = aggressive_policy(gain, ref, gain_scale=1.0)
        k_peak = int(round(2.5 / 0.04))  # quarter period
        u = pol.query(np.array([0.75, 0.0]), k_peak)
        assert u[0] > 0.75

    def test_deterministic(self):
        gain = solve_dare(QUADROTOR_A, QUADROTOR_B, np.eye(2), np.eye(1))
        ref = sinusoid_reference(2, 1, 0.04, 1.5, 10.0)
        pol = aggressive_policy(gain, ref, gain_scale=2.0)
        x = np.array([0.2, 0.4])
        np.testing.assert_array_equal(pol.query(x, 3), pol.query(x, 3))
