import numpy as np
import pytest

from mpsf.dynamics import (
    CartpoleParams,
    UncertaintyBound,
    cartpole_accelerations,
    cartpole_model,
    discretize_rk4,
    disturbed_step,
    estimate_w_max,
    quadrotor_linear_model,
)

P = CartpoleParams(m_c=1.0, m_p=0.1, l=0.5, g=9.8)


def newton_euler_accels(x, u, p):
    """Independent oracle: solve the coupled Newton-Euler 2x2 system directly.

    (m_c+m_p) xdd + m_p l cos(th) thdd = u + m_p l thdot^2 sin(th)
    m_p l cos(th) xdd + (4/3) m_p l^2 thdd = m_p g l sin(th)
    """
    th, thd = x[2], x[3]
    M = np.array([
        [p.m_c + p.m_p, p.m_p * p.l * np.cos(th)],
        [p.m_p * p.l * np.cos(th), (4.0 / 3.0) * p.m_p * p.l**2],
    ])
    rhs = np.array([
        u + p.m_p * p.l * thd**2 * np.sin(th),
        p.m_p * p.g * p.l * np.sin(th),
    ])
    return np.linalg.solve(M, rhs)


class TestCartpoleAccelerations:
    def test_equilibrium(self):
        xdd, thdd = cartpole_accelerations(np.zeros(4), 0.0, P)
        assert xdd == 0.0 and thdd == 0.0

    def test_unit_force_at_upright(self):
        # Frozen from the Newton-Euler oracle: exactly 40/41 and -60/41.
        xdd, thdd = cartpole_accelerations(np.zeros(4), 1.0, P)
        assert xdd == pytest.approx(40.0 / 41.0, abs=1e-12)
        assert thdd == pytest.approx(-60.0 / 41.0, abs=1e-12)

    def test_gravity_term_only(self):
        x = np.array([0.0, 0.0, 0.1, 0.0])
        xdd, thdd = cartpole_accelerations(x, 0.0, P)
        assert thdd == pytest.approx(1.57378, abs=1e-5)
        oracle = newton_euler_accels(x, 0.0, P)
        assert xdd == pytest.approx(oracle[0], rel=1e-12)
        assert thdd == pytest.approx(oracle[1], rel=1e-12)

    def test_matches_newton_euler_oracle_randomly(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.uniform([-2, -3, -np.pi, -5], [2, 3, np.pi, 5])
            u = rng.uniform(-10, 10)
            got = cartpole_accelerations(x, u, P)
            want = newton_euler_accels(x, u, P)
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


class TestDiscretizeRk4:
    def test_equilibrium_fixed_point(self):
        model = cartpole_model(P)
        np.testing.assert_allclose(model.step(np.zeros(4), np.zeros(1)),
                                   np.zeros(4), atol=1e-15)

    def test_default_rate_is_15hz(self):
        assert cartpole_model(P).dt == pytest.approx(1.0 / 15.0)

    def test_scalar_decay_matches_exponential(self):
        model = discretize_rk4(lambda x, u: -x, dt=0.1, n=1, m=1)
        x1 = model.step(np.array([1.0]), np.zeros(1))[0]
        h = 0.1
        rk4_poly = 1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
        assert x1 == pytest.approx(rk4_poly, abs=1e-15)
        assert abs(x1 - np.exp(-0.1)) <= 1e-7

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            discretize_rk4(lambda x, u: -x, dt=0.0, n=1, m=1)


class TestQuadrotorModel:
    def test_input_column(self):
        model = quadrotor_linear_model()
        np.testing.assert_allclose(model.step(np.zeros(2), np.array([1.0])),
                                   [0.0231, 0.2854])

    def test_first_state_column(self):
        model = quadrotor_linear_model()
        np.testing.assert_allclose(model.step(np.array([1.0, 0.0]), np.zeros(1)),
                                   [0.9756, -0.2793])

    def test_origin_equilibrium(self):
        model = quadrotor_linear_model()
        np.testing.assert_allclose(model.step(np.zeros(2), np.zeros(1)), np.zeros(2))
        assert model.n == 2 and model.m == 1 and model.dt == pytest.approx(0.04)


@pytest.mark.parametrize("make_model", [quadrotor_linear_model, lambda: cartpole_model(P)])
def test_jacobians_match_finite_differences(make_model):
    model = make_model()
    rng = np.random.default_rng(12)
    eps = 1e-6
    for _ in range(100):
        x = rng.uniform(-0.5, 0.5, size=model.n)
        u = rng.uniform(-2.0, 2.0, size=model.m)
        A, B = model.jacobians(x, u)
        A_fd = np.empty_like(A)
        B_fd = np.empty_like(B)
        for j in range(model.n):
            dx = np.zeros(model.n)
            dx[j] = eps
            A_fd[:, j] = (model.step(x + dx, u) - model.step(x - dx, u)) / (2 * eps)
        for j in range(model.m):
            du = np.zeros(model.m)
            du[j] = eps
            B_fd[:, j] = (model.step(x, u + du) - model.step(x, u - du)) / (2 * eps)
        scale = max(1.0, np.abs(A_fd).max())
        assert np.abs(A - A_fd).max() / scale <= 1e-5
        assert np.abs(B - B_fd).max() / max(1.0, np.abs(B_fd).max()) <= 1e-5


class TestEstimateWmax:
    def test_perfect_model_gives_zero(self):
        model = quadrotor_linear_model()
        rng = np.random.default_rng(3)
        pairs = []
        for _ in range(20):
            x = rng.standard_normal(2)
            u = rng.standard_normal(1)
            pairs.append((x, u, model.step(x, u)))
        assert estimate_w_max(pairs, model).w_max == 0.0

    def test_single_residual_hand_value(self):
        model = quadrotor_linear_model()
        x = np.zeros(2)
        u = np.zeros(1)
        x_next = np.array([0.02, 0.02])
        bound = estimate_w_max([(x, u, x_next)], model)
        assert bound.w_max == pytest.approx(0.028284, abs=1e-6)

    def test_empty_sequence_errors(self):
        with pytest.raises(ValueError, match="no data"):
            estimate_w_max([], quadrotor_linear_model())

    def test_recovers_at_most_generating_bound(self):
        model = cartpole_model(P)
        bound = UncertaintyBound(0.0014)
        rng_root = np.random.SeedSequence(99)
        pairs = []
        x = np.array([0.1, 0.0, 0.05, 0.0])
        for k, seed in enumerate(rng_root.spawn(200)):
            u = np.array([np.sin(0.3 * k)])
            x_next = disturbed_step(model, x, u, bound, np.random.default_rng(seed))
            pairs.append((x.copy(), u, x_next))
            x = x_next
        est = estimate_w_max(pairs, model)
        assert 0.0 < est.w_max <= bound.w_max + 1e-12


class TestDisturbedStep:
    def test_zero_bound_is_nominal(self):
        model = quadrotor_linear_model()
        x, u = np.array([0.3, -0.2]), np.array([0.5])
        np.testing.assert_array_equal(
            disturbed_step(model, x, u, UncertaintyBound(0.0), 5), model.step(x, u))

    def test_ball_membership_many_samples(self):
        model = quadrotor_linear_model()
        bound = UncertaintyBound(0.0449)
        x, u = np.array([0.1, 0.1]), np.array([0.0])
        nominal = model.step(x, u)
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            nxt = disturbed_step(model, x, u, bound, rng)
            assert np.linalg.norm(nxt - nominal) <= bound.w_max + 1e-12

    def test_boundary_mode_is_on_sphere(self):
        model = quadrotor_linear_model()
        bound = UncertaintyBound(0.01)
        nominal = model.step(np.zeros(2), np.zeros(1))
        rng = np.random.default_rng(8)
        for _ in range(100):
            nxt = disturbed_step(model, np.zeros(2), np.zeros(1), bound, rng,
                                 mode="boundary")
            assert np.linalg.norm(nxt - nominal) == pytest.approx(bound.w_max, rel=1e-12)

    def test_seed_determinism(self):
        model = quadrotor_linear_model()
        bound = UncertaintyBound(0.1)
        a = disturbed_step(model, np.zeros(2), np.zeros(1), bound, 42)
        b = disturbed_step(model, np.zeros(2), np.zeros(1), bound, 42)
        np.testing.assert_array_equal(a, b)
