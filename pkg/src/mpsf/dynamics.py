"""Discrete-time nominal models, disturbance injection, and mismatch bounds.

Two benchmark systems are provided: a frictionless cartpole discretized with
RK4, and the identified linear quadrotor position/velocity model at 25 Hz.
Both expose the same ``NominalModel`` interface: a deterministic step map and
its Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class CartpoleParams:
    """Cartpole physical parameters (cart mass, pole mass, half pole length, gravity)."""

    m_c: float = 1.0
    m_p: float = 0.1
    l: float = 0.5
    g: float = 9.8

    def __post_init__(self):
        if min(self.m_c, self.m_p, self.l, self.g) <= 0.0:
            raise ValueError("cartpole parameters must be strictly positive")


@dataclass(frozen=True)
class UncertaintyBound:
    """Euclidean-norm bound on the additive one-step state error."""

    w_max: float

    def __post_init__(self):
        if self.w_max < 0.0:
            raise ValueError("w_max must be nonnegative")


@dataclass(frozen=True)
class LinearModel:
    """Discrete-time linear dynamics x+ = A x + B u."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A, B = np.asarray(self.A, float), np.asarray(self.B, float)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError("inconsistent A/B dimensions")


@dataclass(frozen=True)
class NominalModel:
    """Deterministic nominal step map with Jacobians.

    Attributes
    ----------
    n, m : state and input dimensions
    dt : step period in seconds
    step : (x, u) -> next state
    jacobians : (x, u) -> (A, B) of the discrete step
    linear : True when step is exactly affine in (x, u); lets the SQP layer
        converge in a single iteration
    """

    n: int
    m: int
    dt: float
    step: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobians: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
    linear: bool = False


def cartpole_accelerations(x, u, p: CartpoleParams):
    """Cart acceleration and pole angular acceleration of the frictionless cartpole.

    ``x`` is [cart position, cart velocity, pole angle, pole angular rate] and
    ``u`` the horizontal force on the cart.  The angular acceleration is
    resolved first, then substituted into the cart acceleration.
    """
    theta, theta_dot = float(x[2]), float(x[3])
    force = float(np.asarray(u).reshape(-1)[0])
    total = p.m_c + p.m_p
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    tmp = (-force - p.m_p * p.l * theta_dot**2 * sin_t) / total
    theta_dd = (p.g * sin_t + cos_t * tmp) / (
        p.l * (4.0 / 3.0 - p.m_p * cos_t**2 / total)
    )
    x_dd = (force + p.m_p * p.l * (theta_dot**2 * sin_t - theta_dd * cos_t)) / total
    return x_dd, theta_dd


def _fd_jacobians(step, n, m, eps=1e-6):
    """Central finite-difference Jacobians of a step map."""

    def jac(x, u):
        x = np.asarray(x, float)
        u = np.atleast_1d(np.asarray(u, float))
        A = np.empty((n, n))
        B = np.empty((n, m))
        for j in range(n):
            dx = np.zeros(n)
            dx[j] = eps
            A[:, j] = (step(x + dx, u) - step(x - dx, u)) / (2 * eps)
        for j in range(m):
            du = np.zeros(m)
            du[j] = eps
            B[:, j] = (step(x, u + du) - step(x, u - du)) / (2 * eps)
        return A, B

    return jac


def discretize_rk4(vector_field, dt: float, n: int, m: int) -> NominalModel:
    """Fixed-step 4th-order Runge-Kutta discretization of ``xdot = f(x, u)``.

    The input is held constant across the step (zero-order hold).  Jacobians
    come from central finite differences of the discrete map.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")

    def step(x, u):
        x = np.asarray(x, float)
        u = np.atleast_1d(np.asarray(u, float))
        k1 = vector_field(x, u)
        k2 = vector_field(x + 0.5 * dt * k1, u)
        k3 = vector_field(x + 0.5 * dt * k2, u)
        k4 = vector_field(x + dt * k3, u)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return NominalModel(n=n, m=m, dt=dt, step=step,
                        jacobians=_fd_jacobians(step, n, m))


def cartpole_model(params: CartpoleParams = CartpoleParams(),
                   dt: float = 1.0 / 15.0) -> NominalModel:
    """RK4-discretized cartpole; default rate 15 Hz."""

    def ode(x, u):
        x_dd, theta_dd = cartpole_accelerations(x, u, params)
        return np.array([x[1], x_dd, x[3], theta_dd])

    return discretize_rk4(ode, dt, n=4, m=1)


# Identified closed-loop position/velocity model of the quadrotor at 25 Hz.
QUADROTOR_A = np.array([[0.9756, 0.0287], [-0.2793, 0.8535]])
QUADROTOR_B = np.array([[0.0231], [0.2854]])


def linear_nominal_model(A, B, dt: float) -> NominalModel:
    """Wrap constant (A, B) matrices as a NominalModel."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    n, m = B.shape

    def step(x, u):
        return A @ np.asarray(x, float) + B @ np.atleast_1d(np.asarray(u, float))

    def jac(x, u):
        return A.copy(), B.copy()

    return NominalModel(n=n, m=m, dt=dt, step=step, jacobians=jac, linear=True)


def quadrotor_linear_model() -> NominalModel:
    """The identified quadrotor model: n=2, m=1, 25 Hz."""
    return linear_nominal_model(QUADROTOR_A, QUADROTOR_B, dt=0.04)


def estimate_w_max(true_pairs: Sequence, model: NominalModel) -> UncertaintyBound:
    """Largest Euclidean one-step residual between observed and predicted states.

    ``true_pairs`` is a sequence of (x_k, u_k, x_next) triples.
    """
    pairs = list(true_pairs)
    if not pairs:
        raise ValueError("no data")
    worst = 0.0
    for x, u, x_next in pairs:
        resid = np.asarray(x_next, float) - model.step(x, u)
        worst = max(worst, float(np.linalg.norm(resid)))
    return UncertaintyBound(w_max=worst)


def sample_disturbance(n: int, bound: UncertaintyBound, rng: np.random.Generator,
                       mode: str = "uniform") -> np.ndarray:
    """Draw one disturbance from the w_max ball.

    ``uniform`` draws uniformly over the ball volume; ``boundary`` draws on the
    sphere (worst-case magnitude stress mode).
    """
    if bound.w_max == 0.0:
        return np.zeros(n)
    direction = rng.standard_normal(n)
    nrm = np.linalg.norm(direction)
    if nrm == 0.0:
        direction = np.zeros(n)
        direction[0] = 1.0
        nrm = 1.0
    direction /= nrm
    if mode == "boundary":
        radius = bound.w_max
    elif mode == "uniform":
        radius = bound.w_max * rng.uniform() ** (1.0 / n)
    else:
        raise ValueError(f"unknown disturbance mode {mode!r}")
    return radius * direction


def disturbed_step(model: NominalModel, x, u, bound: UncertaintyBound,
                   rng_seed, mode: str = "uniform") -> np.ndarray:
    """Nominal step plus a seeded random disturbance from the w_max ball.

    ``rng_seed`` may be an int (or SeedSequence-compatible) or an existing
    Generator; identical seeds give identical outputs.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    return model.step(x, u) + sample_disturbance(model.n, bound, rng, mode)
