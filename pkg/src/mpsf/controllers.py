"""Uncertified control policies behind one black-box interface, plus LQR synthesis.

Policies are pure functions of (state, step index); the step index selects the
reference sample for time-varying tasks.  The same LQR synthesis also provides
the terminal controller and the tube feedback gain for the robust layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class LqrGain:
    """Discrete LQR solution: feedback K (u = -K x) and Riccati matrix P."""

    K: np.ndarray
    P: np.ndarray


def solve_dare(A, B, Q, R_lqr, tol: float = 1e-10, max_iter: int = 10_000) -> LqrGain:
    """Fixed-point iteration of the discrete Riccati recursion.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P = Q until the
    Frobenius change drops below ``tol``.  Raises on divergence, which signals
    an unstabilizable (A, B) pair.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    Q = np.asarray(Q, float)
    R_lqr = np.asarray(R_lqr, float)
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R_lqr + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise ArithmeticError("DARE diverged")
        if np.linalg.norm(P_next - P, "fro") <= tol:
            K = np.linalg.solve(R_lqr + B.T @ P_next @ B, B.T @ P_next @ A)
            return LqrGain(K=K, P=P_next)
        P = P_next
    raise ArithmeticError("DARE diverged")


class Policy:
    """Black-box control policy: maps (state, step index) to an input.

    Deterministic and re-entrant; the step index is passed in, never stored.
    """

    def __init__(self, query_fn: Callable[[np.ndarray, int], np.ndarray]):
        self._query_fn = query_fn

    def query(self, x, k: int = 0) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._query_fn(np.asarray(x, float), int(k)), float))


def sinusoid_reference(n: int, m: int, dt: float, amplitude: float, period: float,
                       position_index: int = 0, velocity_index: int = 1,
                       input_follows_position: bool = False):
    """Reference provider for sinusoidal position tracking.

    Returns (x_ref, u_ref) at step k.  The velocity component carries the
    analytic derivative; all other states reference zero.
    """
    omega = 2.0 * np.pi / period

    def ref(k: int):
        t = k * dt
        x_ref = np.zeros(n)
        x_ref[position_index] = amplitude * np.sin(omega * t)
        x_ref[velocity_index] = amplitude * omega * np.cos(omega * t)
        u_ref = np.zeros(m)
        if input_follows_position:
            u_ref[0] = x_ref[position_index]
        return x_ref, u_ref

    return ref


def constant_reference(n: int, m: int, x_ref=None, u_ref=None):
    """Reference provider for stabilization at a fixed setpoint."""
    x0 = np.zeros(n) if x_ref is None else np.asarray(x_ref, float)
    u0 = np.zeros(m) if u_ref is None else np.asarray(u_ref, float)

    def ref(k: int):
        return x0.copy(), u0.copy()

    return ref


def lqr_policy(gain: LqrGain, reference) -> Policy:
    """Tracking LQR: u = u_ref(k) - K (x - x_ref(k))."""
    K = np.asarray(gain.K, float)

    def query(x, k):
        x_ref, u_ref = reference(k)
        return u_ref - K @ (x - x_ref)

    return Policy(query)


def aggressive_policy(gain: LqrGain, reference, gain_scale: float = 1.0) -> Policy:
    """Deterministic unsafe stand-in for a learned controller.

    A (possibly gain-boosted) LQR tracking a reference that crosses the
    constraint boundaries, so rollouts from suitable start states violate the
    state constraints while remaining a pure function of (x, k).
    """
    boosted = LqrGain(K=gain_scale * np.asarray(gain.K, float), P=gain.P)
    return lqr_policy(boosted, reference)
