"""Small reference models with known closed-form behaviour."""

from __future__ import annotations

import numpy as np

from .dynamics import DualModeModel, linear_model

A_ALPHA = np.array([[-1.0, 0.5], [-0.5, -1.0]])
A_BETA = np.array([[-1.0, -0.5], [0.5, -1.0]])


def linear_pair(dt: float = 0.1, epsilon: float = 0.5) -> DualModeModel:
    """Two damped rotations pulled toward ``(1, 0)`` and ``(0, 1)``."""
    return linear_model(A_ALPHA, A_BETA, dt, epsilon=epsilon, offset_alpha=[1.0, 0.0], offset_beta=[0.0, 1.0])


def mean_shift(mu: float, q: float, dt: float = 1.0) -> DualModeModel:
    """Scalar model whose discrete map forgets the past.

    With ``dt = 1`` the Euler step sends any ``x`` to ``0`` (alpha) or ``mu``
    (beta), so states are i.i.d. ``N(0, q)`` or ``N(mu, q)``. Observed with
    noise variance ``R`` the per-step KL rate is ``mu^2 / (2 (q + R))``.
    """
    if dt != 1.0:
        raise ValueError("the i.i.d. property needs dt = 1")
    eps = 0.5
    B = np.array([[np.sqrt(q) / eps]])
    return linear_model([[-1.0]], [[-1.0]], dt, diffusion=B, epsilon=eps, offset_alpha=[0.0], offset_beta=[mu])


def mean_shift_kl(mu: float, q: float, R: float) -> float:
    return mu**2 / (2.0 * (q + R))


def double_well(dt: float = 0.1, epsilon: float = 0.5, centers=(1.0, -1.0)) -> DualModeModel:
    """Scalar cubic drifts ``-(x - c)(1 + (x - c)^2 / 2)`` with one center per mode."""
    ca, cb = centers

    def drift(c):
        def f(x):
            z = np.asarray(x, dtype=float) - c
            return -z * (1.0 + 0.5 * z**2)

        return f

    return DualModeModel(1, drift(ca), drift(cb), np.eye(1), np.eye(1), epsilon=epsilon, dt=dt)
