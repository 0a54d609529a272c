"""Dual-mode agent dynamics, guidance laws and truth simulation.

The agent follows the closed-loop drift of mode ``alpha`` until the change
step and mode ``beta`` from then on. Drift callables must accept states with
arbitrary leading batch axes, shape ``(..., dim_state)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np
import scipy.linalg

Mode = Literal["alpha", "beta"]
MODES = ("alpha", "beta")


class RiccatiError(ValueError):
    """Raised when no stabilizing Riccati solution is found."""


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be 'alpha' or 'beta', got {mode!r}")
    return mode


@dataclass(frozen=True)
class DualModeModel:
    """Agent model known to the observer.

    Parameters
    ----------
    dim_state:
        State dimension.
    drift_alpha, drift_beta:
        Closed-loop drifts ``x -> F_j(x, kappa_j(x))``.
    diffusion_alpha, diffusion_beta:
        Diffusion matrices ``B_j`` with ``dim_state`` rows.
    epsilon:
        Noise intensity in ``[0, 1)``.
    dt:
        Sampling period.
    angle_indices:
        State coordinates kept in (-pi, pi] after every discrete step.
    """

    dim_state: int
    drift_alpha: Callable[[np.ndarray], np.ndarray]
    drift_beta: Callable[[np.ndarray], np.ndarray]
    diffusion_alpha: np.ndarray
    diffusion_beta: np.ndarray
    epsilon: float = 0.0
    dt: float = 0.01
    angle_indices: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dim_state < 1:
            raise ValueError("dim_state must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        for name in ("diffusion_alpha", "diffusion_beta"):
            Bm = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if Bm.shape[0] != self.dim_state:
                raise ValueError(f"{name} must have {self.dim_state} rows")
            object.__setattr__(self, name, Bm)
        object.__setattr__(self, "angle_indices", tuple(int(i) for i in self.angle_indices))

    def drift(self, mode: Mode):
        return self.drift_alpha if _check_mode(mode) == "alpha" else self.drift_beta

    def diffusion(self, mode: Mode) -> np.ndarray:
        return self.diffusion_alpha if _check_mode(mode) == "alpha" else self.diffusion_beta


@dataclass(frozen=True)
class DiscreteMap:
    """Euler-Maruyama transition ``x -> x + dt * F(x)`` and its noise covariance."""

    drift: Callable[[np.ndarray], np.ndarray]
    dt: float
    process_cov: np.ndarray
    angle_indices: tuple[int, ...] = ()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = x + self.dt * np.asarray(self.drift(x), dtype=float)
        if self.angle_indices:
            idx = list(self.angle_indices)
            out[..., idx] = wrap_angle(out[..., idx])
        return out


def discretize(model: DualModeModel, mode: Mode) -> DiscreteMap:
    Bm = model.diffusion(mode)
    Q = model.epsilon**2 * model.dt * (Bm @ Bm.T)
    return DiscreteMap(model.drift(mode), model.dt, Q, model.angle_indices)


@dataclass(frozen=True)
class Target:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).ravel())
        if not self.radius > 0:
            raise ValueError("target radius must be positive")


def in_target(x, target: Target) -> bool:
    """Closed-ball membership using the leading (position) coordinates of ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    k = target.center.size
    if x.size < k:
        raise ValueError(f"state has {x.size} coordinates, target needs {k}")
    return bool(np.linalg.norm(x[:k] - target.center) <= target.radius)


@dataclass(frozen=True)
class ChangePrior:
    """Geometric prior ``pi_k = d (1 - d)^(k-1)`` on the change step, k >= 1."""

    d: float

    def __post_init__(self):
        if not 0.0 < self.d < 1.0:
            raise ValueError("d must lie in (0, 1)")

    def log_pmf(self, k):
        k = np.asarray(k, dtype=float)
        return np.log(self.d) + (k - 1.0) * np.log1p(-self.d)

    def pmf(self, k):
        return np.exp(self.log_pmf(k))

    def log_survival(self, n):
        """``log P(nu > n) = n log(1 - d)``."""
        return np.asarray(n, dtype=float) * np.log1p(-self.d)

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.geometric(self.d))


# --------------------------------------------------------------------------
# Riccati / LQR


def _stabilizing_seed(A, B):
    # Bass's method: for beta > max Re(-A), K0 = B^T Z^-1 with
    # (A + beta I) Z + Z (A + beta I)^T = 2 B B^T gives A - B K0 Hurwitz.
    n = A.shape[0]
    if np.max(np.linalg.eigvals(A).real) < 0:
        return np.zeros((B.shape[1], n))
    beta = np.linalg.norm(A, 2) + 1.0
    Ab = A + beta * np.eye(n)
    Z = scipy.linalg.solve_continuous_lyapunov(Ab, 2.0 * B @ B.T)
    K0 = B.T @ np.linalg.pinv(Z)
    if np.max(np.linalg.eigvals(A - B @ K0).real) >= 0:
        raise RiccatiError("unstabilizable linearization")
    return K0


def solve_riccati(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100):
    """Continuous algebraic Riccati equation by Newton-Kleinman iteration.

    Returns the stabilizing solution ``P`` of
    ``A^T P + P A - P B R^-1 B^T P + Q = 0``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if B.shape[0] != A.shape[0]:
        B = B.T
    K = _stabilizing_seed(A, B)
    P_prev = None
    for _ in range(max_iter):
        Acl = A - B @ K
        P = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)):
            break
        K = np.linalg.solve(R, B.T @ P)
        if P_prev is not None and np.linalg.norm(P - P_prev) < tol * max(1.0, np.linalg.norm(P)):
            return P
        P_prev = P
    raise RiccatiError("unstabilizable linearization")


def lqr_gain(A, B, Q, R, tol: float = 1e-10):
    """State-feedback gain ``K = R^-1 B^T P`` for ``u = -K x``."""
    P = solve_riccati(A, B, Q, R, tol=tol)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != P.shape[0]:
        B = B.T
    return np.linalg.solve(np.atleast_2d(np.asarray(R, dtype=float)), B.T @ P)


@dataclass(frozen=True)
class GuidanceLaw:
    """LQR guidance of a unicycle toward a planar target.

    The unicycle is feedback-linearized about a look-ahead point
    ``p + lookahead * (cos theta, sin theta)``, whose velocity is an
    invertible function of ``(v, w)``. The linearized plant is then a planar
    single integrator and the gain comes from the Riccati equation with
    ``Q = state_weight * I`` and ``R = control_weight * I``.
    """

    target: np.ndarray
    gain: np.ndarray
    lookahead: float
    speed_bounds: Optional[tuple[float, float]] = None
    turn_bounds: Optional[tuple[float, float]] = None

    @property
    def closed_loop_matrix(self) -> np.ndarray:
        return -self.gain

    def lookahead_point(self, x):
        x = np.asarray(x, dtype=float)
        th = x[..., 2]
        return x[..., :2] + self.lookahead * np.stack([np.cos(th), np.sin(th)], axis=-1)

    def __call__(self, x):
        """Return ``(v, w)`` for states of shape ``(..., 3)``."""
        x = np.asarray(x, dtype=float)
        th = x[..., 2]
        c, s = np.cos(th), np.sin(th)
        err = self.lookahead_point(x) - self.target
        u = -err @ self.gain.T
        v = c * u[..., 0] + s * u[..., 1]
        w = (-s * u[..., 0] + c * u[..., 1]) / self.lookahead
        if self.speed_bounds is not None:
            v = np.clip(v, *self.speed_bounds)
        if self.turn_bounds is not None:
            w = np.clip(w, *self.turn_bounds)
        return v, w


def lqr_guidance(
    target,
    state_weight: float = 10.0,
    control_weight: float = 1.0,
    lookahead: float = 0.05,
    speed_bounds=None,
    turn_bounds=None,
) -> GuidanceLaw:
    if not lookahead > 0:
        raise ValueError("lookahead must be positive")
    target = np.asarray(target, dtype=float).ravel()
    A = np.zeros((2, 2))
    B = np.eye(2)
    K = lqr_gain(A, B, state_weight * np.eye(2), control_weight * np.eye(2))
    return GuidanceLaw(target, K, float(lookahead), speed_bounds, turn_bounds)


def unicycle_drift(law: GuidanceLaw) -> Callable[[np.ndarray], np.ndarray]:
    """Closed-loop unicycle drift ``(v cos th, v sin th, w)``."""

    def drift(x):
        x = np.asarray(x, dtype=float)
        v, w = law(x)
        th = x[..., 2]
        return np.stack([v * np.cos(th), v * np.sin(th), w], axis=-1)

    return drift


@dataclass(frozen=True)
class UnicycleConfig:
    initial_state: tuple[float, float, float] = (-2.0, 0.0, -np.pi / 4)
    state_weight: float = 10.0
    control_weight: float = 1.0
    lookahead: float = 0.05
    speed_bounds: Optional[tuple[float, float]] = None
    turn_bounds: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class CaseStudy:
    """Bundle of the unicycle model with its targets and initial state."""

    model: DualModeModel
    initial_state: np.ndarray
    target_alpha: Target
    target_beta: Target
    laws: dict = field(default_factory=dict)


def unicycle_model(
    config: UnicycleConfig,
    target_alpha: Target,
    target_beta: Target,
    dt: float = 0.01,
    epsilon: float = 0.0,
    diffusion: Optional[np.ndarray] = None,
) -> CaseStudy:
    laws = {}
    for name, tgt in (("alpha", target_alpha), ("beta", target_beta)):
        laws[name] = lqr_guidance(
            tgt.center,
            config.state_weight,
            config.control_weight,
            config.lookahead,
            config.speed_bounds,
            config.turn_bounds,
        )
    Bm = np.eye(3) if diffusion is None else np.asarray(diffusion, dtype=float)
    model = DualModeModel(
        dim_state=3,
        drift_alpha=unicycle_drift(laws["alpha"]),
        drift_beta=unicycle_drift(laws["beta"]),
        diffusion_alpha=Bm,
        diffusion_beta=Bm,
        epsilon=epsilon,
        dt=dt,
        angle_indices=(2,),
    )
    return CaseStudy(model, np.asarray(config.initial_state, dtype=float), target_alpha, target_beta, laws)


def simulate_truth(
    model: DualModeModel,
    initial_state: Sequence[float],
    horizon: int,
    rng: Optional[np.random.Generator] = None,
    nu: Optional[int] = None,
    prior: Optional[ChangePrior] = None,
):
    """Simulate ``X_0 .. X_horizon`` with a switch at step ``nu``.

    The transition into ``X_n`` uses mode alpha for ``n < nu`` and mode beta
    for ``n >= nu``. When ``nu`` is None it is drawn from ``prior``.

    Returns
    -------
    nu : int
    states : ndarray, shape (horizon + 1, dim_state)
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if nu is None:
        if prior is None:
            raise ValueError("either nu or prior must be given")
        nu = prior.sample(rng)
    nu = int(nu)
    maps = {m: discretize(model, m) for m in MODES}
    x = np.asarray(initial_state, dtype=float).copy()
    states = np.empty((horizon + 1, model.dim_state))
    states[0] = x
    noisy = model.epsilon > 0
    for n in range(1, horizon + 1):
        f = maps["alpha" if n < nu else "beta"]
        x = f(x)
        if noisy:
            x = x + rng.multivariate_normal(np.zeros(model.dim_state), f.process_cov)
            if model.angle_indices:
                idx = list(model.angle_indices)
                x[idx] = wrap_angle(x[idx])
        states[n] = x
    return nu, states


def linear_model(A_alpha, A_beta, dt: float, diffusion=None, epsilon: float = 0.0,
                 offset_alpha=None, offset_beta=None) -> DualModeModel:
    """Dual-mode model with affine drifts ``F_j(x) = A_j x + c_j``."""
    A_alpha = np.atleast_2d(np.asarray(A_alpha, dtype=float))
    A_beta = np.atleast_2d(np.asarray(A_beta, dtype=float))
    n = A_alpha.shape[0]
    ca = np.zeros(n) if offset_alpha is None else np.asarray(offset_alpha, dtype=float)
    cb = np.zeros(n) if offset_beta is None else np.asarray(offset_beta, dtype=float)

    def fa(x):
        return np.asarray(x, dtype=float) @ A_alpha.T + ca

    def fb(x):
        return np.asarray(x, dtype=float) @ A_beta.T + cb

    Bm = np.eye(n) if diffusion is None else diffusion
    return DualModeModel(n, fa, fb, Bm, Bm, epsilon=epsilon, dt=dt)
