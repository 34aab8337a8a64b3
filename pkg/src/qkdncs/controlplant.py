"""Discrete servo plant, PI controller and Kalman filter.

State transitions are pure: each function takes a state record and returns a
new one, leaving sequencing to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SingularInnovationError

DEFAULT_TS = 0.01
DEFAULT_DAMPING = 20.0
DEFAULT_GAIN = 10.0


@dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Ts: float = DEFAULT_TS

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(-1, 1) if B.ndim == 1 else np.atleast_2d(B)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ValueError(f"inconsistent plant dimensions A{A.shape} B{B.shape} C{C.shape}")
        if self.Ts <= 0:
            raise ValueError("sample time must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @classmethod
    def servo(cls, Ts: float = DEFAULT_TS, damping: float = DEFAULT_DAMPING, gain: float = DEFAULT_GAIN):
        """Damped double integrator: position and velocity of a motor-driven axis."""
        A = np.array([[1.0, Ts], [0.0, 1.0 - damping * Ts]])
        B = np.array([[0.0], [gain * Ts]])
        C = np.array([[1.0, 0.0]])
        return cls(A, B, C, Ts)


def plant_step(model: PlantModel, x, u, w=0.0) -> tuple[np.ndarray, np.ndarray]:
    """x_next = A x + B (u + w);  y = C x_next."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.n_states:
        raise ValueError(f"state has {x.shape[0]} entries, plant expects {model.n_states}")
    p = model.B.shape[1]
    drive = np.broadcast_to(np.asarray(u, dtype=float), (p,)) + np.broadcast_to(
        np.asarray(w, dtype=float), (p,)
    )
    x_next = model.A @ x + model.B @ drive
    return x_next, model.C @ x_next


@dataclass(frozen=True)
class PIController:
    kp: float = 8.0
    ki: float = 4.0
    Ts: float = DEFAULT_TS
    clamp: tuple[float, float] = (-10.0, 10.0)
    integrator: float = 0.0

    @property
    def feedback_F(self) -> float:
        """Static-gain view of the law (exact only when ki == 0)."""
        return self.kp

    def reset(self) -> PIController:
        return replace(self, integrator=0.0)


def pi_control(ctrl: PIController, r: float, y: float) -> tuple[float, PIController]:
    """One forward-Euler PI step with conditional-integration anti-windup.

    Returns the (saturated) command and the updated controller.
    """
    if not np.isfinite(ctrl.integrator):
        raise ValueError("controller integrator is not finite")
    e = r - y
    integ = ctrl.integrator + e * ctrl.Ts
    u = ctrl.kp * e + ctrl.ki * integ
    lo, hi = ctrl.clamp
    if u > hi or u < lo:
        # freeze the integrator while saturated
        integ = ctrl.integrator
        u = min(hi, max(lo, ctrl.kp * e + ctrl.ki * integ))
    return float(u), replace(ctrl, integrator=integ)


@dataclass(frozen=True)
class KalmanState:
    x_hat: np.ndarray
    P_cov: np.ndarray
    Q_cov: np.ndarray
    R_cov: np.ndarray
    gain_K: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @classmethod
    def initial(cls, model: PlantModel, Q, R, x0=None, P0=None) -> KalmanState:
        n, q = model.n_states, model.C.shape[0]
        return cls(
            x_hat=np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n),
            P_cov=np.eye(n) if P0 is None else np.atleast_2d(np.asarray(P0, dtype=float)),
            Q_cov=np.atleast_2d(np.asarray(Q, dtype=float)),
            R_cov=np.atleast_2d(np.asarray(R, dtype=float)),
            gain_K=np.zeros((n, q)),
        )


def kalman_predict(ks: KalmanState, model: PlantModel, u_prev) -> KalmanState:
    x = model.A @ ks.x_hat + model.B @ np.atleast_1d(np.asarray(u_prev, dtype=float))
    P = model.A @ ks.P_cov @ model.A.T + ks.Q_cov
    return replace(ks, x_hat=x, P_cov=P)


def kalman_update(ks: KalmanState, model: PlantModel, y) -> KalmanState:
    C = model.C
    S = C @ ks.P_cov @ C.T + ks.R_cov
    try:
        # K = P C^T S^-1, solved as S^T K^T = C P^T
        K = np.linalg.solve(S.T, C @ ks.P_cov.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("innovation covariance is singular") from exc
    if not np.all(np.isfinite(K)):
        raise SingularInnovationError("Kalman gain is not finite")
    innovation = np.atleast_1d(np.asarray(y, dtype=float)) - C @ ks.x_hat
    x = ks.x_hat + K @ innovation
    P = (np.eye(model.n_states) - K @ C) @ ks.P_cov
    P = 0.5 * (P + P.T)
    return replace(ks, x_hat=x, P_cov=P, gain_K=K)
