"""Linear time-invariant dynamics and the trajectory containers they produce.

States follow the planar double-integrator order [p_x, v_x, p_y, v_y];
controls are planar forces [F_x, F_y].
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, NonPositive, UnreachableTrajectory

DEFAULT_MASS = 1.0


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    A: np.ndarray
    B: np.ndarray
    dt: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionMismatch(
                f"B must have {A.shape[0]} rows, got shape {B.shape}")
        if not self.dt > 0:
            raise NonPositive(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    def lifted(self, factor: int) -> "LinearDynamics":
        """Model of `factor` consecutive steps with the control held constant.

        x_{t+d} = A^d x_t + (A^{d-1} + ... + A + I) B u_t, so a trajectory of the
        lifted model is realizable by the original one at its native rate.
        """
        if factor < 1:
            raise NonPositive(f"lift factor must be at least 1, got {factor}")
        if factor == 1:
            return self
        A_d = np.linalg.matrix_power(self.A, factor)
        acc = np.zeros_like(self.A)
        power = np.eye(self.state_dim)
        for _ in range(factor):
            acc += power
            power = power @ self.A
        return LinearDynamics(A=A_d, B=acc @ self.B, dt=self.dt * factor)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (H + 1, n)
    dt: float
    id: str = ""
    actor_class: str = "car"
    start_frame: int = 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2:
            raise DimensionMismatch(
                f"states must be a 2-D array, got shape {states.shape}")
        if len(states) < 2:
            raise DimensionMismatch("a trajectory needs at least two states (H >= 1)")
        if not self.dt > 0:
            raise NonPositive(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "states", states)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return len(self.states)

    def positions(self, selector: np.ndarray) -> np.ndarray:
        return self.states @ np.asarray(selector, dtype=float).T

    def downsample(self, factor: int) -> "Trajectory":
        if factor < 1:
            raise NonPositive(f"downsample factor must be at least 1, got {factor}")
        if factor == 1:
            return self
        return Trajectory(
            states=self.states[::factor],
            dt=self.dt * factor,
            id=self.id,
            actor_class=self.actor_class,
            start_frame=self.start_frame,
        )

    def trimmed(self, first: int) -> "Trajectory":
        return Trajectory(
            states=self.states[first:],
            dt=self.dt,
            id=self.id,
            actor_class=self.actor_class,
            start_frame=self.start_frame + first,
        )


@dataclass(frozen=True, eq=False)
class ControlSequence:
    controls: np.ndarray  # (H, m)

    def __post_init__(self):
        controls = np.asarray(self.controls, dtype=float)
        if controls.ndim == 1:
            controls = controls.reshape(-1, 1)
        if controls.ndim != 2:
            raise DimensionMismatch(
                f"controls must be a 2-D array, got shape {controls.shape}")
        object.__setattr__(self, "controls", controls)

    def __len__(self) -> int:
        return len(self.controls)

    @property
    def control_dim(self) -> int:
        return self.controls.shape[1]


def double_integrator(dt: float, mass: float = DEFAULT_MASS) -> LinearDynamics:
    """Planar point mass: p += dt v, v += dt F / M, per axis."""
    if not dt > 0:
        raise NonPositive(f"dt must be positive, got {dt}")
    if not mass > 0:
        raise NonPositive(f"mass must be positive, got {mass}")
    A = np.eye(4)
    A[0, 1] = dt
    A[2, 3] = dt
    B = np.zeros((4, 2))
    B[1, 0] = dt / mass
    B[3, 1] = dt / mass
    return LinearDynamics(A=A, B=B, dt=dt)


def rollout(dyn: LinearDynamics, x0, u, traj_id: str = "") -> Trajectory:
    if isinstance(u, ControlSequence):
        controls = u.controls
    else:
        controls = np.asarray(u, dtype=float)
        if controls.ndim != 2:
            controls = controls.reshape(-1, dyn.control_dim)
    if controls.shape[1] != dyn.control_dim:
        raise DimensionMismatch(
            f"controls have dimension {controls.shape[1]}, dynamics expect {dyn.control_dim}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dyn.state_dim,):
        raise DimensionMismatch(
            f"initial state must have shape ({dyn.state_dim},), got {x0.shape}")

    states = np.empty((len(controls) + 1, dyn.state_dim))
    states[0] = x0
    for t, u_t in enumerate(controls):
        states[t + 1] = dyn.A @ states[t] + dyn.B @ u_t
    return Trajectory(states=states, dt=dyn.dt, id=traj_id)


def prediction_matrices(dyn: LinearDynamics, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """Condensed map from stacked controls to stacked states x_1..x_H.

    Returns (Phi, Gamma) with X = Phi U + Gamma x_0, where X stacks x_1..x_H
    and U stacks u_0..u_{H-1}.
    """
    n, m = dyn.state_dim, dyn.control_dim
    Phi = np.zeros((horizon * n, horizon * m))
    Gamma = np.zeros((horizon * n, n))
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(powers[-1] @ dyn.A)
    for t in range(horizon):
        Gamma[t * n:(t + 1) * n] = powers[t + 1]
        for s in range(t + 1):
            Phi[t * n:(t + 1) * n, s * m:(s + 1) * m] = powers[t - s] @ dyn.B
    return Phi, Gamma


def recover_controls(dyn: LinearDynamics, traj: Trajectory,
                     residual_tol: Optional[float] = None) -> ControlSequence:
    """Least-squares controls reproducing the trajectory's transitions."""
    if traj.state_dim != dyn.state_dim:
        raise DimensionMismatch(
            f"trajectory states have dimension {traj.state_dim}, dynamics expect {dyn.state_dim}")
    x = traj.states
    rhs = (x[1:] - x[:-1] @ dyn.A.T).T
    u, *_ = np.linalg.lstsq(dyn.B, rhs, rcond=None)
    controls = u.T
    if residual_tol is not None:
        residual = np.max(np.abs(dyn.B @ u - rhs)) if rhs.size else 0.0
        if residual > residual_tol:
            raise UnreachableTrajectory(traj.id, float(residual))
    return ControlSequence(controls=controls)
