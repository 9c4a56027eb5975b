"""Plant models: car-like robot, Euler discretization, analytic linearization.

States and controls are plain float ndarrays. The car-like robot uses the
kinematic bicycle convention:

    state   x = [x, y, theta, v]      positions [m], yaw [rad], speed [m/s]
    control u = [a, delta]            acceleration [m/s^2], steering [rad]

    xdot = v*cos(theta),  ydot = v*sin(theta),
    thetadot = (v/L)*tan(delta),  vdot = a

Discretization is explicit Euler with additive process noise:
x_{t+1} = x_t + f(x_t, u_t)*dt + w_t (the noise map is the identity).
Yaw is kept unwrapped; no modular reduction happens anywhere in the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .errors import NumericalFault, SingularLinearization

STATE_LABELS = ("x", "y", "theta", "v")
CONTROL_LABELS = ("a", "delta")


@dataclass(frozen=True)
class Linearization:
    """Jacobians of the discrete-time step around a nominal point.

    A = I + dt * df/dx and B = dt * df/du, so A -> I as dt -> 0.
    """

    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class PlantModel:
    """Continuous-time drift plus time step; noise enters additively.

    Attributes:
        state_dim: dimension of the state vector
        control_dim: dimension of the control vector
        dt: integration time step [s], > 0 (0 allowed for identity stepping)
        drift: f(x, u) -> xdot, shape (state_dim,)
        drift_jacobians: (x, u) -> (df/dx, df/du) evaluated analytically
    """

    state_dim: int
    control_dim: int
    dt: float
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    drift_jacobians: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError("dt must be nonnegative")


def car_like_robot(wheelbase: float = 0.3, dt: float = 0.1) -> PlantModel:
    """Kinematic bicycle model of a car-like robot.

    Args:
        wheelbase: vehicle length L [m]
        dt: time step [s]
    """
    L = float(wheelbase)

    def drift(x, u):
        theta, v = x[2], x[3]
        a, delta = u[0], u[1]
        return np.array(
            [v * np.cos(theta), v * np.sin(theta), v * np.tan(delta) / L, a]
        )

    def drift_jacobians(x, u):
        theta, v = x[2], x[3]
        delta = u[1]
        c, s = np.cos(theta), np.sin(theta)
        cd = np.cos(delta)
        if abs(delta) >= np.pi / 2 or cd == 0.0:
            raise SingularLinearization(
                f"steering angle {delta:.4f} rad at the tan singularity"
            )
        td = np.tan(delta)
        fx = np.array(
            [
                [0.0, 0.0, -v * s, c],
                [0.0, 0.0, v * c, s],
                [0.0, 0.0, 0.0, td / L],
                [0.0, 0.0, 0.0, 0.0],
            ]
        )
        fu = np.array(
            [
                [0.0, 0.0],
                [0.0, 0.0],
                [0.0, v / (L * cd * cd)],
                [1.0, 0.0],
            ]
        )
        return fx, fu

    return PlantModel(4, 2, float(dt), drift, drift_jacobians)


def linear_plant(A_c: np.ndarray, B_c: np.ndarray, dt: float = 1.0) -> PlantModel:
    """Linear time-invariant plant xdot = A_c x + B_c u (handy for tests/demos).

    The discrete step is x + (A_c x + B_c u) dt + w, so the step Jacobians are
    A = I + A_c dt and B = B_c dt.
    """
    A_c = np.asarray(A_c, dtype=float)
    B_c = np.asarray(B_c, dtype=float)
    n, m = B_c.shape

    def drift(x, u):
        return A_c @ x + B_c @ u

    def drift_jacobians(x, u):
        return A_c, B_c

    return PlantModel(n, m, float(dt), drift, drift_jacobians)


def step(model: PlantModel, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One Euler step x + f(x, u)*dt + w of the stochastic system.

    Noise w must have state dimension (the noise map is the identity).
    Raises NumericalFault if the result is not finite.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (model.state_dim,) or u.shape != (model.control_dim,):
        raise NumericalFault(
            f"state/control shape mismatch: {x.shape}, {u.shape}"
        )
    if w.shape != (model.state_dim,):
        raise NumericalFault(f"noise must have state dimension, got {w.shape}")
    x_next = x + model.drift(x, u) * model.dt + w
    if not np.all(np.isfinite(x_next)):
        raise NumericalFault(f"non-finite state after step: {x_next}")
    return x_next


def linearize(model: PlantModel, x_nom: np.ndarray, u_nom: np.ndarray) -> Linearization:
    """Discrete-step Jacobians A = I + dt*df/dx, B = dt*df/du at a nominal point."""
    x_nom = np.asarray(x_nom, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    if not (np.all(np.isfinite(x_nom)) and np.all(np.isfinite(u_nom))):
        raise NumericalFault("non-finite nominal point in linearize")
    fx, fu = model.drift_jacobians(x_nom, u_nom)
    A = np.eye(model.state_dim) + model.dt * fx
    B = model.dt * fu
    return Linearization(A=A, B=B)
