"""Quadratic stage/terminal costs and their exact local expansions.

Stage cost l(x, u) = 0.5 x'Qx + 0.5 u'Ru, terminal l_f(x) = 0.5 x'Qf x,
time-invariant across the horizon. Because the cost is already quadratic,
the Taylor expansion around a nominal point is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import DimensionError


def _check_symmetric_psd(M: np.ndarray, name: str, strict: bool):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12):
        raise DimensionError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(M)
    if strict and eigs[0] <= 0:
        raise DimensionError(f"{name} must be positive definite, min eig {eigs[0]}")
    if not strict and eigs[0] < -1e-12:
        raise DimensionError(f"{name} must be PSD, min eig {eigs[0]}")


@dataclass(frozen=True)
class QuadCost:
    """Quadratic regulator weights: stage Q (PSD), stage R (PD), terminal Qf (PSD)."""

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "Qf", np.asarray(self.Qf, dtype=float))
        _check_symmetric_psd(self.Q, "Q", strict=False)
        _check_symmetric_psd(self.R, "R", strict=True)
        _check_symmetric_psd(self.Qf, "Qf", strict=False)
        if self.Qf.shape != self.Q.shape:
            raise DimensionError("Q and Qf must have the same shape")
        if self.horizon < 1:
            raise DimensionError("horizon must be >= 1")

    @property
    def state_dim(self) -> int:
        return self.Q.shape[0]

    @property
    def control_dim(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class CostExpansion:
    """Exact quadratic expansion of the stage cost at a nominal point.

    q_vec = Q x_nom, r_vec = R u_nom; Q_mat/R_mat are the (constant)
    Hessians; value is the stage cost at the nominal point itself.
    """

    q_vec: np.ndarray
    r_vec: np.ndarray
    Q_mat: np.ndarray
    R_mat: np.ndarray
    value: float


def stage_cost(c: QuadCost, x: np.ndarray, u: np.ndarray) -> float:
    """0.5 x'Qx + 0.5 u'Ru; nonnegative for PSD Q, PD R."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (c.state_dim,) or u.shape != (c.control_dim,):
        raise DimensionError(f"stage_cost shapes {x.shape}, {u.shape}")
    return 0.5 * float(x @ c.Q @ x) + 0.5 * float(u @ c.R @ u)


def terminal_cost(c: QuadCost, x: np.ndarray) -> float:
    """0.5 x'Qf x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (c.state_dim,):
        raise DimensionError(f"terminal_cost shape {x.shape}")
    return 0.5 * float(x @ c.Qf @ x)


def total_cost(
    c: QuadCost,
    traj: Sequence[Tuple[np.ndarray, np.ndarray]],
    x_final: np.ndarray,
) -> float:
    """Sum of stage costs over the horizon plus the terminal cost."""
    if len(traj) != c.horizon:
        raise DimensionError(
            f"trajectory length {len(traj)} != horizon {c.horizon}"
        )
    J = 0.0
    for x, u in traj:
        J += stage_cost(c, x, u)
    return J + terminal_cost(c, x_final)


def expand(c: QuadCost, x_nom: np.ndarray, u_nom: np.ndarray) -> CostExpansion:
    """Exact expansion of the stage cost at (x_nom, u_nom)."""
    x_nom = np.asarray(x_nom, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    return CostExpansion(
        q_vec=c.Q @ x_nom,
        r_vec=c.R @ u_nom,
        Q_mat=c.Q,
        R_mat=c.R,
        value=stage_cost(c, x_nom, u_nom),
    )
