"""Risk-sensitive DDP: exponential-quadratic backward recursion and inner solve.

Minimizes the entropic risk R_theta(J) = (1/theta) log E_q[exp(theta J)] of a
quadratic trajectory cost under linearized dynamics with zero-mean Gaussian
reference noise of per-step diagonal covariance W_t. At theta = 0 the
recursion reduces exactly to the standard LQR/iLQG Riccati recursion, which is
how the iLQG baseline is obtained (same code, theta = 0).

Per backward step, with value V_{t+1}(dx) = 0.5 dx'S dx + s'dx + s0 and
y = A dx + B du, the risk of V_{t+1}(y + w), w ~ N(0, W), is again quadratic
with inflated coefficients

    S~ = (I - theta S W)^{-1} S,      s~ = (I - theta S W)^{-1} s,

plus a scalar increment (theta/2) s'W s~ - (1/(2 theta)) log det(I - theta S W).
The inverse-free form keeps singular W (including W = 0) well defined. The
gain equations are

    H = R + B'S~B,  G = B'S~A,  g = r + B's~,  k = -H^{-1} g,  K = -H^{-1} G,

and feasibility requires theta * lambda_max(W^{1/2} S W^{1/2}) < 1 at every
step (equivalently, W^{-1} - theta S positive definite for invertible W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .costs import CostExpansion, QuadCost, expand, stage_cost, terminal_cost
from .dynamics import Linearization, PlantModel, linearize, step
from .errors import NumericalFault, RiskInfeasible, SingularH, SingularLinearization


@dataclass
class QuadraticValue:
    """Quadratic value function 0.5 dx'S dx + s_vec'dx + s_scalar."""

    S: np.ndarray
    s_vec: np.ndarray
    s_scalar: float

    def __call__(self, dx: np.ndarray) -> float:
        return 0.5 * float(dx @ self.S @ dx) + float(self.s_vec @ dx) + self.s_scalar


@dataclass
class AffinePolicy:
    """Per-step affine feedback du_t = k_t + K_t (x_t - x_nom_t) around a nominal."""

    k: np.ndarray  # (n, control_dim)
    K: np.ndarray  # (n, control_dim, state_dim)
    x_nom: np.ndarray  # (n+1, state_dim)
    u_nom: np.ndarray  # (n, control_dim)

    @property
    def horizon(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class RiskParams:
    """Risk sensitivity theta >= 0 and per-step diagonal noise covariances.

    W_seq has shape (n, state_dim): row t holds the diagonal of W_t.
    """

    theta: float
    W_seq: np.ndarray

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        W = np.asarray(self.W_seq, dtype=float)
        if W.ndim != 2 or np.any(W < 0):
            raise ValueError("W_seq must be (n, state_dim) with nonnegative entries")
        object.__setattr__(self, "W_seq", W)


@dataclass
class BackwardAux:
    """Per-step H/G/g block of the gain equations (kept for diagnostics)."""

    H: np.ndarray
    G: np.ndarray
    g_vec: np.ndarray


@dataclass(frozen=True)
class SolverOptions:
    """Inner-solve knobs: convergence, iteration cap, Levenberg bounds, line search."""

    tol: float = 1e-6
    max_iters: int = 100
    reg_init: float = 1e-6
    reg_max: float = 1e2
    ls_backtracks: int = 10  # alpha in {1, 0.5, ..., 2^-ls_backtracks}


@dataclass
class SolveResult:
    """Converged (or best-so-far) policy with its entropic-risk value."""

    policy: AffinePolicy
    risk_value: float
    converged: bool
    iterations: int


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _inflate(
    S_next: np.ndarray, s_next: np.ndarray, w_diag: np.ndarray, theta: float
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Risk-inflate (S, s) through one noisy step; returns (S~, s~, scalar inc).

    Raises RiskInfeasible when theta is outside the feasible set for this step.
    """
    if theta == 0.0:
        # Risk-neutral limit: expectation adds 0.5 tr(S W).
        return S_next, s_next, 0.5 * float(np.diag(S_next) @ w_diag)

    sqw = np.sqrt(w_diag)
    P = _sym(sqw[:, None] * S_next * sqw[None, :])
    lam = np.linalg.eigvalsh(P)
    margin = 1.0 - theta * lam[-1]
    if margin <= 0.0:
        raise RiskInfeasible(
            f"W^-1 - theta*S lost positive definiteness (theta={theta:g}, "
            f"theta*lambda_max={theta * lam[-1]:g})"
        )
    # det(I - theta S W) = prod(1 - theta lam_i) via Sylvester's identity.
    logdet = float(np.sum(np.log1p(-theta * lam)))
    Lam = np.eye(S_next.shape[0]) - theta * (S_next * w_diag[None, :])
    try:
        S_til = _sym(np.linalg.solve(Lam, S_next))
        s_til = np.linalg.solve(Lam, s_next)
    except np.linalg.LinAlgError:
        # Positive eigenvalue margin but a float-singular solve: the boundary
        # case within machine precision.
        raise RiskInfeasible(
            f"I - theta*S*W numerically singular at theta={theta:g}"
        ) from None
    scalar = 0.5 * theta * float(s_next @ (w_diag * s_til)) - logdet / (2.0 * theta)
    return S_til, s_til, scalar


def _regularized_gains(
    H: np.ndarray,
    G: np.ndarray,
    g: np.ndarray,
    opts: SolverOptions,
    base_reg: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Solve for (k, K) from H + reg*I, escalating reg if H is not PD."""
    reg = base_reg
    eye = np.eye(H.shape[0])
    while True:
        try:
            L = np.linalg.cholesky(H + reg * eye)
        except np.linalg.LinAlgError:
            reg = opts.reg_init if reg == 0.0 else 2.0 * reg
            if reg > opts.reg_max:
                raise SingularH(
                    f"control Hessian not PD after regularization up to {opts.reg_max}"
                )
            continue
        rhs = np.column_stack([g, G])
        sol = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        return -sol[:, 0], -sol[:, 1:]


def backward_pass(
    lin_seq: Sequence[Linearization],
    cost_exp: Sequence[CostExpansion],
    terminal: QuadCost,
    rp: RiskParams,
    x_nom_final: Optional[np.ndarray] = None,
    nominal: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    opts: SolverOptions = SolverOptions(),
    return_aux: bool = False,
    reg: float = 0.0,
):
    """Backward recursion: gains k_t = -H^-1 g, K_t = -H^-1 G and value at t=1.

    The terminal value is the expansion of 0.5 x'Qf x around x_nom_final
    (zeros if omitted). `nominal` optionally embeds (x_nom, u_nom) in the
    returned policy so it can be rolled out directly. With return_aux the
    per-step H/G/g blocks are appended to the result tuple. `reg` adds a
    Levenberg term to the gain solves only (the propagated value keeps the
    true H), which the outer solve adapts when full steps fail.
    """
    n = len(lin_seq)
    if len(cost_exp) != n or rp.W_seq.shape[0] != n:
        raise ValueError("lin_seq, cost_exp and W_seq must all have length n")
    sd = lin_seq[0].A.shape[0]
    cd = lin_seq[0].B.shape[1]
    xf = np.zeros(sd) if x_nom_final is None else np.asarray(x_nom_final, float)

    S = terminal.Qf.copy()
    s = terminal.Qf @ xf
    s0 = 0.5 * float(xf @ terminal.Qf @ xf)

    k_seq = np.zeros((n, cd))
    K_seq = np.zeros((n, cd, sd))
    aux: List[Optional[BackwardAux]] = [None] * n

    for t in range(n - 1, -1, -1):
        S_til, s_til, inc = _inflate(S, s, rp.W_seq[t], rp.theta)
        A, B = lin_seq[t].A, lin_seq[t].B
        ce = cost_exp[t]

        H = _sym(ce.R_mat + B.T @ S_til @ B)
        G = B.T @ S_til @ A
        g = ce.r_vec + B.T @ s_til
        k, K = _regularized_gains(H, G, g, opts, base_reg=reg)
        k_seq[t] = k
        K_seq[t] = K
        aux[t] = BackwardAux(H=H, G=G, g_vec=g)

        # Value update in gain form (exact for unregularized gains, and the
        # consistent Levenberg evaluation otherwise).
        S = _sym(ce.Q_mat + A.T @ S_til @ A + K.T @ H @ K + K.T @ G + G.T @ K)
        s = ce.q_vec + A.T @ s_til + K.T @ H @ k + K.T @ g + G.T @ k
        s0 = ce.value + s0 + inc + 0.5 * float(k @ H @ k) + float(k @ g)

    if nominal is None:
        x_nom = np.zeros((n + 1, sd))
        u_nom = np.zeros((n, cd))
    else:
        x_nom = np.asarray(nominal[0], float)
        u_nom = np.asarray(nominal[1], float)
    policy = AffinePolicy(k=k_seq, K=K_seq, x_nom=x_nom, u_nom=u_nom)
    value = QuadraticValue(S=S, s_vec=s, s_scalar=s0)
    if return_aux:
        return policy, value, aux
    return policy, value


def evaluate_policy_risk(
    lin_seq: Sequence[Linearization],
    cost_exp: Sequence[CostExpansion],
    terminal: QuadCost,
    rp: RiskParams,
    K_seq: Optional[np.ndarray],
    x_nom_final: np.ndarray,
    dx0: Optional[np.ndarray] = None,
) -> float:
    """Entropic risk of a fixed affine policy du = K dx around its own nominal.

    This is the Bellman-propagated s-scalar for the policy (plus the dx0
    quadratic term when the start deviates from the nominal). With the
    expansion taken around the policy's own rollout, the feedforward is zero
    and K_seq carries the feedback; K_seq=None evaluates the open-loop policy.
    Raises RiskInfeasible if theta is outside the feasible set for this
    trajectory's value recursion.
    """
    n = len(lin_seq)
    sd = lin_seq[0].A.shape[0]
    S = terminal.Qf.copy()
    s = terminal.Qf @ x_nom_final
    s0 = 0.5 * float(x_nom_final @ terminal.Qf @ x_nom_final)
    for t in range(n - 1, -1, -1):
        S_til, s_til, inc = _inflate(S, s, rp.W_seq[t], rp.theta)
        A, B = lin_seq[t].A, lin_seq[t].B
        ce = cost_exp[t]
        if K_seq is None:
            Acl = A
            S = _sym(ce.Q_mat + Acl.T @ S_til @ Acl)
            s = ce.q_vec + Acl.T @ s_til
        else:
            K = K_seq[t]
            Acl = A + B @ K
            S = _sym(ce.Q_mat + K.T @ ce.R_mat @ K + Acl.T @ S_til @ Acl)
            s = ce.q_vec + K.T @ ce.r_vec + Acl.T @ s_til
        s0 = ce.value + s0 + inc
    if dx0 is None:
        return s0
    dx0 = np.asarray(dx0, float)
    return 0.5 * float(dx0 @ S @ dx0) + float(s @ dx0) + s0


def forward_rollout(
    model: PlantModel,
    policy: AffinePolicy,
    x0: np.ndarray,
    noise: Sequence[np.ndarray],
    alpha: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Roll the affine policy through the plant; returns (states, controls).

    x_{t+1} = step(x_t, u_nom_t + alpha*k_t + K_t (x_t - x_nom_t), w_t).
    `noise` must have length n (pass zeros for a nominal rollout); alpha
    scales the feedforward for line searches.
    """
    n = policy.horizon
    if len(noise) != n:
        raise NumericalFault(f"noise length {len(noise)} != horizon {n}")
    xs = np.zeros((n + 1, model.state_dim))
    us = np.zeros((n, model.control_dim))
    xs[0] = np.asarray(x0, dtype=float)
    for t in range(n):
        u = policy.u_nom[t] + alpha * policy.k[t] + policy.K[t] @ (xs[t] - policy.x_nom[t])
        us[t] = u
        xs[t + 1] = step(model, xs[t], u, noise[t])
    return xs, us


def _expand_along(
    model: PlantModel,
    cost: QuadCost,
    xs: np.ndarray,
    us: np.ndarray,
    w_of_states: Callable[[np.ndarray], np.ndarray],
) -> Tuple[List[Linearization], List[CostExpansion], np.ndarray]:
    """Linearizations, cost expansions and noise covariances along a trajectory."""
    n = us.shape[0]
    lin = [linearize(model, xs[t], us[t]) for t in range(n)]
    exp_seq = [expand(cost, xs[t], us[t]) for t in range(n)]
    W = w_of_states(xs[:n])
    return lin, exp_seq, W


def solve_inner(
    model: PlantModel,
    cost: QuadCost,
    rp: RiskParams,
    x0: np.ndarray,
    u_init: np.ndarray,
    ref: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    opts: SolverOptions = SolverOptions(),
) -> SolveResult:
    """Iterative risk-sensitive DDP for min_u R_theta(J) from x0.

    Repeats linearize -> backward pass -> line-searched rollout until the
    relative change of the policy's Bellman-propagated entropic risk drops
    below opts.tol (or opts.max_iters is hit, in which case the best-so-far
    policy is returned with converged=False). When `ref` is given it maps a
    block of states (t, state_dim) to per-step noise covariance diagonals
    evaluated along the current nominal; otherwise rp.W_seq is fixed.
    RiskInfeasible propagates if theta is infeasible at the solution.
    """
    n = cost.horizon
    x0 = np.asarray(x0, dtype=float)
    u_init = np.asarray(u_init, dtype=float)
    if u_init.shape != (n, model.control_dim):
        raise NumericalFault(f"u_init must be ({n}, {model.control_dim})")

    def w_of_states(states: np.ndarray) -> np.ndarray:
        if ref is None:
            return rp.W_seq
        return np.asarray([ref(x) for x in states], dtype=float)

    zeros_noise = np.zeros((n, model.state_dim))
    open_loop = AffinePolicy(
        k=np.zeros((n, model.control_dim)),
        K=np.zeros((n, model.control_dim, model.state_dim)),
        x_nom=np.tile(x0, (n + 1, 1)),
        u_nom=u_init.copy(),
    )
    xs, us = forward_rollout(model, open_loop, x0, zeros_noise, alpha=0.0)
    lin, exp_seq, W = _expand_along(model, cost, xs, us, w_of_states)
    try:
        merit = evaluate_policy_risk(
            lin, exp_seq, cost, RiskParams(rp.theta, W), None, xs[n]
        )
    except RiskInfeasible:
        merit = np.inf

    policy = open_loop
    converged = False
    iterations = 0
    alphas = 0.5 ** np.arange(opts.ls_backtracks + 1)
    lam = 0.0  # adaptive Levenberg damping, grown when full steps fail

    for it in range(1, opts.max_iters + 1):
        iterations = it
        policy, _ = backward_pass(
            lin, exp_seq, cost, RiskParams(rp.theta, W),
            x_nom_final=xs[n], nominal=(xs, us), opts=opts, reg=lam,
        )
        accepted = False
        for alpha in alphas:
            try:
                xs_c, us_c = forward_rollout(model, policy, x0, zeros_noise, alpha)
                lin_c, exp_c, W_c = _expand_along(model, cost, xs_c, us_c, w_of_states)
                m = evaluate_policy_risk(
                    lin_c, exp_c, cost, RiskParams(rp.theta, W_c),
                    policy.K, xs_c[n],
                )
            except (RiskInfeasible, NumericalFault, SingularLinearization):
                continue  # reject this step length, back off further
            if m < merit:
                rel_change = abs(merit - m) / max(1.0, abs(merit))
                xs, us, lin, exp_seq, W, merit = xs_c, us_c, lin_c, exp_c, W_c, m
                accepted = True
                if np.isfinite(rel_change) and rel_change < opts.tol:
                    converged = True
                break
        if accepted:
            # Trust the model more after (near-)full steps, less when the
            # line search had to back off hard.
            if alpha >= 0.5:
                lam = 0.0 if lam <= opts.reg_init else 0.5 * lam
            else:
                lam = min(opts.reg_init if lam == 0.0 else 4.0 * lam, opts.reg_max)
        else:
            # The quadratic model over-promises here; damp the gains and
            # retry. Once damping is exhausted no step improves: stop.
            if lam >= opts.reg_max:
                converged = True
            else:
                lam = opts.reg_init if lam == 0.0 else 10.0 * lam
        if converged:
            break

    if not np.isfinite(merit):
        raise RiskInfeasible(
            "no feasible policy found: theta infeasible along every candidate"
        )
    # Re-derive gains around the final nominal so the returned policy is
    # self-consistent (feedforward ~ 0 at convergence).
    policy, _ = backward_pass(
        lin, exp_seq, cost, RiskParams(rp.theta, W),
        x_nom_final=xs[n], nominal=(xs, us), opts=opts,
    )
    risk = evaluate_policy_risk(
        lin, exp_seq, cost, RiskParams(rp.theta, W), policy.K, xs[n],
        dx0=x0 - xs[0],
    )
    return SolveResult(policy=policy, risk_value=risk, converged=converged,
                       iterations=iterations)


def entropic_risk_mc(J_samples: Sequence[float], theta: float) -> float:
    """Monte Carlo entropic risk (1/theta) log mean exp(theta J), stable form.

    Computed as a log-sum-exp; theta = 0 continuously extends to the sample
    mean. Nondecreasing in theta on any fixed sample set.
    """
    J = np.asarray(J_samples, dtype=float)
    if J.size == 0:
        raise ValueError("need at least one sample")
    if theta == 0.0:
        return float(np.mean(J))
    return float((logsumexp(theta * J) - math.log(J.size)) / theta)


def rollout_cost(
    model: PlantModel,
    cost: QuadCost,
    policy: AffinePolicy,
    x0: np.ndarray,
    noise: Sequence[np.ndarray],
) -> float:
    """Realized trajectory cost of a policy under a given noise sequence."""
    xs, us = forward_rollout(model, policy, x0, noise)
    J = 0.0
    for t in range(us.shape[0]):
        J += stage_cost(cost, xs[t], us[t])
    return J + terminal_cost(cost, xs[-1])
