"""DROC outer loop: cross-entropy search over the risk-sensitivity parameter,
wrapped in a receding-horizon MPC driver.

For an ambiguity radius d the per-horizon objective is

    R_theta(J) + d / theta,   theta > 0,

minimized over theta by a cross-entropy method with log-normal sampling
(theta stays positive structurally). Infeasible theta (entropic risk
divergent) maps to an infinite objective rather than an error. The iLQG
baseline is the same inner solver at theta = 0.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .costs import QuadCost
from .dynamics import PlantModel, step
from .errors import NumericalFault, RiskInfeasible, SingularLinearization
from .noise_learning import MixtureNoise
from .risk_ddp import RiskParams, SolveResult, SolverOptions, solve_inner


@dataclass(frozen=True)
class CrossEntropyConfig:
    """Cross-entropy knobs for the log-normal theta search."""

    population: int = 32
    elite_frac: float = 0.25
    max_gens: int = 15
    init_log_mean: float = math.log(1e-2)
    init_log_std: float = 1.5
    min_std: float = 0.05

    def __post_init__(self):
        if self.population < 8:
            raise ValueError("population must be >= 8")
        if not (0.0 < self.elite_frac <= 0.5):
            raise ValueError("elite_frac must be in (0, 0.5]")

    @property
    def elite_count(self) -> int:
        return max(1, int(math.ceil(self.population * self.elite_frac)))


@dataclass(frozen=True)
class DrocObjective:
    """Decomposed outer objective: entropic term plus ambiguity penalty d/theta."""

    entropic_term: float
    penalty_term: float

    @property
    def total(self) -> float:
        return self.entropic_term + self.penalty_term


@dataclass(frozen=True)
class MpcRun:
    """One receding-horizon episode specification."""

    x0: np.ndarray
    iterations: int = 22
    horizon: int = 10
    seed: int = 0
    mode: str = "droc"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.iterations < 1 or self.horizon < 1:
            raise ValueError("iterations and horizon must be >= 1")
        if self.mode not in ("droc", "ilqg"):
            raise ValueError(f"mode must be 'droc' or 'ilqg', got {self.mode!r}")


@dataclass
class InnerProblem:
    """Everything the inner solve needs except theta."""

    model: PlantModel
    cost: QuadCost
    x0: np.ndarray
    u_init: np.ndarray
    ref: Callable[[np.ndarray], np.ndarray]
    options: SolverOptions = SolverOptions()


def _solve_at(theta: float, problem: InnerProblem) -> SolveResult:
    n = problem.cost.horizon
    rp = RiskParams(theta, np.zeros((n, problem.model.state_dim)))
    return solve_inner(
        problem.model,
        problem.cost,
        rp,
        problem.x0,
        problem.u_init,
        ref=problem.ref,
        opts=problem.options,
    )


def droc_objective(theta: float, problem: InnerProblem, d: float) -> DrocObjective:
    """Outer objective R_theta(J) + d/theta at one theta.

    Infeasible theta (outside the set giving finite entropic risk) yields an
    infinite objective rather than an exception.
    """
    if theta <= 0:
        raise ValueError("theta must be > 0 (use the inner solver for theta = 0)")
    if d < 0:
        raise ValueError("d must be >= 0")
    try:
        result = _solve_at(theta, problem)
    except RiskInfeasible:
        return DrocObjective(entropic_term=math.inf, penalty_term=d / theta)
    return DrocObjective(entropic_term=result.risk_value, penalty_term=d / theta)


@dataclass
class CeResult:
    """Outcome of the theta search."""

    theta_star: float
    policy: object
    objective: float
    fallback: bool = False
    generations: int = 0
    evaluations: int = 0


def minimize_log_scalar(
    objective: Callable[[float], float],
    cfg: CrossEntropyConfig,
    rng: np.random.Generator,
):
    """Cross-entropy minimization of a positive-scalar objective.

    Samples log-normally, refits (log-mean, log-std) to the elite set each
    generation, and stops when the fitted log-std drops below cfg.min_std or
    cfg.max_gens is reached. The previous elite set is retained in the next
    selection pool, so the elite mean never increases on a deterministic
    objective. Returns (best_x, best_value, generations, all_infeasible)
    where the flag reports 3 consecutive generations of all-infinite samples.
    """
    mu, sigma = cfg.init_log_mean, cfg.init_log_std
    elite_logx = np.empty(0)
    elite_vals = np.empty(0)
    best_x, best_val = math.nan, math.inf
    bad_gens = 0
    gens = 0
    for gen in range(cfg.max_gens):
        gens = gen + 1
        logx = rng.normal(mu, sigma, cfg.population)
        vals = np.array([objective(float(math.exp(lx))) for lx in logx])

        if not np.any(np.isfinite(vals)):
            bad_gens += 1
            if bad_gens >= 3:
                return best_x, best_val, gens, True
        else:
            bad_gens = 0

        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_x = float(math.exp(logx[i]))

        pool_logx = np.concatenate([logx, elite_logx])
        pool_vals = np.concatenate([vals, elite_vals])
        order = np.argsort(pool_vals, kind="stable")[: cfg.elite_count]
        elite_logx = pool_logx[order]
        elite_vals = pool_vals[order]
        if not np.all(np.isfinite(elite_vals)):
            continue  # cannot refit on infinite values; keep sampling wide
        mu = float(np.mean(elite_logx))
        sigma = float(np.std(elite_logx))
        if sigma < cfg.min_std:
            break
    return best_x, best_val, gens, False


def cross_entropy_theta(
    problem: InnerProblem,
    d: float,
    cfg: CrossEntropyConfig,
    rng: np.random.Generator,
) -> CeResult:
    """Minimize R_theta(J) + d/theta over theta by cross entropy.

    Returns the incumbent best across all evaluations together with its
    policy. If every sampled theta is infeasible for 3 consecutive
    generations, falls back to the risk-neutral (theta = 0) solve and flags
    it.
    """
    cache = {}
    evaluations = [0]

    def objective(theta: float) -> float:
        evaluations[0] += 1
        try:
            result = _solve_at(theta, problem)
        except RiskInfeasible:
            return math.inf
        total = result.risk_value + d / theta
        cache[theta] = (result, total)
        return total

    best_theta, best_val, gens, all_infeasible = minimize_log_scalar(
        objective, cfg, rng
    )
    if all_infeasible or not math.isfinite(best_val):
        fallback = _solve_at(0.0, problem)
        return CeResult(
            theta_star=0.0,
            policy=fallback.policy,
            objective=fallback.risk_value,
            fallback=True,
            generations=gens,
            evaluations=evaluations[0],
        )
    result, total = cache[best_theta]
    return CeResult(
        theta_star=best_theta,
        policy=result.policy,
        objective=total,
        fallback=False,
        generations=gens,
        evaluations=evaluations[0],
    )


# ---------------------------------------------------------------------------
# Noise sources and the MPC driver
# ---------------------------------------------------------------------------

class NoiseStream:
    """Pre-drawn mixture noise stream: (component, z) pairs realized at the
    visited state.

    Because the raw stream is drawn up front from a seed, two controllers fed
    the same stream consume identical randomness (common random numbers) even
    though their visited states differ. The stream hash identifies the
    pairing.
    """

    def __init__(self, mix: MixtureNoise, comps: np.ndarray, zs: np.ndarray):
        self.mix = mix
        self.comps = np.asarray(comps, dtype=int)
        self.zs = np.asarray(zs, dtype=float)

    @classmethod
    def from_seed(cls, mix: MixtureNoise, steps: int, dim: int, seed) -> "NoiseStream":
        rng = np.random.default_rng(seed)
        comps, zs = mix.draw_raw(rng, steps, dim)
        return cls(mix, comps, zs)

    def __len__(self) -> int:
        return self.comps.shape[0]

    def noise_at(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.mix.realize(int(self.comps[t]), self.zs[t], x)

    def stream_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.comps.astype("<i8").tobytes())
        h.update(self.zs.astype("<f8").tobytes())
        return h.hexdigest()


class ZeroNoise:
    """Deterministic zero-noise source (nominal runs)."""

    def noise_at(self, t: int, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(x)

    def stream_hash(self) -> str:
        return "zero"


@dataclass
class MpcRecord:
    """Receding-horizon episode record."""

    states: np.ndarray  # (iterations+1, state_dim)
    controls: np.ndarray  # (iterations, control_dim)
    theta_seq: np.ndarray  # (iterations,)
    objective_seq: np.ndarray  # (iterations,)
    final_distance: float
    mode: str
    seed: int
    stream_hash: str
    fault: bool = False
    ce_fallbacks: int = 0

    def to_dict(self) -> dict:
        return {
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
            "theta_seq": self.theta_seq.tolist(),
            "objective_seq": self.objective_seq.tolist(),
            "final_distance": float(self.final_distance),
            "mode": self.mode,
            "seed": int(self.seed),
            "stream_hash": self.stream_hash,
            "fault": bool(self.fault),
            "ce_fallbacks": int(self.ce_fallbacks),
        }


def run_mpc(
    model: PlantModel,
    cost: QuadCost,
    noise_source,
    ref_model: Callable[[np.ndarray], np.ndarray],
    d: float,
    run: MpcRun,
    ce_cfg: CrossEntropyConfig = CrossEntropyConfig(),
    solver_opts: SolverOptions = SolverOptions(),
) -> MpcRecord:
    """Receding-horizon control episode.

    Each iteration re-solves the n-step problem from the current state
    (cross-entropy over theta in droc mode, theta = 0 in ilqg mode), applies
    the first control, steps the plant with a true-noise draw, and
    warm-starts the next solve by shifting the nominal controls. A
    non-finite state aborts the run with the partial record flagged.
    """
    n = run.horizon
    cost = replace(cost, horizon=n) if cost.horizon != n else cost
    states = np.zeros((run.iterations + 1, model.state_dim))
    controls = np.zeros((run.iterations, model.control_dim))
    theta_seq = np.zeros(run.iterations)
    objective_seq = np.zeros(run.iterations)
    states[0] = run.x0
    u_warm = np.zeros((n, model.control_dim))
    fault = False
    fallbacks = 0
    steps_done = 0

    for it in range(run.iterations):
        problem = InnerProblem(
            model=model, cost=cost, x0=states[it], u_init=u_warm,
            ref=ref_model, options=solver_opts,
        )
        try:
            if run.mode == "droc":
                ce_rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=run.seed, spawn_key=(it,))
                )
                ce = cross_entropy_theta(problem, d, ce_cfg, ce_rng)
                policy = ce.policy
                theta_seq[it] = ce.theta_star
                objective_seq[it] = ce.objective
                fallbacks += int(ce.fallback)
            else:
                result = _solve_at(0.0, problem)
                policy = result.policy
                theta_seq[it] = 0.0
                objective_seq[it] = result.risk_value

            u = policy.u_nom[0]
            w = noise_source.noise_at(it, states[it])
            controls[it] = u
            states[it + 1] = step(model, states[it], u, w)
            steps_done = it + 1
            u_warm = np.vstack([policy.u_nom[1:], policy.u_nom[-1:]])
        except (NumericalFault, SingularLinearization):
            fault = True
            break

    final = states[steps_done]
    return MpcRecord(
        states=states[: steps_done + 1] if fault else states,
        controls=controls[:steps_done] if fault else controls,
        theta_seq=theta_seq[:steps_done] if fault else theta_seq,
        objective_seq=objective_seq[:steps_done] if fault else objective_seq,
        final_distance=float(np.hypot(final[0], final[1])),
        mode=run.mode,
        seed=run.seed,
        stream_hash=noise_source.stream_hash(),
        fault=fault,
        ce_fallbacks=fallbacks,
    )
