"""JSON run configuration: defaults, loading, and object builders.

Every experiment constant lives here as a default and may be overridden by a
user JSON file with the same (nested) structure; unknown keys are rejected so
typos fail loudly. See README for the schema.
"""

from __future__ import annotations

import copy
import json
import math
from typing import List, Optional

import numpy as np

from .costs import QuadCost
from .dynamics import PlantModel, car_like_robot
from .kl_bound import KnnConfig
from .mpc import CrossEntropyConfig, MpcRun
from .noise_learning import MixtureNoise, gaussian_bump_mixture
from .risk_ddp import SolverOptions

DEFAULT_CONFIG = {
    "plant": {"wheelbase": 0.3, "dt": 0.1},
    "cost": {
        "stage_state_diag": [1.0, 1.0, 0.1, 0.1],
        "stage_control_diag": [0.1, 0.1],
        "terminal_state_diag": [10.0, 10.0, 1.0, 1.0],
    },
    "horizon": 10,
    "solver": {
        "tol": 1e-6,
        "max_iters": 100,
        "reg_init": 1e-6,
        "reg_max": 1e2,
        "ls_backtracks": 10,
    },
    "collection": {
        # per-dimension (lo, hi, count); product of counts = m = 1000
        "grid": {
            "x": [0.0, 5.0, 10],
            "y": [0.0, 5.0, 10],
            "theta": [-math.pi, math.pi, 10],
            "v": [0.0, 0.0, 1],
        },
        "draws_per_state": 1000,
    },
    "gp": {"restarts": 8},
    "kl": {"k": 10, "ref_samples": 100},
    "cross_entropy": {
        "population": 32,
        "elite_frac": 0.25,
        "max_gens": 15,
        "init_log_mean": math.log(1e-2),
        "init_log_std": 1.5,
        "min_std": 0.05,
    },
    "mpc": {
        "iterations": 22,
        "x0": [5.0, 5.0, -0.75 * math.pi, 0.0],
    },
    "benchmark": {"runs_per_case": 15},
    "mixtures": {
        "a": {
            "weights": [0.5, 0.5],
            "xy_base_amp": [[0.002, 0.02], [0.010, 0.08]],
            "theta_var": 1.3e-4,
            "v_var": 2.2e-3,
            "center": [2.5, 2.5],
            "width": 0.5,
        },
        "b": {
            "weights": [0.6, 0.3, 0.1],
            "xy_base_amp": [[0.002, 0.015], [0.006, 0.05], [0.020, 0.15]],
            "theta_var": 1.3e-4,
            "v_var": 2.2e-3,
            "center": [2.5, 2.5],
            "width": 0.5,
        },
        "c": {
            "weights": [0.3, 0.3, 0.2, 0.2],
            "xy_base_amp": [[0.002, 0.01], [0.004, 0.03], [0.008, 0.06], [0.014, 0.10]],
            "theta_var": 1.3e-4,
            "v_var": 2.2e-3,
            "center": [2.5, 2.5],
            "width": 0.5,
        },
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise KeyError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: Optional[str] = None) -> dict:
    """Defaults deep-merged with an optional JSON override file."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path, "r", encoding="utf-8") as fh:
        user = json.load(fh)
    return _merge(DEFAULT_CONFIG, user)


def build_plant(cfg: dict) -> PlantModel:
    return car_like_robot(cfg["plant"]["wheelbase"], cfg["plant"]["dt"])


def build_cost(cfg: dict) -> QuadCost:
    c = cfg["cost"]
    return QuadCost(
        Q=np.diag(c["stage_state_diag"]),
        R=np.diag(c["stage_control_diag"]),
        Qf=np.diag(c["terminal_state_diag"]),
        horizon=int(cfg["horizon"]),
    )


def build_solver_options(cfg: dict) -> SolverOptions:
    s = cfg["solver"]
    return SolverOptions(
        tol=s["tol"],
        max_iters=int(s["max_iters"]),
        reg_init=s["reg_init"],
        reg_max=s["reg_max"],
        ls_backtracks=int(s["ls_backtracks"]),
    )


def build_knn_config(cfg: dict) -> KnnConfig:
    return KnnConfig(k=int(cfg["kl"]["k"]), ref_samples=int(cfg["kl"]["ref_samples"]))


def build_ce_config(cfg: dict) -> CrossEntropyConfig:
    c = cfg["cross_entropy"]
    return CrossEntropyConfig(
        population=int(c["population"]),
        elite_frac=c["elite_frac"],
        max_gens=int(c["max_gens"]),
        init_log_mean=c["init_log_mean"],
        init_log_std=c["init_log_std"],
        min_std=c["min_std"],
    )


def build_mixture(cfg: dict, name: str) -> MixtureNoise:
    m = cfg["mixtures"][name]
    return gaussian_bump_mixture(
        weights=m["weights"],
        xy_params=[tuple(p) for p in m["xy_base_amp"]],
        theta_var=m["theta_var"],
        v_var=m["v_var"],
        center=tuple(m["center"]),
        width=m["width"],
    )


def grid_spec_rows(cfg: dict) -> List[List[float]]:
    """Collection grid as (lo, hi, count) rows in state order x, y, theta, v."""
    g = cfg["collection"]["grid"]
    return [list(map(float, g[key])) for key in ("x", "y", "theta", "v")]


def build_mpc_run(cfg: dict, seed: int, mode: str) -> MpcRun:
    return MpcRun(
        x0=np.asarray(cfg["mpc"]["x0"], dtype=float),
        iterations=int(cfg["mpc"]["iterations"]),
        horizon=int(cfg["horizon"]),
        seed=seed,
        mode=mode,
    )
