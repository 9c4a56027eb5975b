"""End-to-end benchmark harness: collect data, fit models, estimate bounds,
run paired receding-horizon comparisons, and emit result tables and
plot-ready CSV files.

For each named mixture the pipeline is: training-data collection on the
state grid -> per-dimension GP reference fit -> global max KL bound over
receding-horizon windows -> `runs_per_case` paired episodes in droc and ilqg
modes. Pairing uses common random numbers: run i of both modes consumes the
identical pre-drawn raw noise stream, verifiable by the recorded stream hash.
All outputs are a pure function of the root seed (no timestamps), so a rerun
reproduces every file byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import (
    DEFAULT_CONFIG,
    build_ce_config,
    build_cost,
    build_knn_config,
    build_mixture,
    build_mpc_run,
    build_plant,
    build_solver_options,
    grid_spec_rows,
)
from .kl_bound import horizon_bound
from .mpc import MpcRecord, NoiseStream, run_mpc
from .noise_learning import (
    GpModel,
    MixtureNoise,
    StateDependentRef,
    collect_training_data,
    fit_state_dependent,
    save_gp_models,
    save_training_set,
)

MODES = ("droc", "ilqg")


@dataclass
class BenchmarkSpec:
    """Which mixtures to run, how many paired runs, and the root seed.

    `config` carries everything else (grid, horizon, CE knobs, cost, ...).
    """

    mixture_names: Sequence[str] = ("a", "b", "c")
    runs_per_case: int = 15
    root_seed: int = 0
    config: dict = field(default_factory=lambda: DEFAULT_CONFIG)

    def __post_init__(self):
        if self.runs_per_case < 1:
            raise ValueError("runs_per_case must be >= 1")


@dataclass
class ResultTable:
    """Per (mixture, mode) final-distance statistics.

    mean/std are recomputable from the stored per-run distances; the ratio
    field is mean_droc / mean_ilqg.
    """

    per_run: Dict[str, Dict[str, List[float]]]
    mean: Dict[str, Dict[str, float]]
    std: Dict[str, Dict[str, float]]
    ratio: Dict[str, float]
    d_max: Dict[str, float]

    def to_dict(self) -> dict:
        return {
            "per_run": self.per_run,
            "mean": self.mean,
            "std": self.std,
            "ratio": self.ratio,
            "d_max": self.d_max,
        }


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_json(obj: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_run_csv(record: MpcRecord, path: str):
    """Trajectory CSV: t, x, y, theta, v, a, delta, theta_star."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,y,theta,v,a,delta,theta_star\n")
        n_controls = record.controls.shape[0]
        for t in range(record.states.shape[0]):
            row = [str(t)] + [_fmt(v) for v in record.states[t]]
            if t < n_controls:
                row += [_fmt(v) for v in record.controls[t]]
                row.append(_fmt(record.theta_seq[t]))
            else:
                row += ["", "", ""]
            fh.write(",".join(row) + "\n")


def run_benchmark(spec: BenchmarkSpec, out_dir: str) -> ResultTable:
    """Full study: per mixture, learn models and bounds, then paired runs.

    Writes per-mixture artifacts (training set, GP models, bound JSON,
    trajectory CSVs, record JSONs) plus table.json and summary.json at the
    top level. Deterministic under spec.root_seed. Faulted runs are recorded
    and marked; their cells keep NaN distances so the table flags them.
    """
    cfg = spec.config
    os.makedirs(out_dir, exist_ok=True)
    model = build_plant(cfg)
    cost = build_cost(cfg)
    solver_opts = build_solver_options(cfg)
    ce_cfg = build_ce_config(cfg)
    knn_cfg = build_knn_config(cfg)
    n = int(cfg["horizon"])
    iterations = int(cfg["mpc"]["iterations"])

    per_run: Dict[str, Dict[str, List[float]]] = {}
    mean: Dict[str, Dict[str, float]] = {}
    std: Dict[str, Dict[str, float]] = {}
    ratio: Dict[str, float] = {}
    d_max_by_mix: Dict[str, float] = {}
    summary_runs = {}

    for mix_idx, name in enumerate(spec.mixture_names):
        mix = build_mixture(cfg, name)
        mix_dir = os.path.join(out_dir, f"mixture_{name}")
        os.makedirs(mix_dir, exist_ok=True)
        base_ss = np.random.SeedSequence(entropy=spec.root_seed, spawn_key=(mix_idx,))

        collect_rng = np.random.default_rng(base_ss.spawn(1)[0])
        ts = collect_training_data(
            model, mix, grid_spec_rows(cfg), int(cfg["collection"]["draws_per_state"]),
            collect_rng, seed=spec.root_seed,
        )
        save_training_set(ts, os.path.join(mix_dir, "training_set.bin"))

        gps = fit_state_dependent(
            ts, seed=spec.root_seed + mix_idx, restarts=int(cfg["gp"]["restarts"])
        )
        save_gp_models(gps, os.path.join(mix_dir, "gp_models.json"))
        ref = StateDependentRef(gps)

        bound_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=spec.root_seed, spawn_key=(mix_idx, 1))
        )
        d_max, per_window = horizon_bound(ts, n, knn_cfg, bound_rng)
        d_max_by_mix[name] = d_max
        _write_json(
            {
                "d_max": d_max,
                "per_window": per_window.tolist(),
                "k": knn_cfg.k,
                "M": knn_cfg.ref_samples,
                "n": n,
                "seed": spec.root_seed,
            },
            os.path.join(mix_dir, "bound.json"),
        )

        runs_dir = os.path.join(mix_dir, "runs")
        os.makedirs(runs_dir, exist_ok=True)
        per_run[name] = {mode: [] for mode in MODES}
        records_out = []
        for i in range(spec.runs_per_case):
            stream_seed = np.random.SeedSequence(
                entropy=spec.root_seed, spawn_key=(mix_idx, 2, i)
            )
            for mode in MODES:
                # Paired runs: both modes get a stream built from the same
                # seed, hence identical raw noise (common random numbers).
                stream = NoiseStream.from_seed(mix, iterations, model.state_dim, stream_seed)
                run = build_mpc_run(cfg, seed=spec.root_seed + 1000 * mix_idx + i, mode=mode)
                record = run_mpc(
                    model, cost, stream, ref, d_max, run,
                    ce_cfg=ce_cfg, solver_opts=solver_opts,
                )
                dist = float("nan") if record.fault else record.final_distance
                per_run[name][mode].append(dist)
                _write_run_csv(record, os.path.join(runs_dir, f"{mode}_{i:02d}.csv"))
                records_out.append(record.to_dict())
        _write_json({"records": records_out}, os.path.join(mix_dir, "records.json"))
        summary_runs[name] = {
            "stream_hashes": [
                r["stream_hash"] for r in records_out if r["mode"] == "droc"
            ],
        }

        mean[name] = {}
        std[name] = {}
        for mode in MODES:
            dists = np.asarray(per_run[name][mode])
            mean[name][mode] = float(np.mean(dists))
            std[name][mode] = float(np.std(dists, ddof=1)) if len(dists) > 1 else 0.0
        ratio[name] = (
            mean[name]["droc"] / mean[name]["ilqg"]
            if mean[name]["ilqg"] != 0
            else float("nan")
        )

    table = ResultTable(
        per_run=per_run, mean=mean, std=std, ratio=ratio, d_max=d_max_by_mix
    )
    _write_json(table.to_dict(), os.path.join(out_dir, "table.json"))
    _write_json(
        {
            "schema_version": 1,
            "root_seed": spec.root_seed,
            "runs_per_case": spec.runs_per_case,
            "mixtures": list(spec.mixture_names),
            "config": cfg,
            "pairing": summary_runs,
        },
        os.path.join(out_dir, "summary.json"),
    )
    return table


def emit_plot_data(
    records: Sequence[MpcRecord],
    out_dir: str,
    mixture: Optional[MixtureNoise] = None,
    gps: Optional[Sequence[GpModel]] = None,
    heatmap_range=(0.0, 5.0),
    heatmap_spacing: float = 0.1,
    band_points: int = 200,
) -> List[str]:
    """Plot-ready CSVs: x-y paths per run, a variance heatmap grid over the
    plane, and GP fit curves with 95% bands (mean +/- 1.96 posterior std)."""
    if len(records) == 0:
        raise ValueError("records must be nonempty")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    for idx, rec in enumerate(records):
        path = os.path.join(out_dir, f"path_{rec.mode}_{idx:02d}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,x,y\n")
            for t in range(rec.states.shape[0]):
                fh.write(f"{t},{_fmt(rec.states[t, 0])},{_fmt(rec.states[t, 1])}\n")
        written.append(path)

    if mixture is not None:
        lo, hi = heatmap_range
        pts = int(round((hi - lo) / heatmap_spacing)) + 1
        axis = np.linspace(lo, hi, pts)
        path = os.path.join(out_dir, "variance_heatmap.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,y,var_x,var_y\n")
            for xv in axis:
                for yv in axis:
                    diag = mixture.cov_diag(np.array([xv, yv, 0.0, 0.0]))
                    fh.write(
                        f"{_fmt(xv)},{_fmt(yv)},{_fmt(diag[0])},{_fmt(diag[1])}\n"
                    )
        written.append(path)

    if gps is not None:
        for i, gp in enumerate(gps):
            lo, hi = float(np.min(gp.inputs)), float(np.max(gp.inputs))
            if hi <= lo:
                hi = lo + 1.0
            grid = np.linspace(lo, hi, band_points)
            m, v = gp.posterior(grid)
            sd = np.sqrt(v)
            path = os.path.join(out_dir, f"gp_band_dim{i}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("input,mean,lower,upper\n")
                for j in range(band_points):
                    fh.write(
                        f"{_fmt(grid[j])},{_fmt(m[j])},"
                        f"{_fmt(m[j] - 1.96 * sd[j])},{_fmt(m[j] + 1.96 * sd[j])}\n"
                    )
            written.append(path)
    return written
