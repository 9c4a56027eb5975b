"""Command-line interface.

Subcommands: collect, fit, estimate-bound, run, benchmark, emit-plots.
Global flags: --config <json>, --seed <u64>, --out <dir>.
"""

from __future__ import annotations

import argparse
import json
import os
import time

import numpy as np

from . import benchmark as bench
from .config import (
    build_ce_config,
    build_cost,
    build_knn_config,
    build_mixture,
    build_mpc_run,
    build_plant,
    build_solver_options,
    grid_spec_rows,
    load_config,
)
from .kl_bound import horizon_bound
from .mpc import MpcRecord, NoiseStream, ZeroNoise, run_mpc
from .noise_learning import (
    StateDependentRef,
    StationaryRef,
    collect_training_data,
    fit_state_dependent,
    load_gp_models,
    load_training_set,
    save_gp_models,
    save_training_set,
)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="JSON config overriding defaults")
    p.add_argument("--seed", type=int, default=0, help="root random seed")
    p.add_argument("--out", default="out", help="output directory")


def _cmd_collect(args) -> int:
    cfg = load_config(args.config)
    model = build_plant(cfg)
    mix = build_mixture(cfg, args.mixture)
    rng = np.random.default_rng(args.seed)
    ts = collect_training_data(
        model, mix, grid_spec_rows(cfg), int(cfg["collection"]["draws_per_state"]),
        rng, seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"training_set_{args.mixture}.bin")
    save_training_set(ts, path)
    print(f"collected m={ts.m} states x N={ts.draws_per_state} draws -> {path}")
    return 0


def _cmd_fit(args) -> int:
    cfg = load_config(args.config)
    ts = load_training_set(args.training_set)
    gps = fit_state_dependent(ts, seed=args.seed, restarts=int(cfg["gp"]["restarts"]))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "gp_models.json")
    save_gp_models(gps, path)
    for i, gp in enumerate(gps):
        print(
            f"dim {i}: signal_var={gp.signal_variance:.4g} "
            f"length={gp.length_scale:.4g} noise_var={gp.noise_variance:.4g} "
            f"lml={gp.log_marginal_likelihood:.4g}"
        )
    print(f"wrote {path}")
    return 0


def _cmd_estimate_bound(args) -> int:
    cfg = load_config(args.config)
    ts = load_training_set(args.training_set)
    knn_cfg = build_knn_config(cfg)
    n = int(cfg["horizon"])
    rng = np.random.default_rng(args.seed)
    d_max, per_window = horizon_bound(ts, n, knn_cfg, rng)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "bound.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "d_max": d_max,
                "per_window": per_window.tolist(),
                "k": knn_cfg.k,
                "M": knn_cfg.ref_samples,
                "n": n,
                "seed": args.seed,
            },
            fh,
            sort_keys=True,
            indent=1,
        )
        fh.write("\n")
    print(f"d_max={d_max:.4f} over {per_window.shape[0]} windows -> {path}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    model = build_plant(cfg)
    cost = build_cost(cfg)
    run = build_mpc_run(cfg, seed=args.seed, mode=args.mode)

    if args.gp_models:
        ref = StateDependentRef(load_gp_models(args.gp_models))
    else:
        ref = StationaryRef(np.full(model.state_dim, args.ref_var))

    if args.zero_noise:
        noise = ZeroNoise()
    else:
        mix = build_mixture(cfg, args.mixture)
        noise = NoiseStream.from_seed(
            mix, run.iterations, model.state_dim,
            np.random.SeedSequence(entropy=args.seed, spawn_key=(99,)),
        )

    t0 = time.perf_counter()
    record = run_mpc(
        model, cost, noise, ref, args.d, run,
        ce_cfg=build_ce_config(cfg), solver_opts=build_solver_options(cfg),
    )
    elapsed = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"run_{args.mode}_{args.seed}.json")
    payload = record.to_dict()
    payload["timing_seconds"] = elapsed
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(
        f"mode={args.mode} final_distance={record.final_distance:.4f} m "
        f"({elapsed:.1f} s) -> {path}"
    )
    return 0


def _cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    spec = bench.BenchmarkSpec(
        mixture_names=tuple(args.mixtures.split(",")),
        runs_per_case=int(cfg["benchmark"]["runs_per_case"]),
        root_seed=args.seed,
        config=cfg,
    )
    table = bench.run_benchmark(spec, args.out)
    for name in spec.mixture_names:
        print(
            f"p({name}): ilqg mean={table.mean[name]['ilqg']:.3f} m, "
            f"droc mean={table.mean[name]['droc']:.3f} m, "
            f"ratio={table.ratio[name]:.3f}, d_max={table.d_max[name]:.3f}"
        )
    print(f"outputs in {args.out}")
    return 0


def _cmd_emit_plots(args) -> int:
    cfg = load_config(args.config)
    records = []
    for name in args.mixtures.split(","):
        rec_path = os.path.join(args.bench_dir, f"mixture_{name}", "records.json")
        with open(rec_path, "r", encoding="utf-8") as fh:
            for rd in json.load(fh)["records"]:
                records.append(
                    MpcRecord(
                        states=np.asarray(rd["states"]),
                        controls=np.asarray(rd["controls"]),
                        theta_seq=np.asarray(rd["theta_seq"]),
                        objective_seq=np.asarray(rd["objective_seq"]),
                        final_distance=rd["final_distance"],
                        mode=rd["mode"],
                        seed=rd["seed"],
                        stream_hash=rd["stream_hash"],
                        fault=rd["fault"],
                    )
                )
        mixture = build_mixture(cfg, name)
        gp_path = os.path.join(args.bench_dir, f"mixture_{name}", "gp_models.json")
        gps = load_gp_models(gp_path) if os.path.exists(gp_path) else None
        written = bench.emit_plot_data(
            records, os.path.join(args.out, f"plots_{name}"), mixture=mixture, gps=gps
        )
        print(f"p({name}): wrote {len(written)} files")
        records.clear()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="droc",
        description="Distributionally robust optimal control with learned "
        "noise references and KL ambiguity bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect grid training data for a mixture")
    _add_common(p)
    p.add_argument("--mixture", default="b", help="mixture name (a, b, c)")
    p.set_defaults(fn=_cmd_collect)

    p = sub.add_parser("fit", help="fit per-dimension GP reference models")
    _add_common(p)
    p.add_argument("--training-set", required=True, help="training set file")
    p.set_defaults(fn=_cmd_fit)

    p = sub.add_parser("estimate-bound", help="global max KL bound over windows")
    _add_common(p)
    p.add_argument("--training-set", required=True, help="training set file")
    p.set_defaults(fn=_cmd_estimate_bound)

    p = sub.add_parser("run", help="single receding-horizon episode")
    _add_common(p)
    p.add_argument("--mode", choices=("droc", "ilqg"), default="droc")
    p.add_argument("--mixture", default="b", help="true-noise mixture name")
    p.add_argument("--gp-models", default=None, help="GP models JSON (reference)")
    p.add_argument("--ref-var", type=float, default=1e-2,
                   help="stationary reference variance when no GP file is given")
    p.add_argument("--d", type=float, default=1.0, help="KL ambiguity radius")
    p.add_argument("--zero-noise", action="store_true", help="noise-free episode")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("benchmark", help="full paired droc-vs-ilqg study")
    _add_common(p)
    p.add_argument("--mixtures", default="a,b,c", help="comma-separated names")
    p.set_defaults(fn=_cmd_benchmark)

    p = sub.add_parser("emit-plots", help="plot-ready CSVs from benchmark outputs")
    _add_common(p)
    p.add_argument("--bench-dir", required=True, help="benchmark output directory")
    p.add_argument("--mixtures", default="a,b,c", help="comma-separated names")
    p.set_defaults(fn=_cmd_emit_plots)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
