"""Command-line interface: batch runs, path debugging and Jacobian reports."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .harness import (
    BUILTIN_SCENARIOS,
    EpisodeConfig,
    load_config_file,
    load_scenario_file,
    run_batch,
    run_episode,
    save_results_csv,
    save_trace_csv,
)
from .kinematics import VehicleGeometry, jacobian_of_projection
from .planner import plan, save_path_csv
from .world import default_start, generate, inflate


def _resolve_scenario(spec: str):
    if spec in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[spec]
    if os.path.exists(spec):
        return load_scenario_file(spec)
    raise SystemExit(
        f"unknown scenario {spec!r}: not a builtin "
        f"({', '.join(sorted(BUILTIN_SCENARIOS))}) and no such file"
    )


def _cmd_run(args) -> int:
    cfg = EpisodeConfig(scenario=_resolve_scenario(args.scenario))
    if args.config:
        cfg = load_config_file(cfg, args.config)
    overrides = {}
    if args.controller:
        overrides["controller"] = args.controller
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        cfg = replace(cfg, **overrides)

    trace_hook = None
    if args.trace_dir:
        os.makedirs(args.trace_dir, exist_ok=True)

        def trace_hook(i, trace):
            save_trace_csv(trace, os.path.join(args.trace_dir, f"episode_{i:03d}.csv"))

    result = run_batch(cfg, trace_hook=trace_hook)
    save_results_csv(result, args.out)
    s = result.summary
    print(
        f"{cfg.controller}: {s['episodes']} episodes, "
        f"success {s['success_rate_pct']:.1f}%, "
        f"episode time {s['episode_time_s']:.2f} s, "
        f"solve {s['calc_time_ms']:.2f} ms -> {args.out}"
    )
    return 0


def _cmd_plan_debug(args) -> int:
    scenario = _resolve_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    grid, goals = generate(scenario)
    cfg = EpisodeConfig(scenario=scenario)
    world = inflate(grid, cfg.geometry.circumscribed_radius() + cfg.inflation_margin)
    start = default_start(grid, scenario, goals)
    path = plan(world, start, goals[0])
    save_path_csv(path, args.out)
    print(
        f"path with {len(path.xy)} waypoints, length {path.length:.3f} m, "
        f"grid cost {path.grid_cost:.3f} m -> {args.out}"
    )
    return 0


def _cmd_jacobian(args) -> int:
    geom = VehicleGeometry()
    point3 = np.array(
        [args.speed * np.cos(args.steering), args.speed * np.sin(args.steering), 0.0]
    )
    point4 = np.array([args.speed, args.speed, args.steering, args.steering])
    np.set_printoptions(precision=3, suppress=True)
    counts = {}
    for name, space, point in (
        ("twist space (8x3)", "3dof", point3),
        ("diagonal-wheel space (8x4)", "4dof", point4),
    ):
        _, norm = jacobian_of_projection(space, point, geom)
        counts[space] = int(np.sum(np.abs(norm) < args.near_zero))
        print(f"normalized Jacobian, {name}, rows [delta fl/fr/rl/rr, v fl/fr/rl/rr]:")
        print(norm)
        print(f"entries with |value| < {args.near_zero}: {counts[space]}\n")
    print(
        f"near-zero count {counts['4dof']} (diagonal-wheel) vs {counts['3dof']} (twist): "
        + (
            "the diagonal-wheel projection is sparser"
            if counts["4dof"] > counts["3dof"]
            else "no sparsity advantage at this operating point"
        )
    )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="swervenav",
        description="Sampling-based MPC navigation benchmark for a 4-wheel "
        "independent drive/steer vehicle",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a batch of navigation episodes")
    p_run.add_argument("--scenario", default="cylinder_garden",
                       help="builtin name or scenario file")
    p_run.add_argument("--controller", choices=("mppi3a", "mppi3b", "mppi4", "hybrid"))
    p_run.add_argument("--episodes", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--out", default="results.csv")
    p_run.add_argument("--trace-dir")
    p_run.add_argument("--config", help="key = value config file")
    p_run.set_defaults(func=_cmd_run)

    p_plan = sub.add_parser("plan-debug", help="dump the global path to CSV")
    p_plan.add_argument("--scenario", default="cylinder_garden")
    p_plan.add_argument("--seed", type=int)
    p_plan.add_argument("--out", default="path.csv")
    p_plan.set_defaults(func=_cmd_plan_debug)

    p_jac = sub.add_parser(
        "jacobian", help="print normalized projection Jacobians at an operating point"
    )
    p_jac.add_argument("--speed", type=float, default=0.7, help="wheel speed [m/s]")
    p_jac.add_argument("--steering", type=float, default=0.25 * np.pi,
                       help="steering angle [rad]")
    p_jac.add_argument("--near-zero", type=float, default=0.05,
                       help="threshold below which an entry counts as near-zero")
    p_jac.set_defaults(func=_cmd_jacobian)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
