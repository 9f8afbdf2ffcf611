"""Command-line front end: map generation, episode sampling, planning,
imitation, training, evaluation, the ablation, and rendering.

Global flags: --config FILE, --seed N, --workers N, --out DIR, --preset NAME.
Any config key can also be overridden as --key=value (see RunConfig).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import mapgen, planner
from .mapgen import (
    build_episode_dataset,
    generate_urban_map,
    load_episode_manifest,
    load_grid,
    save_episode_manifest,
    save_grid,
)
from .neural import load_weights, save_weights
from .reward import load_kv, save_kv
from .training import RunConfig, imitation_phase, prepare_pools, train
from .evaluation import (
    ablation_checkpoint_reward,
    evaluate,
    save_trajectory_csv,
)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key-value config file")
    common.add_argument("--preset", choices=["desk", "paper"], default="desk")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--out", default="out")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="hybridnav", description="hybrid navigation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genmap", parents=[common], help="generate an urban map")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--fraction", type=float, default=None)

    p = sub.add_parser(
        "sample-episodes", parents=[common], help="build an episode dataset"
    )
    p.add_argument("--count", type=int, default=20)

    p = sub.add_parser("plan", parents=[common], help="plan on a saved grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--start", required=True, help="x,y in meters")
    p.add_argument("--goal", required=True, help="x,y in meters")

    sub.add_parser("demo-il", parents=[common], help="imitation warm start only")

    sub.add_parser("train", parents=[common], help="full training run")

    p = sub.add_parser("eval", parents=[common], help="evaluate saved weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--episodes", default=None, help="episode manifest path")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--strict", action="store_true")

    sub.add_parser("ablate", parents=[common], help="checkpoint-reward ablation")

    p = sub.add_parser("render", parents=[common], help="render one episode")
    p.add_argument("--weights", default=None)
    p.add_argument("--episodes", default=None, help="episode manifest path")
    p.add_argument("--index", type=int, default=0)
    return parser


def _load_config(args, overrides: dict) -> RunConfig:
    cfg = RunConfig.desk_preset() if args.preset == "desk" else RunConfig.paper_scale()
    if args.config:
        cfg.apply_overrides(load_kv(args.config))
    if overrides:
        cfg.apply_overrides(overrides)
    if args.workers is not None:
        cfg.train.workers = args.workers
    return cfg


def _parse_overrides(rest: list[str]) -> dict:
    overrides = {}
    for item in rest:
        if not item.startswith("--") or "=" not in item:
            raise SystemExit(f"unrecognized argument: {item} (expected --key=value)")
        key, value = item[2:].split("=", 1)
        overrides[key.replace("-", "_")] = value
    return overrides


def _episode_pool(args, cfg, seed):
    if getattr(args, "episodes", None):
        return load_episode_manifest(args.episodes)
    env = cfg.env
    return build_episode_dataset(
        args.count if hasattr(args, "count") else 100,
        seed,
        width=env.map_width,
        height=env.map_height,
        resolution=env.resolution,
        obstacle_fraction=env.obstacle_fraction,
        footprint_cells=env.footprint_cells,
        min_goal_fraction=env.min_goal_fraction,
        min_occupied_fraction=env.min_occupied_fraction,
        pairs_per_map=env.pairs_per_map,
        corridor_cells=env.corridor_cells,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    overrides = _parse_overrides(rest)
    cfg = _load_config(args, overrides)
    os.makedirs(args.out, exist_ok=True)

    if args.command == "genmap":
        env = cfg.env
        grid = generate_urban_map(
            args.width or env.map_width,
            args.height or env.map_height,
            env.obstacle_fraction if args.fraction is None else args.fraction,
            args.seed,
            resolution=env.resolution,
            corridor_cells=env.corridor_cells,
        )
        path = os.path.join(args.out, "map.txt")
        save_grid(grid, path)
        print(f"wrote {path} (occupied fraction {grid.occupied_fraction():.3f})")
        return 0

    if args.command == "sample-episodes":
        episodes = _episode_pool(args, cfg, args.seed)
        manifest = save_episode_manifest(episodes, args.out)
        print(f"wrote {manifest} ({len(episodes)} episodes)")
        return 0

    if args.command == "plan":
        grid = load_grid(args.grid)
        start = np.array([float(v) for v in args.start.split(",")])
        goal = np.array([float(v) for v in args.goal.split(",")])
        inflated = mapgen.inflate(grid, cfg.env.footprint_cells // 2)
        path = planner.astar(inflated, grid.cell_of(start), grid.cell_of(goal))
        if path is None:
            print("no path", file=sys.stderr)
            return 1
        checkpoints = planner.place_checkpoints(
            path, cfg.env.spacing_d, cfg.env.checkpoint_radius
        )
        planner.save_path(path, os.path.join(args.out, "path.txt"))
        planner.save_checkpoints(checkpoints, os.path.join(args.out, "checkpoints.txt"))
        print(
            f"path length {path.length_m:.2f} m, {len(path.cells)} cells, "
            f"{len(checkpoints)} checkpoints"
        )
        return 0

    if args.command == "demo-il":
        pools = prepare_pools(cfg, args.seed)
        net, experiences = imitation_phase(pools["demo"], cfg, args.seed)
        weights = os.path.join(args.out, "weights_il.bin")
        save_weights(net, weights)
        save_kv(cfg.to_mapping(), os.path.join(args.out, "config.cfg"))
        print(f"wrote {weights} ({len(experiences)} demonstration experiences)")
        return 0

    if args.command == "train":
        save_kv(cfg.to_mapping(), os.path.join(args.out, "config.cfg"))
        net, curves = train(
            cfg, args.seed, out_dir=args.out, log_fn=lambda msg: print(msg, flush=True)
        )
        print(f"final validation: {curves[-1]}")
        print(f"wrote {os.path.join(args.out, 'weights_final.bin')}")
        return 0

    if args.command == "eval":
        net = load_weights(args.weights)
        episodes = _episode_pool(args, cfg, mapgen.derive_seed(args.seed, 4))
        report = evaluate(
            net, episodes, cfg, args.seed, out_dir=args.out, strict=args.strict
        )
        for key, value in report.summary_mapping().items():
            print(f"{key} = {value}")
        return 0

    if args.command == "ablate":
        on, off, table = ablation_checkpoint_reward(
            cfg,
            args.seed,
            out_dir=args.out,
            log_fn=lambda msg: print(msg, flush=True),
        )
        print(table)
        return 0

    if args.command == "render":
        from .render import render_episode
        from .training import run_episode

        episodes = _episode_pool(args, cfg, mapgen.derive_seed(args.seed, 4))
        spec = episodes[args.index]
        net = load_weights(args.weights) if args.weights else None
        rollout = run_episode(
            spec,
            net,
            None,
            cfg,
            0.0,
            mapgen.derive_seed(args.seed, 0xE7A1, args.index),
            robot_policy="value" if net else "orca",
        )
        inflated = mapgen.inflate(spec.grid, cfg.env.footprint_cells // 2)
        path = planner.astar(
            inflated, spec.grid.cell_of(spec.start), spec.grid.cell_of(spec.goal)
        )
        checkpoints = (
            planner.place_checkpoints(path, cfg.env.spacing_d, cfg.env.checkpoint_radius)
            if path
            else []
        )
        out_svg = os.path.join(args.out, f"episode_{args.index:04d}.svg")
        render_episode(rollout.trajectory, spec.grid, path, checkpoints, out_svg)
        save_trajectory_csv(
            rollout.trajectory, os.path.join(args.out, f"episode_{args.index:04d}.csv")
        )
        print(f"wrote {out_svg} (status {rollout.summary.label})")
        return 0

    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
