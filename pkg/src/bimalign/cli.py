"""Command-line entry point: one subcommand per pipeline stage.

Failures print a single ``error_code: message`` line on stderr and exit
with 2 (configuration), 3 (I/O), 4 (numeric or solver) or 5 (empty problem
or undefined metric).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import PipelineConfig
from .errors import BimAlignError, ConfigError


def _common(p):
    p.add_argument("--config", help="pipeline configuration JSON")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config value, e.g. drift.seed=3 (repeatable)")
    p.add_argument("--out-dir", help="workspace directory (default: config out_dir)")
    p.add_argument("--threads", type=int, help="worker cap (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="bimalign",
                                     description="Refine drifted trajectories against a semantic floor plan.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _common(p)
        return p

    p = add("scene", "load a scene spec or OBJ directory and export normalized OBJs")
    p.add_argument("source", nargs="?", help="scene spec JSON or OBJ directory")
    add("sample", "sample the scene surfaces into a semantic PLY")
    add("floorplan", "vectorize the sampled cloud into a semantic floor plan")
    add("simulate", "render sparse frames and correspondences along the ground-truth walk")
    p = add("drift", "apply calibrated or explicit drift to a trajectory")
    p.add_argument("--input", help="input TUM (default: workspace gt.tum)")
    p.add_argument("--output", help="output TUM (default: workspace drifted.tum)")
    add("densify", "densify sparse frames into depth rasters")
    p = add("fuse", "fuse depth rasters along a trajectory into a semantic PLY map")
    p.add_argument("--trajectory", default="drifted", help="workspace name or TUM path (default: drifted)")
    p.add_argument("--output", help="output PLY (default: workspace map_<name>.ply)")
    p = add("optimize", "refine the trajectory against the floor plan")
    p.add_argument("--init", default="drifted", help="initial trajectory name or TUM path")
    p = add("eval", "trajectory and map metrics")
    p.add_argument("--est", default="refined", help="estimated trajectory name or TUM path")
    p.add_argument("--gt", default="gt", help="ground-truth trajectory name or TUM path")
    p.add_argument("--cloud", help="map PLY (default: fused from the estimate)")
    p.add_argument("--reference", help="reference PLY (default: workspace reference.ply)")
    p = add("ablate", "solve once per configured term combination and tabulate")
    p.add_argument("--init", default="drifted", help="initial trajectory name or TUM path")
    p = add("plot", "SVG convergence chart from solve reports")
    p.add_argument("reports", nargs="*", help="SolveReport JSON files (default: workspace solve_report.json)")
    p.add_argument("--output", help="output SVG (default: workspace convergence.svg)")
    add("run", "every stage from scene to metrics")
    return parser


def _load(args):
    cfg = PipelineConfig.load(args.config, args.overrides)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg.threads = args.threads
    ws = Path(args.out_dir or cfg.out_dir)
    return cfg, ws


def dispatch(args):
    cfg, ws = _load(args)
    cmd = args.command
    if cmd != "scene" and cmd != "run" and cmd != "plot":
        ws.mkdir(parents=True, exist_ok=True)
    if cmd == "scene":
        print(json.dumps(pipeline.stage_scene(cfg, ws, args.source), indent=1))
    elif cmd == "sample":
        cloud = pipeline.stage_sample(cfg, ws)
        print(f"{len(cloud)} points -> {ws / 'reference.ply'}")
    elif cmd == "floorplan":
        plan = pipeline.stage_floorplan(cfg, ws)
        print(f"{len(plan.segments)} segments -> {ws / 'plan.json'}")
    elif cmd == "simulate":
        gt, frames, corr = pipeline.stage_simulate(cfg, ws)
        print(f"{len(gt)} poses, {len(frames)} frames, {len(corr)} correspondences")
    elif cmd == "drift":
        _, dc = pipeline.stage_drift(cfg, ws, args.input, args.output)
        print(json.dumps(dc.to_dict()))
    elif cmd == "densify":
        maps = pipeline.stage_densify(cfg, ws)
        print(f"{len(maps)} depth rasters -> {ws / 'depth'}")
    elif cmd == "fuse":
        cloud = pipeline.stage_fuse(cfg, ws, args.trajectory, args.output)
        print(f"{len(cloud)} points")
    elif cmd == "optimize":
        _, rep = pipeline.stage_optimize(cfg, ws, args.init)
        print(f"{rep.termination_reason} after {rep.iterations} iterations: "
              f"cost {rep.initial_cost:.6g} -> {rep.final_cost:.6g}")
    elif cmd == "eval":
        rep = pipeline.stage_eval(cfg, ws, args.est, args.gt, args.cloud, args.reference)
        print(rep.to_csv(), end="")
    elif cmd == "ablate":
        pipeline.stage_ablate(cfg, ws, args.init)
        print((ws / "ablation.csv").read_text(), end="")
    elif cmd == "plot":
        print(pipeline.stage_plot(cfg, ws, args.reports, args.output))
    elif cmd == "run":
        rep = pipeline.run_all(cfg, ws)
        print(rep.to_csv(), end="")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except BimAlignError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_status


if __name__ == "__main__":
    sys.exit(main())
