"""File-based pipeline stages over a workspace directory.

Every stage reads its inputs from and writes its outputs to the workspace,
so any stage can be replaced by an external tool producing the same files.

Workspace layout::

    obj/*.obj  scene.json  reference.ply  plan.json  raster_<class>.pgm
    gt.tum  frames/  correspondences.csv  drifted.tum  drift.json
    depth/frame_<id>.bin  depth/frame_<id>_labels.bin
    map_<name>.ply  refined.tum  solve_report.json
    metrics.json  metrics.csv  ablation.csv  convergence.svg
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import struct
from pathlib import Path

import numpy as np

from . import depth as depthmod
from .config import PipelineConfig
from .drift import DriftConfig, apply_drift, calibrate_sigma
from .errors import DataIOError, InvalidArgumentError, ParseError
from .floorplan import build_floorplan, read_plan, write_pgm, write_plan
from .geometry import CameraModel
from .metrics import evaluate
from .optimize import TERMS, Problem, SolveOptions, SolveReport, TermConfig, solve
from .plot import convergence_svg
from .scene import (SceneSpec, SemanticPointCloud, export_obj_directory, generate_scene,
                    ingest_obj_directory, load_scene, read_ply, sample_uniform, write_ply)
from .simulate import (generate_gt_trajectory, read_correspondences, read_frames, read_tum,
                       render_depth, render_frames, scanline_pattern, synth_correspondences,
                       write_correspondences, write_frames, write_tum)

log = logging.getLogger(__name__)

TERM_COLUMNS = {"geometric": "G", "floor": "F", "wall": "W", "column": "Co", "ceiling": "Ce"}
ABLATION_HEADER = ["method", "G", "F", "W", "Co", "Ce", "MME", "MPV", "NND", "ATE_pos", "ATE_rot"]


def _threads(cfg):
    return cfg.threads or os.cpu_count() or 1


def _need(path: Path, stage):
    if not path.exists():
        raise DataIOError(f"{path} missing; run the {stage!r} stage first")
    return path


def camera_from_config(cfg: PipelineConfig) -> CameraModel:
    c = cfg.simulate.camera
    return CameraModel(c.fx, c.fy, c.cx, c.cy, c.width, c.height)


def terms_from_config(cfg: PipelineConfig, enabled=None) -> TermConfig:
    t = cfg.terms
    en = dict(t.enabled) if enabled is None else {k: k in enabled for k in TERMS}
    return TermConfig(en, dict(t.weight), dict(t.huber_delta), t.assoc_gate)


def solve_options(cfg: PipelineConfig) -> SolveOptions:
    s = cfg.solver
    return SolveOptions(s.max_outer_iters, s.rel_cost_tol, s.lm_lambda_init, s.lm_lambda_factor,
                        s.fix_first_pose, s.optimize_rotation, s.rank_rcond)


# ----------------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------------

def load_configured_scene(cfg: PipelineConfig, ws: Path | None = None):
    """Scene from the workspace's normalized OBJ export when present,
    else from the configured source or inline spec."""
    if ws is not None and (ws / "obj").is_dir():
        return ingest_obj_directory(ws / "obj")
    if cfg.scene.source:
        return load_scene(cfg.scene.source)
    return generate_scene(SceneSpec.from_dict(cfg.scene.spec))


def stage_scene(cfg, ws: Path, source=None):
    ws.mkdir(parents=True, exist_ok=True)
    if source:
        scene = load_scene(source)
    elif cfg.scene.source:
        scene = load_scene(cfg.scene.source)
    else:
        scene = generate_scene(SceneSpec.from_dict(cfg.scene.spec))
    export_obj_directory(scene, ws / "obj")
    summary = scene.summary()
    (ws / "scene.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


def stage_sample(cfg, ws: Path):
    scene = load_configured_scene(cfg, ws)
    cloud = sample_uniform(scene, cfg.sampling.density, cfg.sampling.seed)
    write_ply(ws / "reference.ply", cloud)
    return cloud


def stage_floorplan(cfg, ws: Path, cloud=None):
    scene = load_configured_scene(cfg, ws)
    if cloud is None:
        cloud = read_ply(_need(ws / "reference.ply", "sample"))
    f = cfg.floorplan
    rasters = {}
    plan = build_floorplan(cloud, scene.floor_z, scene.ceiling_z, f.half_band, f.resolution,
                           f.min_hits, f.min_segment_length, rasters=rasters)
    write_plan(ws / "plan.json", plan)
    for name, raster in rasters.items():
        write_pgm(ws / f"raster_{name}.pgm", raster)
    return plan


def stage_simulate(cfg, ws: Path):
    scene = load_configured_scene(cfg, ws)
    s = cfg.simulate
    cam = camera_from_config(cfg)
    # room rectangles only exist for generated scenes
    rooms = None if cfg.scene.source else SceneSpec.from_dict(cfg.scene.spec).rooms
    gt = generate_gt_trajectory(scene, s.waypoints, s.n_frames, s.height, rooms=rooms)
    frames = render_frames(scene, cam, gt, scanline_pattern(cam, s.rows, s.cols), threads=_threads(cfg))
    corr = synth_correspondences(scene, cam, gt, s.per_pair, s.pixel_noise_sigma, s.window, s.seed)
    write_tum(ws / "gt.tum", gt)
    write_frames(ws / "frames", frames, cam)
    write_correspondences(ws / "correspondences.csv", corr)
    return gt, frames, corr


def drift_config(cfg, gt):
    d = cfg.drift
    if d.target_ate_pos is not None or d.target_ate_rot is not None:
        return calibrate_sigma(gt, d.target_ate_pos or 0.0, d.target_ate_rot or 0.0, d.seed)
    return DriftConfig(d.sigma_t, d.sigma_pitch, d.sigma_yaw, d.seed)


def stage_drift(cfg, ws: Path, gt_path=None, out_path=None):
    src = Path(gt_path) if gt_path else _need(ws / "gt.tum", "simulate")
    gt = read_tum(src)
    dc = drift_config(cfg, gt)
    out = Path(out_path) if out_path else ws / "drifted.tum"
    if dc.is_zero:
        # identity drift: pass the input through untouched
        est = gt
        out.write_bytes(src.read_bytes())
    else:
        est = apply_drift(gt, dc)
        write_tum(out, est)
    (out.parent / "drift.json").write_text(json.dumps(dc.to_dict(), indent=1) + "\n")
    return est, dc


def _write_labels_bin(path, labels):
    lab = np.where(labels < 0, 255, labels).astype(np.uint8)
    h, w = lab.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(lab.tobytes())


def _read_labels_bin(path, shape):
    data = Path(path).read_bytes()
    w, h = struct.unpack("<II", data[:8])
    if (h, w) != shape or len(data) != 8 + w * h:
        raise ParseError(f"{path}: label raster does not match its depth raster")
    lab = np.frombuffer(data[8:], np.uint8).reshape(h, w).astype(np.int16)
    return np.where(lab == 255, -1, lab)


def stage_densify(cfg, ws: Path):
    frames, cam = read_frames(_need(ws / "frames", "simulate"))
    out = ws / "depth"
    out.mkdir(exist_ok=True)
    d = cfg.depth
    if d.source == "densified":
        maps = depthmod.densify_frames(frames, cam, d.interp_space, d.smooth_radius, _threads(cfg))
    elif d.source == "rendered":
        scene = load_configured_scene(cfg, ws)
        gt = read_tum(_need(ws / "gt.tum", "simulate"))
        soup = scene.triangle_soup()
        maps = [depthmod.DepthMap(*render_depth(scene, cam, p, soup)) for p in gt.poses]
    else:
        raise InvalidArgumentError(f"unknown depth source {d.source!r}")
    for f, dm in zip(frames, maps):
        depthmod.write_depth_bin(out / f"frame_{f.frame_id:05d}.bin", dm.depth)
        _write_labels_bin(out / f"frame_{f.frame_id:05d}_labels.bin", dm.labels)
    return maps


def load_depth_maps(ws: Path, frames, cam):
    maps = []
    for f in frames:
        path = _need(ws / "depth" / f"frame_{f.frame_id:05d}.bin", "densify")
        dm = depthmod.ingest_depth(path, f, cam)
        lab_path = ws / "depth" / f"frame_{f.frame_id:05d}_labels.bin"
        if lab_path.exists():
            dm = depthmod.DepthMap(dm.depth, _read_labels_bin(lab_path, dm.depth.shape))
        maps.append(dm)
    return maps


def fuse_map(maps, cam, traj, stride):
    clouds = [depthmod.lift_labeled_points(dm, cam, p, None, stride) for dm, p in zip(maps, traj.poses)]
    return SemanticPointCloud.concatenate(clouds)


def stage_fuse(cfg, ws: Path, trajectory="drifted", out_path=None):
    frames, cam = read_frames(_need(ws / "frames", "simulate"))
    traj = _read_named_trajectory(ws, trajectory)
    maps = load_depth_maps(ws, frames, cam)
    cloud = fuse_map(maps, cam, traj, cfg.metrics.map_stride)
    name = Path(trajectory).stem
    write_ply(out_path or ws / f"map_{name}.ply", cloud)
    return cloud


def _read_named_trajectory(ws, name):
    p = Path(name)
    if p.suffix == ".tum" and p.exists():
        return read_tum(p)
    return read_tum(_need(ws / f"{name}.tum", name))


def load_problem_inputs(cfg, ws: Path):
    frames, cam = read_frames(_need(ws / "frames", "simulate"))
    maps = load_depth_maps(ws, frames, cam)
    plan = read_plan(_need(ws / "plan.json", "floorplan"))
    corr = read_correspondences(_need(ws / "correspondences.csv", "simulate"))
    gt = read_tum(ws / "gt.tum") if (ws / "gt.tum").exists() else None
    return frames, cam, maps, plan, corr, gt


def stage_optimize(cfg, ws: Path, init="drifted", inputs=None):
    frames, cam, maps, plan, corr, gt = inputs or load_problem_inputs(cfg, ws)
    init_traj = _read_named_trajectory(ws, init)
    pb = Problem.build(init_traj.poses, maps, cam, plan, corr, terms_from_config(cfg), cfg.depth.stride)
    poses, report = solve(pb, solve_options(cfg), gt=gt, timestamps=init_traj.timestamps)
    refined = init_traj.with_poses(poses)
    write_tum(ws / "refined.tum", refined)
    report.write(ws / "solve_report.json")
    return refined, report


def _cloud_metrics(cfg, cloud, reference, est=None, gt=None):
    m = cfg.metrics
    return evaluate(est, gt, cloud, reference, m.radius, m.min_neighbors, m.nnd_mode,
                    m.max_points, m.seed)


def stage_eval(cfg, ws: Path, est="refined", gt="gt", cloud=None, reference=None):
    est_t = _read_named_trajectory(ws, est)
    gt_t = _read_named_trajectory(ws, gt)
    if cloud is not None:
        cl = read_ply(cloud)
    else:
        frames, cam = read_frames(_need(ws / "frames", "simulate"))
        cl = fuse_map(load_depth_maps(ws, frames, cam), cam, est_t, cfg.metrics.map_stride)
    ref = read_ply(reference or _need(ws / "reference.ply", "sample"))
    rep = _cloud_metrics(cfg, cl, ref, est_t, gt_t)
    (ws / "metrics.json").write_text(rep.to_json())
    (ws / "metrics.csv").write_text(rep.to_csv())
    return rep


def ablation_rows(cfg):
    rows = []
    for row in cfg.ablation.rows:
        unknown = set(row) - set(TERMS)
        if unknown:
            raise InvalidArgumentError(f"unknown term {sorted(unknown)[0]!r} in ablation row")
        rows.append([t for t in TERMS if t in row])
    return rows


def row_name(terms):
    return "+".join(TERM_COLUMNS[t] for t in TERMS if t in terms) or "none"


def stage_ablate(cfg, ws: Path, init="drifted"):
    frames, cam, maps, plan, corr, gt = load_problem_inputs(cfg, ws)
    if gt is None:
        raise DataIOError(f"{ws / 'gt.tum'} missing; ablation needs ground truth")
    init_traj = _read_named_trajectory(ws, init)
    ref = read_ply(_need(ws / "reference.ply", "sample"))
    base = Problem.build(init_traj.poses, maps, cam, plan, corr, terms_from_config(cfg), cfg.depth.stride)
    lines = []
    results = []
    for row in ablation_rows(cfg):
        pb = base.with_terms(terms_from_config(cfg, enabled=row))
        poses, report = solve(pb, solve_options(cfg), gt=gt, timestamps=init_traj.timestamps)
        est = init_traj.with_poses(poses)
        cloud = fuse_map(maps, cam, est, cfg.metrics.map_stride)
        rep = _cloud_metrics(cfg, cloud, ref, est, gt)
        flags = [1 if t in row else 0 for t in ("geometric", "floor", "wall", "column", "ceiling")]
        lines.append([row_name(row)] + flags + [f"{rep.mme:.6f}", f"{rep.mpv:.6f}", f"{rep.nnd:.6f}",
                                                f"{rep.ate_pos:.6f}", f"{rep.ate_rot:.6f}"])
        results.append((row, rep, report))
        log.info("ablation %s: ATE %.3f m / %.2f deg", row_name(row), rep.ate_pos, rep.ate_rot)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    w.writerows(lines)
    (ws / "ablation.csv").write_text(buf.getvalue())
    return results


def stage_plot(cfg, ws: Path, reports=None, out_path=None):
    paths = [Path(p) for p in reports] if reports else [_need(ws / "solve_report.json", "optimize")]
    series = [(p.stem, SolveReport.read(p)) for p in paths]
    svg = convergence_svg(series)
    out = Path(out_path) if out_path else ws / "convergence.svg"
    out.write_text(svg)
    return out


def run_all(cfg, ws: Path):
    """Every stage in order, from scene to metrics and plot."""
    stage_scene(cfg, ws)
    stage_sample(cfg, ws)
    stage_floorplan(cfg, ws)
    stage_simulate(cfg, ws)
    stage_drift(cfg, ws)
    stage_densify(cfg, ws)
    stage_fuse(cfg, ws, "gt")
    stage_fuse(cfg, ws, "drifted")
    stage_optimize(cfg, ws)
    stage_fuse(cfg, ws, "refined")
    rep = stage_eval(cfg, ws, cloud=ws / "map_refined.ply")
    stage_plot(cfg, ws)
    return rep
