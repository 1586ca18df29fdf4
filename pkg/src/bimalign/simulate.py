"""Synthetic sensor data along a ground-truth walk: raycast sparse depth
frames plus inter-frame pixel correspondences. The file formats here let
real data replace either one."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataIOError, InvalidArgumentError, ParseError
from .geometry import CameraModel, Pose, camera_pose
from .scene import BuildingScene, SemanticClass

log = logging.getLogger(__name__)

FRAME_RATE_HZ = 10.0
OCCLUSION_TOL = 0.01


# ----------------------------------------------------------------------------
# data types
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """Timestamped world-from-camera poses, strictly increasing in time."""

    timestamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.poses = list(self.poses)
        if len(self.timestamps) != len(self.poses):
            raise InvalidArgumentError("timestamps and poses differ in length")
        if len(self.poses) < 2:
            raise InvalidArgumentError("a trajectory needs at least two poses")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InvalidArgumentError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self):
        return np.array([p.translation for p in self.poses])

    def rotation_matrices(self):
        return np.array([p.matrix for p in self.poses])

    def with_poses(self, poses):
        return Trajectory(self.timestamps.copy(), poses)


@dataclass(eq=False)
class Frame:
    """Sparse labeled depth samples of one camera capture."""

    frame_id: int
    timestamp: float
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int64).reshape(-1)
        self.v = np.asarray(self.v, dtype=np.int64).reshape(-1)
        self.depth = np.asarray(self.depth, dtype=float).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if not (len(self.u) == len(self.v) == len(self.depth) == len(self.labels)):
            raise InvalidArgumentError("frame sample arrays differ in length")
        if np.any(~(self.depth > 0)):
            raise InvalidArgumentError(f"frame {self.frame_id}: non-positive depth")
        key = self.v * (int(self.u.max(initial=0)) + 1) + self.u
        if len(np.unique(key)) != len(key):
            raise InvalidArgumentError(f"frame {self.frame_id}: duplicate pixel samples")

    def __len__(self):
        return len(self.depth)

    def check_bounds(self, cam: CameraModel):
        if not np.all(cam.in_bounds(self.u, self.v)):
            raise InvalidArgumentError(f"frame {self.frame_id}: sample outside the image")


@dataclass(frozen=True)
class Correspondence:
    frame_i: int
    u_i: float
    v_i: float
    frame_j: int
    u_j: float
    v_j: float


@dataclass(eq=False)
class Correspondences:
    """Column-oriented set of pixel correspondences between frame pairs."""

    frame_i: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    uv_i: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    frame_j: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    uv_j: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.frame_i = np.asarray(self.frame_i, dtype=np.int64).reshape(-1)
        self.frame_j = np.asarray(self.frame_j, dtype=np.int64).reshape(-1)
        self.uv_i = np.asarray(self.uv_i, dtype=float).reshape(-1, 2)
        self.uv_j = np.asarray(self.uv_j, dtype=float).reshape(-1, 2)
        if np.any(self.frame_i == self.frame_j):
            raise InvalidArgumentError("correspondence within a single frame")

    def __len__(self):
        return len(self.frame_i)

    def __iter__(self):
        for k in range(len(self)):
            yield Correspondence(int(self.frame_i[k]), *self.uv_i[k], int(self.frame_j[k]), *self.uv_j[k])

    def subset(self, mask):
        return Correspondences(self.frame_i[mask], self.uv_i[mask], self.frame_j[mask], self.uv_j[mask])

    @classmethod
    def from_list(cls, items):
        items = list(items)
        if not items:
            return cls()
        return cls([c.frame_i for c in items], [(c.u_i, c.v_i) for c in items],
                   [c.frame_j for c in items], [(c.u_j, c.v_j) for c in items])


# ----------------------------------------------------------------------------
# raycasting
# ----------------------------------------------------------------------------

def intersect_rays(origin, dirs, tris, chunk_pairs=2_000_000):
    """Nearest ray/triangle hit (Moller-Trumbore, double-sided).

    ``dirs`` need not be unit length; the returned parameter ``t`` is in
    units of the direction vector.  Returns ``(t, triangle_index)`` with
    ``t = inf`` and index ``-1`` for misses.
    """
    origin = np.asarray(origin, dtype=float)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    best_t = np.full(len(dirs), np.inf)
    best_k = np.full(len(dirs), -1, np.int64)
    step = max(1, chunk_pairs // max(len(tris), 1))
    s = origin[None] - v0  # (T,3)
    for a in range(0, len(dirs), step):
        D = dirs[a:a + step, None, :]  # (R,1,3)
        p = np.cross(D, e2[None])  # (R,T,3)
        det = np.einsum("rtk,tk->rt", p, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = np.einsum("rtk,tk->rt", p, s) * inv
        q = np.cross(s, e1)  # (T,3)
        v = np.einsum("rk,tk->rt", dirs[a:a + step], q) * inv
        t = np.einsum("tk,tk->t", q, e2)[None] * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        t = np.where(hit, t, np.inf)
        k = np.argmin(t, axis=1)
        tk = t[np.arange(len(k)), k]
        best_t[a:a + step] = tk
        best_k[a:a + step] = np.where(np.isfinite(tk), k, -1)
    return best_t, best_k


def raycast_depth(scene: BuildingScene, cam: CameraModel, pose: Pose, pattern,
                  frame_id=0, timestamp=0.0, _soup=None) -> Frame:
    """Sparse labeled depth frame: nearest hit along each pattern pixel ray.

    Depth is the camera-frame z of the hit; pixels whose ray misses every
    triangle are omitted.
    """
    pattern = np.asarray(pattern, dtype=np.int64).reshape(-1, 2)
    if not np.all(cam.in_bounds(pattern[:, 0], pattern[:, 1])):
        raise InvalidArgumentError("pattern pixel outside the image")
    tris, labels = _soup if _soup is not None else scene.triangle_soup()
    dirs = cam.rays(pattern[:, 0], pattern[:, 1]) @ pose.matrix.T
    t, k = intersect_rays(pose.translation, dirs, tris)
    hit = k >= 0
    return Frame(frame_id, timestamp, pattern[hit, 0], pattern[hit, 1], t[hit], labels[k[hit]])


def scanline_pattern(cam: CameraModel, rows=32, cols=64):
    """Evenly spaced ``rows x cols`` pixel lattice, corners included, as an
    ``(N, 2)`` array of ``(u, v)``."""
    if rows < 2 or cols < 2:
        raise InvalidArgumentError("scanline pattern needs at least 2 rows and 2 columns")
    us = np.round(np.linspace(0, cam.width - 1, cols)).astype(np.int64)
    vs = np.round(np.linspace(0, cam.height - 1, rows)).astype(np.int64)
    uu, vv = np.meshgrid(np.unique(us), np.unique(vs))
    return np.column_stack([uu.ravel(), vv.ravel()])


def render_frames(scene, cam, traj: Trajectory, pattern, threads=1):
    soup = scene.triangle_soup()

    def one(k):
        return raycast_depth(scene, cam, traj.poses[k], pattern, k, float(traj.timestamps[k]), soup)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(len(traj))))
    return [one(k) for k in range(len(traj))]


def render_depth(scene, cam, pose, _soup=None):
    """Dense per-pixel raycast: ``(depth (H,W) NaN on miss, labels (H,W) int16, -1 on miss)``."""
    tris, labels = _soup if _soup is not None else scene.triangle_soup()
    vv, uu = np.mgrid[0:cam.height, 0:cam.width]
    dirs = cam.rays(uu.ravel(), vv.ravel()) @ pose.matrix.T
    t, k = intersect_rays(pose.translation, dirs, tris)
    depth = np.where(k >= 0, t, np.nan).reshape(cam.height, cam.width)
    lab = np.where(k >= 0, labels[np.maximum(k, 0)].astype(np.int16), -1).reshape(cam.height, cam.width)
    return depth, lab


# ----------------------------------------------------------------------------
# correspondences
# ----------------------------------------------------------------------------

def synth_correspondences(scene, cam, traj: Trajectory, per_pair=50, pixel_noise_sigma=0.5,
                          window=3, seed=0, oversample=3) -> Correspondences:
    """Pixel matches between every frame pair ``0 < j - i <= window``.

    Surface points are found by casting random rays from frame ``i``; a
    point is kept only if it projects into frame ``j`` and frame ``j``'s own
    ray at that pixel hits it within 1 cm (no occlusion).
    """
    if per_pair <= 0:
        raise InvalidArgumentError("per_pair must be positive")
    if window < 1:
        raise InvalidArgumentError("window must be >= 1")
    rng = np.random.default_rng(seed)
    soup = scene.triangle_soup()
    tris = soup[0]
    out_i, out_j, uv_i, uv_j = [], [], [], []
    for i in range(len(traj)):
        for j in range(i + 1, min(i + window, len(traj) - 1) + 1):
            pi, pj = traj.poses[i], traj.poses[j]
            n = oversample * per_pair
            uv = rng.random((n, 2)) * [cam.width - 1, cam.height - 1]
            dirs = cam.rays(uv[:, 0], uv[:, 1]) @ pi.matrix.T
            t, k = intersect_rays(pi.translation, dirs, tris)
            hit = k >= 0
            X = pi.translation + dirs[hit] * t[hit, None]
            uv = uv[hit]
            Xj = pj.inverse().apply(X)
            uvj, vis = cam.project_points(Xj)
            X, uv, uvj, zj = X[vis], uv[vis], uvj[vis], Xj[vis, 2]
            if len(X):
                dj = cam.rays(uvj[:, 0], uvj[:, 1]) @ pj.matrix.T
                tj, kj = intersect_rays(pj.translation, dj, tris)
                unocc = (kj >= 0) & (np.abs(tj - zj) <= OCCLUSION_TOL)
                uv, uvj = uv[unocc][:per_pair], uvj[unocc][:per_pair]
            else:
                uvj = uvj.reshape(0, 2)
            if pixel_noise_sigma > 0 and len(uv):
                uv = uv + rng.normal(0, pixel_noise_sigma, uv.shape)
                uvj = uvj + rng.normal(0, pixel_noise_sigma, uvj.shape)
            ok = cam.in_bounds(uv[:, 0], uv[:, 1]) & cam.in_bounds(uvj[:, 0], uvj[:, 1])
            m = int(ok.sum())
            out_i.append(np.full(m, i))
            out_j.append(np.full(m, j))
            uv_i.append(uv[ok])
            uv_j.append(uvj[ok])
    if not out_i:
        return Correspondences()
    return Correspondences(np.concatenate(out_i), np.concatenate(uv_i),
                           np.concatenate(out_j), np.concatenate(uv_j))


# ----------------------------------------------------------------------------
# ground-truth trajectory
# ----------------------------------------------------------------------------

def _inside_rooms(scene_rooms, x, y):
    return any(r.x <= x <= r.x + r.w and r.y <= y <= r.y + r.h for r in scene_rooms)


def generate_gt_trajectory(scene, waypoints, n_frames, height, rooms=None) -> Trajectory:
    """Arc-length uniform poses along a piecewise-linear 2D path.

    The camera looks along the path tangent with zero pitch and roll, at
    ``height`` above the floor; timestamps are spaced at 10 Hz.  ``rooms``
    (scene-spec room rectangles) tightens the bounds check; otherwise the
    scene bounding box is used.
    """
    W = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if n_frames < 2:
        raise InvalidArgumentError("n_frames must be >= 2")
    if len(W) < 2:
        raise InvalidArgumentError("need at least two waypoints")
    lo, hi = scene.bounds()
    for x, y in W:
        inside = _inside_rooms(rooms, x, y) if rooms else (lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1])
        if not inside:
            raise InvalidArgumentError(f"waypoint ({x}, {y}) outside the scene")
    seg = np.diff(W, axis=0)
    seglen = np.linalg.norm(seg, axis=1)
    if np.any(seglen <= 0):
        raise InvalidArgumentError("repeated waypoint")
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    s = np.linspace(0.0, cum[-1], n_frames)
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[k]) / seglen[k]
    xy = W[k] + frac[:, None] * seg[k]
    yaw = np.degrees(np.arctan2(seg[k, 1], seg[k, 0]))
    z = scene.floor_z + height
    poses = [camera_pose((x, y, z), yw) for (x, y), yw in zip(xy, yaw)]
    return Trajectory(np.arange(n_frames) / FRAME_RATE_HZ, poses)


# ----------------------------------------------------------------------------
# file formats
# ----------------------------------------------------------------------------

def write_tum(path, traj: Trajectory):
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, p in zip(traj.timestamps, traj.poses):
        w, x, y, z = p.rotation
        tx, ty, tz = p.translation
        lines.append(f"{ts:.6f} {tx:.9f} {ty:.9f} {tz:.9f} {x:.12f} {y:.12f} {z:.12f} {w:.12f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum(path) -> Trajectory:
    """TUM trajectory; lines are sorted by timestamp."""
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            raise ParseError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            rows.append([float(x) for x in parts])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric field") from None
    rows.sort(key=lambda r: r[0])
    poses = [Pose((r[7], r[4], r[5], r[6]), r[1:4]) for r in rows]
    try:
        return Trajectory([r[0] for r in rows], poses)
    except InvalidArgumentError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_frames(directory, frames, cam: CameraModel):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"camera": cam.to_dict(), "frames": {}}
    for f in frames:
        rows = ["u,v,depth,class"]
        for u, v, z, c in zip(f.u, f.v, f.depth, f.labels):
            rows.append(f"{u},{v},{z:.9f},{SemanticClass(int(c)).label}")
        (d / f"frame_{f.frame_id:05d}.csv").write_text("\n".join(rows) + "\n")
        manifest["frames"][str(f.frame_id)] = round(float(f.timestamp), 6)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def read_frames(directory, cam: CameraModel | None = None):
    """Frames listed in ``manifest.json``; returns ``(frames, camera)``."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except OSError as exc:
        raise DataIOError(f"cannot read {d / 'manifest.json'}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{d / 'manifest.json'}: {exc}") from None
    if cam is None:
        if "camera" not in manifest:
            raise ParseError(f"{d}: manifest has no camera and none was given")
        cam = CameraModel.from_dict(manifest["camera"])
    entries = manifest.get("frames", manifest)
    frames = []
    for fid, ts in sorted(((int(k), v) for k, v in entries.items()), key=lambda kv: kv[0]):
        path = d / f"frame_{fid:05d}.csv"
        if not path.exists():
            path = d / f"frame_{fid}.csv"
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                recs = list(reader)
        except OSError as exc:
            raise DataIOError(f"cannot read {path}: {exc}") from None
        try:
            u = [int(round(float(r["u"]))) for r in recs]
            v = [int(round(float(r["v"]))) for r in recs]
            z = [float(r["depth"]) for r in recs]
            c = [int(SemanticClass.from_name(r["class"])) for r in recs]
        except (KeyError, ValueError) as exc:
            raise ParseError(f"{path}: malformed frame CSV ({exc})") from None
        frame = Frame(fid, float(ts), u, v, z, c)
        frame.check_bounds(cam)
        frames.append(frame)
    return frames, cam


def write_correspondences(path, corr: Correspondences):
    rows = ["frame_i,u_i,v_i,frame_j,u_j,v_j"]
    for fi, (ui, vi), fj, (uj, vj) in zip(corr.frame_i, corr.uv_i, corr.frame_j, corr.uv_j):
        rows.append(f"{fi},{ui:.6f},{vi:.6f},{fj},{uj:.6f},{vj:.6f}")
    Path(path).write_text("\n".join(rows) + "\n")


def read_correspondences(path) -> Correspondences:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data.size == 0:
        return Correspondences()
    if data.shape[1] != 6:
        raise ParseError(f"{path}: expected 6 columns")
    return Correspondences(data[:, 0].astype(np.int64), data[:, 1:3],
                           data[:, 3].astype(np.int64), data[:, 4:6])


def default_camera() -> CameraModel:
    """Small pinhole camera used by the synthetic pipeline (160x120, ~77 deg HFoV)."""
    return CameraModel(100.0, 100.0, 80.0, 60.0, 160, 120)
