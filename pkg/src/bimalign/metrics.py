"""Trajectory error and map-quality metrics.

All metrics are computed in the shared BIM frame; no trajectory alignment
is performed before ATE.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import AssociationError, InvalidArgumentError, MetricUndefinedError
from .geometry import CAMERA_FROM_BODY, matrix_to_ypr, rotation_geodesic_matrices
from .scene import SemanticPointCloud

ASSOC_MAX_DT = 0.05
COV_RIDGE = 1e-12
ENTROPY_CONST = 3.0 * math.log(2.0 * math.pi * math.e)


@dataclass
class AteResult:
    ate_pos: float
    ate_rot: float
    rmse_yaw: float
    rmse_pitch: float
    rmse_roll: float
    matched: int
    unmatched: int


@dataclass
class MetricsReport:
    ate_pos: float = float("nan")
    ate_rot: float = float("nan")
    rmse_yaw: float = float("nan")
    rmse_pitch: float = float("nan")
    rmse_roll: float = float("nan")
    mme: float = float("nan")
    mpv: float = float("nan")
    nnd: float = float("nan")
    poses: int = 0
    points: int = 0
    mme_points: int = 0
    mpv_points: int = 0

    CSV_FIELDS = ("ate_pos", "ate_rot", "rmse_yaw", "rmse_pitch", "rmse_roll",
                  "mme", "mpv", "nnd", "poses", "points")

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self, header=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_FIELDS)
        d = asdict(self)
        w.writerow([_fmt(d[k]) for k in self.CSV_FIELDS])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def _rmse(x):
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


# ----------------------------------------------------------------------------
# trajectory error
# ----------------------------------------------------------------------------

def associate(ts_est, ts_gt, max_dt=ASSOC_MAX_DT):
    """Greedy one-to-one nearest-timestamp matching.

    Returns index arrays ``(i_est, i_gt)`` ordered by estimate timestamp.
    """
    ts_est = np.asarray(ts_est, dtype=float)
    ts_gt = np.asarray(ts_gt, dtype=float)
    if len(ts_gt) == 0 or len(ts_est) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    order = np.argsort(ts_gt, kind="stable")
    sorted_gt = ts_gt[order]
    cand = []
    for i, t in enumerate(ts_est):
        k = np.searchsorted(sorted_gt, t)
        for kk in (k - 1, k):
            if 0 <= kk < len(sorted_gt):
                dt = abs(sorted_gt[kk] - t)
                if dt <= max_dt:
                    cand.append((dt, i, int(order[kk])))
    cand.sort()
    used_e, used_g, pairs = set(), set(), []
    for _, i, g in cand:
        if i not in used_e and g not in used_g:
            used_e.add(i)
            used_g.add(g)
            pairs.append((i, g))
    pairs.sort()
    if not pairs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    a = np.array(pairs, dtype=np.int64)
    return a[:, 0], a[:, 1]


def ate(est, gt, max_dt=ASSOC_MAX_DT) -> AteResult:
    """Absolute trajectory error of ``est`` against ``gt`` (both world-from-camera).

    Per-axis errors are the yaw/pitch/roll of the relative rotation
    expressed in the body frame (x forward, z up), so a heading error shows
    up as yaw regardless of the optical-frame convention.
    """
    ie, ig = associate(est.timestamps, gt.timestamps, max_dt)
    if len(ie) == 0:
        raise AssociationError("no pose pairs within the timestamp tolerance")
    Re = np.array([est.poses[i].matrix for i in ie])
    Rg = np.array([gt.poses[i].matrix for i in ig])
    te = np.array([est.poses[i].translation for i in ie])
    tg = np.array([gt.poses[i].translation for i in ig])
    pos_err = np.linalg.norm(te - tg, axis=1)
    rot_err = rotation_geodesic_matrices(Rg, Re)
    C = CAMERA_FROM_BODY
    rel = np.einsum("ij,njk,nkl,lm->nim", C.T, np.swapaxes(Rg, 1, 2), Re, C)
    ypr = np.stack(matrix_to_ypr(rel)[:3], axis=1)
    return AteResult(
        ate_pos=_rmse(pos_err),
        ate_rot=_rmse(rot_err),
        rmse_yaw=_rmse(ypr[:, 0]),
        rmse_pitch=_rmse(ypr[:, 1]),
        rmse_roll=_rmse(ypr[:, 2]),
        matched=len(ie),
        unmatched=len(est) - len(ie),
    )


# ----------------------------------------------------------------------------
# map quality
# ----------------------------------------------------------------------------

def _points(c):
    return c.points if isinstance(c, SemanticPointCloud) else np.asarray(c, dtype=float).reshape(-1, 3)


def neighborhood_cov(P, center):
    """Population covariance of ``P``; coordinates are shifted by ``center``
    first to keep the products well conditioned."""
    D = P - center
    D = D - D.mean(axis=0)
    return D.T @ D / len(D)


def _check_params(radius, min_neighbors):
    if not radius > 0:
        raise InvalidArgumentError("radius must be positive")
    if min_neighbors < 4:
        raise InvalidArgumentError("min_neighbors must be >= 4")


def _entropy(cov):
    det = np.linalg.det(cov + COV_RIDGE * np.eye(3))
    return 0.5 * (ENTROPY_CONST + math.log(det))


def _plane_std(cov):
    return math.sqrt(max(float(np.linalg.eigvalsh(cov)[0]), 0.0))


def _neighbor_lists(query, pool, radius):
    tree = cKDTree(pool)
    return tree.query_ball_point(query, radius)


def _mean_over(query, pool, nbrs, min_neighbors, fn, name):
    vals = []
    for q, idx in zip(query, nbrs):
        if len(idx) < min_neighbors:
            continue
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        vals.append(fn(neighborhood_cov(pool[idx], q)))
    if not vals:
        raise MetricUndefinedError(f"{name}: no point has enough neighbors")
    return float(np.mean(vals)), len(vals)


def mme(cloud, reference, radius=0.30, min_neighbors=10, return_count=False):
    """Mean differential entropy (nats) of neighborhoods drawn from
    ``cloud`` merged with ``reference``, evaluated at ``cloud`` points.
    Lower is crisper."""
    _check_params(radius, min_neighbors)
    P = _points(cloud)
    pool = np.concatenate([P, _points(reference)])
    val, n = _mean_over(P, pool, _neighbor_lists(P, pool, radius), min_neighbors, _entropy, "mme")
    return (val, n) if return_count else val


def mpv(cloud, radius=0.30, min_neighbors=10, return_count=False):
    """Mean out-of-plane standard deviation (m) of neighborhoods within ``cloud``."""
    _check_params(radius, min_neighbors)
    P = _points(cloud)
    val, n = _mean_over(P, P, _neighbor_lists(P, P, radius), min_neighbors, _plane_std, "mpv")
    return (val, n) if return_count else val


def _nearest_dist(P, Q, idx):
    return np.sqrt(np.sum((P - Q[idx]) ** 2, axis=1))


def nnd(cloud, reference, mode="to_reference"):
    """Mean nearest-neighbor distance (m).

    ``to_reference``: from each cloud point to the closest reference point.
    ``within_cloud``: from each cloud point to its closest other cloud point.
    """
    P = _points(cloud)
    if len(P) == 0:
        raise MetricUndefinedError("nnd: empty cloud")
    if mode == "to_reference":
        Q = _points(reference)
        if len(Q) == 0:
            raise MetricUndefinedError("nnd: empty reference")
        _, idx = cKDTree(Q).query(P, k=1)
        return float(np.mean(_nearest_dist(P, Q, idx)))
    if mode == "within_cloud":
        if len(P) < 2:
            raise MetricUndefinedError("nnd: within_cloud needs two points")
        _, idx = cKDTree(P).query(P, k=2)
        return float(np.mean(_nearest_dist(P, P, idx[:, 1])))
    raise InvalidArgumentError(f"unknown nnd mode {mode!r}")


# brute-force references used to validate the indexed versions

def nnd_bruteforce(cloud, reference):
    P, Q = _points(cloud), _points(reference)
    D = np.sum((P[:, None, :] - Q[None, :, :]) ** 2, axis=2)
    return float(np.mean(_nearest_dist(P, Q, np.argmin(D, axis=1))))


def _bruteforce_neighbors(query, pool, radius):
    out = []
    for q in query:
        d = np.sqrt(np.sum((pool - q) ** 2, axis=1))
        out.append(np.flatnonzero(d <= radius))
    return out


def mme_bruteforce(cloud, reference, radius=0.30, min_neighbors=10):
    P = _points(cloud)
    pool = np.concatenate([P, _points(reference)])
    nb = _bruteforce_neighbors(P, pool, radius)
    return _mean_over(P, pool, nb, min_neighbors, _entropy, "mme")[0]


def mpv_bruteforce(cloud, radius=0.30, min_neighbors=10):
    P = _points(cloud)
    return _mean_over(P, P, _bruteforce_neighbors(P, P, radius), min_neighbors, _plane_std, "mpv")[0]


def subsample(cloud, max_points, seed=0):
    """Deterministic random subset of at most ``max_points`` points."""
    if max_points is None or len(cloud) <= max_points:
        return cloud
    idx = np.sort(np.random.default_rng(seed).choice(len(cloud), max_points, replace=False))
    return SemanticPointCloud(cloud.points[idx], cloud.labels[idx])


def evaluate(est=None, gt=None, cloud=None, reference=None, radius=0.30, min_neighbors=10,
             nnd_mode="to_reference", max_points=None, seed=0) -> MetricsReport:
    """Fill a :class:`MetricsReport` from whichever inputs are supplied."""
    rep = MetricsReport()
    if est is not None and gt is not None:
        a = ate(est, gt)
        rep.ate_pos, rep.ate_rot = a.ate_pos, a.ate_rot
        rep.rmse_yaw, rep.rmse_pitch, rep.rmse_roll = a.rmse_yaw, a.rmse_pitch, a.rmse_roll
        rep.poses = a.matched
    if cloud is not None:
        cloud = subsample(cloud, max_points, seed)
        rep.points = len(cloud)
        rep.mpv, rep.mpv_points = mpv(cloud, radius, min_neighbors, return_count=True)
        if reference is not None:
            reference = subsample(reference, max_points, seed + 1)
            rep.mme, rep.mme_points = mme(cloud, reference, radius, min_neighbors, return_count=True)
        if reference is not None or nnd_mode == "within_cloud":
            rep.nnd = nnd(cloud, reference if reference is not None else cloud, nnd_mode)
    return rep
