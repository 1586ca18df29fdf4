"""Multi-term bundle adjustment of frame poses against a vectorized floor plan.

Five residual families share one robust least-squares objective:

* ``geometric``: two frames' lifts of a matched pixel pair should coincide;
* ``floor`` / ``ceiling``: labeled points should lie on the horizontal planes;
* ``wall`` / ``column``: labeled points, dropped to 2-D, should lie on the
  nearest plan segment of their class.

Every family is Huber-robustified and normalized by its active residual
count.  Levenberg-Marquardt updates each pose on the left,
``R <- exp(w) R`` and ``t <- t + tau``; wall/column points are re-associated
to their nearest segment after every accepted step.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import EmptyProblemError, InvalidArgumentError
from .geometry import Pose, closest_on_segments, so3_exp
from .scene import SemanticClass

log = logging.getLogger(__name__)

TERMS = ("geometric", "floor", "wall", "column", "ceiling")
BIM_TERMS = ("floor", "wall", "column", "ceiling")
TERM_CLASS = {"floor": SemanticClass.FLOOR, "ceiling": SemanticClass.CEILING,
              "wall": SemanticClass.WALL, "column": SemanticClass.COLUMN}
DEFAULT_HUBER = {"geometric": 0.10, "floor": 0.05, "ceiling": 0.05, "wall": 0.10, "column": 0.10}
STALL_REJECTS = 10


def _per_term(value):
    return lambda: {t: value for t in TERMS}


@dataclass
class TermConfig:
    enabled: dict = field(default_factory=_per_term(True))
    weight: dict = field(default_factory=_per_term(1.0))
    huber_delta: dict = field(default_factory=lambda: dict(DEFAULT_HUBER))
    assoc_gate: float = 0.5

    def __post_init__(self):
        for name in ("enabled", "weight", "huber_delta"):
            d = getattr(self, name)
            unknown = set(d) - set(TERMS)
            if unknown:
                raise InvalidArgumentError(f"unknown term {sorted(unknown)[0]!r} in {name}")
        self.enabled = {t: bool(self.enabled.get(t, True)) for t in TERMS}
        self.weight = {t: float(self.weight.get(t, 1.0)) for t in TERMS}
        self.huber_delta = {t: float(self.huber_delta.get(t, DEFAULT_HUBER[t])) for t in TERMS}
        if any(w < 0 for w in self.weight.values()):
            raise InvalidArgumentError("term weights must be >= 0")
        if any(not d > 0 for d in self.huber_delta.values()):
            raise InvalidArgumentError("huber_delta must be positive")
        if not self.assoc_gate > 0:
            raise InvalidArgumentError("assoc_gate must be positive")

    @classmethod
    def only(cls, *terms, **kw):
        return cls(enabled={t: t in terms for t in TERMS}, **kw)

    def active(self):
        return [t for t in TERMS if self.enabled[t] and self.weight[t] > 0]


@dataclass
class SolveOptions:
    max_outer_iters: int = 50
    rel_cost_tol: float = 1e-6
    lm_lambda_init: float = 1e-4
    lm_lambda_factor: float = 10.0
    fix_first_pose: str = "auto"   # auto | true | false
    optimize_rotation: bool = True
    # eigen-directions of the damped system weaker than this fraction of the
    # strongest are left untouched by a step
    rank_rcond: float = 1e-4


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    termination_reason: str = "converged"
    cost: list = field(default_factory=list)
    ate_pos: list = field(default_factory=list)
    ate_rot: list = field(default_factory=list)
    residual_counts: dict = field(default_factory=dict)
    dropped_correspondences: int = 0

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "termination_reason": self.termination_reason,
            "per_iteration": {"cost": self.cost, "ate_pos": self.ate_pos, "ate_rot": self.ate_rot},
            "residual_counts": self.residual_counts,
            "dropped_correspondences": self.dropped_correspondences,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d):
        it = d.get("per_iteration", {})
        return cls(d["iterations"], d["initial_cost"], d["final_cost"], d["termination_reason"],
                   it.get("cost", []), it.get("ate_pos", []), it.get("ate_rot", []),
                   d.get("residual_counts", {}), d.get("dropped_correspondences", 0))

    @classmethod
    def read(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# ----------------------------------------------------------------------------
# robust loss
# ----------------------------------------------------------------------------

def huber(s, delta):
    s = np.abs(s)
    return np.where(s <= delta, 0.5 * s * s, delta * (s - 0.5 * delta))


def huber_weight(s, delta):
    """IRLS weight ``rho'(s)/s``."""
    s = np.abs(s)
    return np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-300))


# ----------------------------------------------------------------------------
# residual kernels with analytic Jacobians (columns: rotation 0..2, translation 3..5)
# ----------------------------------------------------------------------------

def plane_residual(X, R, t, normal, offset):
    """Signed distance of ``R X + t`` to the plane ``n.x = offset``.

    ``X (M,3)``, ``R (M,3,3)`` or ``(3,3)``, ``t (M,3)`` or ``(3,)``.
    Returns ``(r (M,), J (M,6))``.
    """
    a = np.einsum("...ij,...j->...i", R, X)
    n = np.asarray(normal, dtype=float)
    r = (a + t) @ n - offset
    J = np.concatenate([np.cross(a, n), np.broadcast_to(n, a.shape)], axis=-1)
    return r, J


def segment_residual(X, R, t, A, B):
    """Horizontal distance of ``R X + t`` to the segment ``A->B`` it was
    associated with (``A, B (M,2)``).  Returns ``(r (M,), J (M,6))``."""
    a = np.einsum("...ij,...j->...i", R, X)
    p = (a + t)[:, :2]
    d = B - A
    s = np.clip(np.sum((p - A) * d, axis=1) / np.sum(d * d, axis=1), 0.0, 1.0)
    diff = p - (A + s[:, None] * d)
    r = np.linalg.norm(diff, axis=1)
    # direction of steepest increase; on the segment use its normal
    nrm = np.column_stack([-d[:, 1], d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    u2 = np.where((r > 1e-12)[:, None], diff / np.maximum(r, 1e-12)[:, None], nrm)
    u3 = np.column_stack([u2, np.zeros(len(u2))])
    J = np.concatenate([np.cross(a, u3), u3], axis=1)
    return r, J


def geometric_residual(Xi, Ri, ti, Xj, Rj, tj):
    """``(Ri Xi + ti) - (Rj Xj + tj)``.  Returns ``(r (M,3), Ji (M,3,6), Jj (M,3,6))``."""
    ai = np.einsum("...ij,...j->...i", Ri, Xi)
    aj = np.einsum("...ij,...j->...i", Rj, Xj)
    r = ai + ti - aj - tj
    eye = np.broadcast_to(np.eye(3), ai.shape[:-1] + (3, 3))
    Ji = np.concatenate([-_skew(ai), eye], axis=-1)
    Jj = np.concatenate([_skew(aj), -eye], axis=-1)
    return r, Ji, Jj


def _skew(v):
    z = np.zeros(v.shape[:-1])
    return np.stack([np.stack([z, -v[..., 2], v[..., 1]], -1),
                     np.stack([v[..., 2], z, -v[..., 0]], -1),
                     np.stack([-v[..., 1], v[..., 0], z], -1)], axis=-2)


def nearest_segments(P, A, B, chunk=20000):
    """Index of and distance to the nearest segment for each 2-D point."""
    idx = np.empty(len(P), np.int64)
    dist = np.empty(len(P))
    for s in range(0, len(P), chunk):
        D, _ = closest_on_segments(P[s:s + chunk], A, B)
        k = np.argmin(D, axis=1)
        idx[s:s + chunk] = k
        dist[s:s + chunk] = D[np.arange(len(k)), k]
    return idx, dist


def _box_segment_dist(lo, hi, A, B, samples=16):
    """Conservative lower bound on the distance between an axis-aligned box
    and each segment: the minimum over sampled segment points minus the
    largest gap between samples."""
    s = np.linspace(0.0, 1.0, samples)
    pts = A[:, None, :] + s[None, :, None] * (B - A)[:, None, :]
    gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    d = np.linalg.norm(gap, axis=-1).min(axis=1)
    slack = 0.5 * np.linalg.norm(B - A, axis=1) / (samples - 1)
    return np.maximum(d - slack, 0.0)


class SegmentIndex:
    """Uniform-grid bucketing of plan segments for gated nearest queries.

    Each cell stores the segments that come within ``gate`` of it, so the
    nearest segment of any point whose nearest distance is at most ``gate``
    is always among its cell's candidates.  Results equal the brute-force
    :func:`nearest_segments` under the gate.
    """

    def __init__(self, A, B, gate, cell=0.25):
        self.A = np.asarray(A, dtype=float).reshape(-1, 2)
        self.B = np.asarray(B, dtype=float).reshape(-1, 2)
        self.gate = float(gate)
        self.cell = float(cell)
        if len(self.A) == 0:
            self.shape = (0, 0)
            return
        lo = np.minimum(self.A, self.B).min(axis=0) - gate
        hi = np.maximum(self.A, self.B).max(axis=0) + gate
        self.origin = lo
        self.shape = tuple(np.maximum(np.ceil((hi - lo) / cell).astype(int), 1))
        self.cands = {}
        for ix in range(self.shape[0]):
            for iy in range(self.shape[1]):
                c_lo = lo + cell * np.array([ix, iy])
                near = np.flatnonzero(_box_segment_dist(c_lo, c_lo + cell, self.A, self.B) <= gate)
                if len(near):
                    self.cands[ix * self.shape[1] + iy] = near

    def query(self, P):
        """``(index, distance)`` per point; index -1 (distance inf) when no
        segment lies within the gate."""
        P = np.asarray(P, dtype=float).reshape(-1, 2)
        idx = np.full(len(P), -1, np.int64)
        dist = np.full(len(P), np.inf)
        if not self.cands or len(P) == 0:
            return idx, dist
        g = np.floor((P - self.origin) / self.cell).astype(np.int64)
        inside = np.all((g >= 0) & (g < np.array(self.shape)), axis=1)
        key = np.where(inside, g[:, 0] * self.shape[1] + g[:, 1], -1)
        order = np.argsort(key, kind="stable")
        ks = key[order]
        starts = np.flatnonzero(np.concatenate([[True], ks[1:] != ks[:-1]]))
        ends = np.append(starts[1:], len(ks))
        for a, b in zip(starts, ends):
            cand = self.cands.get(int(ks[a]))
            if cand is None:
                continue
            sel = order[a:b]
            D, _ = closest_on_segments(P[sel], self.A[cand], self.B[cand])
            k = np.argmin(D, axis=1)
            dk = D[np.arange(len(k)), k]
            ok = dk <= self.gate
            idx[sel[ok]] = cand[k[ok]]
            dist[sel[ok]] = dk[ok]
        return idx, dist


# ----------------------------------------------------------------------------
# single-observation wrappers
# ----------------------------------------------------------------------------

def residual_geometric(c, poses, depth_maps, cam):
    """Residual of one :class:`~bimalign.simulate.Correspondence`."""
    di = depth_maps[c.frame_i].sample(c.u_i, c.v_i)
    dj = depth_maps[c.frame_j].sample(c.u_j, c.v_j)
    Xi = cam.backproject_points(c.u_i, c.v_i, di)
    Xj = cam.backproject_points(c.u_j, c.v_j, dj)
    return poses[c.frame_i].apply(Xi) - poses[c.frame_j].apply(Xj)


def residual_plane(x_cam, pose: Pose, plane):
    return float(plane.normal @ pose.apply(x_cam) - plane.offset)


def residual_segment(x_cam, pose: Pose, plan, cls, gate):
    """Distance to the nearest ``cls`` segment, or ``None`` when gated out
    or the plan has no segment of that class."""
    A, B = plan.segment_arrays(cls)
    if len(A) == 0:
        return None
    p = pose.apply(x_cam)[:2].reshape(1, 2)
    _, dist = nearest_segments(p, A, B)
    return None if dist[0] > gate else float(dist[0])


# ----------------------------------------------------------------------------
# problem
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class Problem:
    """Observations bound to pose indices, in camera coordinates.

    ``points``/``point_frame``/``point_class`` hold the labeled lifts used by
    the BIM terms; ``corr_*`` hold the geometric term's point pairs.
    """

    poses: list
    points: np.ndarray
    point_frame: np.ndarray
    point_class: np.ndarray
    corr_i: np.ndarray
    corr_j: np.ndarray
    corr_Xi: np.ndarray
    corr_Xj: np.ndarray
    plan: object
    terms: TermConfig
    dropped_correspondences: int = 0

    @classmethod
    def build(cls, poses, depth_maps, cam, plan, correspondences=None, terms=None, stride=4):
        from .depth import lift_labeled_points

        terms = terms or TermConfig()
        poses = list(poses)
        if len(depth_maps) != len(poses):
            raise InvalidArgumentError("one depth map per pose is required")
        classes = [TERM_CLASS[t] for t in BIM_TERMS]
        pts, fr, lab = [], [], []
        for k, dm in enumerate(depth_maps):
            c = lift_labeled_points(dm, cam, None, classes, stride, frame="camera")
            pts.append(c.points)
            lab.append(c.labels)
            fr.append(np.full(len(c), k, np.int64))
        points = np.concatenate(pts) if pts else np.zeros((0, 3))
        point_class = np.concatenate(lab) if lab else np.zeros(0, np.uint8)
        point_frame = np.concatenate(fr) if fr else np.zeros(0, np.int64)

        ci = cj = np.zeros(0, np.int64)
        Xi = Xj = np.zeros((0, 3))
        dropped = 0
        if correspondences is not None and len(correspondences):
            fi, fj = correspondences.frame_i, correspondences.frame_j
            if fi.max() >= len(poses) or fj.max() >= len(poses) or min(fi.min(), fj.min()) < 0:
                raise InvalidArgumentError("correspondence references a missing frame")
            di = np.empty(len(fi))
            dj = np.empty(len(fj))
            for k in np.unique(np.concatenate([fi, fj])):
                m = fi == k
                di[m] = depth_maps[k].sample(*correspondences.uv_i[m].T)
                m = fj == k
                dj[m] = depth_maps[k].sample(*correspondences.uv_j[m].T)
            ok = np.isfinite(di) & np.isfinite(dj)
            dropped = int((~ok).sum())
            if dropped:
                log.info("dropped %d correspondences without valid depth", dropped)
            ci, cj = fi[ok], fj[ok]
            Xi = cam.backproject_points(*correspondences.uv_i[ok].T, di[ok])
            Xj = cam.backproject_points(*correspondences.uv_j[ok].T, dj[ok])
        return cls(poses, points, point_frame, point_class, ci, cj, Xi, Xj, plan, terms, dropped)

    def with_terms(self, terms):
        return Problem(self.poses, self.points, self.point_frame, self.point_class, self.corr_i,
                       self.corr_j, self.corr_Xi, self.corr_Xj, self.plan, terms,
                       self.dropped_correspondences)

    def with_poses(self, poses):
        return Problem(list(poses), self.points, self.point_frame, self.point_class, self.corr_i,
                       self.corr_j, self.corr_Xi, self.corr_Xj, self.plan, self.terms,
                       self.dropped_correspondences)


class _Evaluator:
    """Residuals and normal equations for one :class:`Problem`."""

    def __init__(self, problem: Problem):
        self.pb = problem
        self.terms = problem.terms
        self.active = problem.terms.active()
        self.n_poses = len(problem.poses)
        self.sel = {}
        self.segs = {}
        self.index = {}
        warned = []
        for t in BIM_TERMS:
            if t not in self.active:
                continue
            self.sel[t] = np.flatnonzero(problem.point_class == int(TERM_CLASS[t]))
            if t in ("wall", "column"):
                A, B = problem.plan.segment_arrays(TERM_CLASS[t])
                self.segs[t] = (A, B)
                self.index[t] = SegmentIndex(A, B, problem.terms.assoc_gate)
                if len(A) == 0:
                    warned.append(t)
        for t in warned:
            log.warning("plan has no %s segments; the %s term contributes nothing", t, t)

    # association ------------------------------------------------------------
    def associate(self, R, t):
        """Nearest-segment index per wall/column point, -1 when gated out."""
        assoc = {}
        for term, (A, B) in self.segs.items():
            idx = self.sel[term]
            if len(A) == 0 or len(idx) == 0:
                assoc[term] = np.full(len(idx), -1, np.int64)
                continue
            f = self.pb.point_frame[idx]
            p = (np.einsum("nij,nj->ni", R[f], self.pb.points[idx]) + t[f])[:, :2]
            assoc[term] = self.index[term].query(p)[0]
        return assoc

    # residual blocks ----------------------------------------------------------
    def blocks(self, R, t, assoc, jacobians=True):
        """Per term: ``(scalar norms s, residual rows, Jacobian rows, row->pose)``."""
        out = {}
        pb = self.pb
        for term in self.active:
            if term == "geometric":
                if len(pb.corr_i) == 0:
                    continue
                i, j = pb.corr_i, pb.corr_j
                r, Ji, Jj = geometric_residual(pb.corr_Xi, R[i], t[i], pb.corr_Xj, R[j], t[j])
                out[term] = (np.linalg.norm(r, axis=1), r, (Ji, Jj), (i, j))
                continue
            idx = self.sel[term]
            if term in ("floor", "ceiling"):
                plane = pb.plan.floor if term == "floor" else pb.plan.ceiling
                f = pb.point_frame[idx]
                r, J = plane_residual(pb.points[idx], R[f], t[f], plane.normal, plane.offset)
            else:
                a = assoc[term]
                keep = a >= 0
                idx, a = idx[keep], a[keep]
                if len(idx) == 0:
                    continue
                A, B = self.segs[term]
                f = pb.point_frame[idx]
                r, J = segment_residual(pb.points[idx], R[f], t[f], A[a], B[a])
            if len(idx) == 0:
                continue
            out[term] = (np.abs(r), r, J, f)
        return out

    def cost(self, R, t, assoc=None):
        if assoc is None:
            assoc = self.associate(R, t)
        total = 0.0
        for term, (s, *_rest) in self.blocks(R, t, assoc, jacobians=False).items():
            total += self.terms.weight[term] / len(s) * float(np.sum(huber(s, self.terms.huber_delta[term])))
        return total

    def counts(self, R, t):
        assoc = self.associate(R, t)
        return {term: int(len(b[0])) for term, b in self.blocks(R, t, assoc).items()}

    def normal_equations(self, R, t, assoc):
        """Weighted Gauss-Newton system ``(H, g)`` over all poses (6 per pose)."""
        P = self.n_poses
        rows, cols, vals, rhs = [], [], [], []
        nrow = 0
        for term, (s, r, J, f) in self.blocks(R, t, assoc).items():
            c = self.terms.weight[term] / len(s) * huber_weight(s, self.terms.huber_delta[term])
            sw = np.sqrt(c)
            if term == "geometric":
                Ji, Jj = J
                i, j = f
                M = len(s)
                rid = nrow + np.arange(3 * M).reshape(M, 3)
                for Jk, pk in ((Ji, i), (Jj, j)):
                    rows.append(np.repeat(rid, 6, axis=1).ravel())
                    cols.append((6 * pk[:, None, None] + np.arange(6)[None, None, :]).repeat(3, axis=1).ravel())
                    vals.append((Jk * sw[:, None, None]).ravel())
                rhs.append((r * sw[:, None]).ravel())
                nrow += 3 * M
            else:
                M = len(s)
                rid = nrow + np.arange(M)
                rows.append(np.repeat(rid, 6))
                cols.append((6 * f[:, None] + np.arange(6)).ravel())
                vals.append((J * sw[:, None]).ravel())
                rhs.append(r * sw)
                nrow += M
        if nrow == 0:
            return np.zeros((6 * P, 6 * P)), np.zeros(6 * P)
        Js = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(nrow, 6 * P))
        rv = np.concatenate(rhs)
        H = (Js.T @ Js).toarray()
        g = Js.T @ rv
        return H, g


def _state(poses):
    R = np.array([p.matrix for p in poses])
    t = np.array([p.translation for p in poses])
    return R, t


def _retract(R, t, delta):
    d = delta.reshape(-1, 6)
    return np.einsum("nij,njk->nik", so3_exp(d[:, :3]), R), t + d[:, 3:]


def total_cost(problem: Problem) -> float:
    """Count-normalized, weighted sum of Huber losses over the active terms."""
    ev = _Evaluator(problem)
    R, t = _state(problem.poses)
    return ev.cost(R, t)


def _damped_step(H, diag, lam, g, rcond=1e-4):
    """Truncated solution of ``(H + lam*diag) x = -g``.

    A frame that sees a single wall cannot tell roll about the wall normal
    or sliding along it; only a handful of points near wall ends pin those
    directions, and they carry the worst depth.  Steps along them are pure
    noise-fitting and can carry a pose to a mirrored configuration, so
    eigen-directions weaker than ``rcond`` times the strongest are dropped.
    """
    try:
        w, V = np.linalg.eigh(H + lam * np.diag(diag))
    except np.linalg.LinAlgError:
        return None
    keep = w > rcond * w.max()
    return -(V[:, keep] @ ((V[:, keep].T @ g) / w[keep]))


def solve(problem: Problem, options: SolveOptions | None = None, gt=None, timestamps=None):
    """Levenberg-Marquardt refinement.  Returns ``(poses, SolveReport)``.

    ``gt`` (a :class:`~bimalign.simulate.Trajectory`) enables per-iteration
    ATE tracking; ``timestamps`` default to the ground truth's.
    """
    from .metrics import ate
    from .simulate import Trajectory

    opt = options or SolveOptions()
    ev = _Evaluator(problem)
    report = SolveReport(dropped_correspondences=problem.dropped_correspondences)
    poses = list(problem.poses)
    if not ev.active:
        report.termination_reason = "converged"
        return poses, report

    R, t = _state(poses)
    assoc = ev.associate(R, t)
    counts = {term: int(len(b[0])) for term, b in ev.blocks(R, t, assoc).items()}
    report.residual_counts = counts
    if sum(counts.values()) == 0:
        raise EmptyProblemError("enabled terms have no active residuals")

    fix = opt.fix_first_pose
    if fix == "auto":
        fix_first = not any(term in ev.active for term in BIM_TERMS)
    else:
        fix_first = fix in (True, "true", "True", 1)
    P = len(poses)
    free = np.ones((P, 6), bool)
    if fix_first:
        free[0] = False
    if not opt.optimize_rotation:
        free[:, :3] = False
    free = free.ravel()

    ts = timestamps if timestamps is not None else (gt.timestamps if gt is not None else None)

    def track(Rc, tc):
        report.cost.append(cost)
        if gt is not None:
            a = ate(Trajectory(ts, [Pose.from_matrix(Ri, ti) for Ri, ti in zip(Rc, tc)]), gt)
            report.ate_pos.append(a.ate_pos)
            report.ate_rot.append(a.ate_rot)

    cost = ev.cost(R, t, assoc)
    report.initial_cost = cost
    track(R, t)
    lam = opt.lm_lambda_init
    rejects = 0
    reason = "max_iters"
    moved = False
    it = 0
    for it in range(1, opt.max_outer_iters + 1):
        H, g = ev.normal_equations(R, t, assoc)
        Hf = H[np.ix_(free, free)]
        gf = g[free]
        if cost <= 1e-300 or not np.any(gf):
            reason = "converged"
            break
        diag = np.maximum(np.diag(Hf), 1e-12)
        accepted = False
        while True:
            step = _damped_step(Hf, diag, lam, gf, opt.rank_rcond)
            if step is not None and np.all(np.isfinite(step)):
                delta = np.zeros(6 * P)
                delta[free] = step
                Rn, tn = _retract(R, t, delta)
                assoc_n = ev.associate(Rn, tn)
                cost_n = ev.cost(Rn, tn, assoc_n)
                if cost_n < cost:
                    accepted = True
                    break
            rejects += 1
            lam *= opt.lm_lambda_factor
            if rejects >= STALL_REJECTS:
                break
        if not accepted:
            reason = "stalled"
            break
        rel = (cost - cost_n) / max(cost, 1e-300)
        R, t, assoc, cost = Rn, tn, assoc_n, cost_n
        moved = True
        rejects = 0
        lam = max(lam / opt.lm_lambda_factor, 1e-12)
        track(R, t)
        if rel < opt.rel_cost_tol:
            reason = "converged"
            break
    report.iterations = it
    report.final_cost = cost
    report.termination_reason = reason
    if moved:
        poses = [Pose.from_matrix(Ri, ti) for Ri, ti in zip(R, t)]
    return poses, report
