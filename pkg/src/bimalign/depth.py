"""Dense depth from sparse labeled samples, label-guided smoothing, and
lifting of labeled pixels back into world points."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import DataIOError, DegenerateInputError, InvalidArgumentError, ParseError
from .geometry import CameraModel, Pose
from .scene import SemanticClass, SemanticPointCloud

UNLABELED = -1


@dataclass(eq=False)
class DepthMap:
    """Per-pixel depth (NaN = invalid) and class (-1 = unlabeled), both (H, W)."""

    depth: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int16)
        if self.depth.ndim != 2 or self.depth.shape != self.labels.shape:
            raise InvalidArgumentError("depth and label rasters must be 2-D and equal in shape")
        valid = ~np.isnan(self.depth)
        if np.any(~(self.depth[valid] > 0)) or np.any(~np.isfinite(self.depth[valid])):
            raise InvalidArgumentError("valid depths must be finite and positive")
        self.depth.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]

    @property
    def valid(self):
        return ~np.isnan(self.depth)

    def sample(self, u, v, edge_tol=0.05, planar_tol=1e-3):
        """Depth at sub-pixel positions.

        Bilinear interpolation of inverse depth over the surrounding pixels
        (exact on planar surfaces under a pinhole camera).  Lookups whose
        contributing pixels include an invalid one or mix classes straddle an
        edge and return NaN, as do lookups whose pixels differ in depth by
        more than ``edge_tol`` (relative).  So do lookups on a crease between two surfaces of one
        class, where inverse depth is not affine across the cell: either
        the patch twist ``a00 - a01 - a10 + a11`` is nonzero, or along an
        axis the step across the cell disagrees with the steps on both
        sides of it (relative tolerance ``planar_tol``).
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        H, W = self.depth.shape
        inb = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
        uc = np.clip(u, 0, W - 1)
        vc = np.clip(v, 0, H - 1)
        u0 = np.minimum(np.floor(uc).astype(np.int64), W - 1)
        v0 = np.minimum(np.floor(vc).astype(np.int64), H - 1)
        u1 = np.minimum(u0 + 1, W - 1)
        v1 = np.minimum(v0 + 1, H - 1)
        fu = uc - u0
        fv = vc - v0
        corners = [(v0, u0, (1 - fu) * (1 - fv)), (v0, u1, fu * (1 - fv)),
                   (v1, u0, (1 - fu) * fv), (v1, u1, fu * fv)]
        heaviest = np.argmax(np.stack([w for _, _, w in corners]), axis=0)
        ref = np.choose(heaviest, [self.labels[vv, uu] for vv, uu, _ in corners])
        acc = np.zeros(np.shape(u))
        lo = np.full(np.shape(u), np.inf)
        hi = np.full(np.shape(u), -np.inf)
        ok = inb.copy()
        for vv, uu, w in corners:
            d = self.depth[vv, uu]
            used = w > 0
            ok &= ~used | (~np.isnan(d) & (self.labels[vv, uu] == ref))
            lo = np.where(used, np.fmin(lo, d), lo)
            hi = np.where(used, np.fmax(hi, d), hi)
            acc = acc + np.where(used, w / np.where(np.isnan(d), 1.0, d), 0.0)
        ok &= hi <= lo * (1.0 + edge_tol)
        ok &= ~self._creased(u0, v0, u1, v1, fu > 0, fv > 0, planar_tol)
        out = np.where(ok, 1.0 / np.where(ok, acc, 1.0), np.nan)
        return out if out.ndim else float(out)

    def _creased(self, u0, v0, u1, v1, span_u, span_v, tol):
        a = 1.0 / self.depth
        H, W = a.shape

        def bent(line0, line1, lo, hi, n):
            # step across the cell versus the steps just outside it
            mid = line1(hi) - line0(lo)
            left = np.where(lo > 0, line0(lo) - line0(np.maximum(lo - 1, 0)), np.nan)
            right = np.where(hi < n - 1, line1(np.minimum(hi + 1, n - 1)) - line1(hi), np.nan)
            scale = tol * np.abs(line0(lo))
            off_l = ~(np.abs(mid - left) <= scale)
            off_r = ~(np.abs(mid - right) <= scale)
            return off_l & off_r & ~(np.isnan(left) & np.isnan(right))

        out = np.zeros(np.shape(u0), bool)
        with np.errstate(invalid="ignore"):
            for vv, used in ((v0, span_u), (v1, span_u & span_v)):
                out |= used & bent(lambda k: a[vv, k], lambda k: a[vv, k], u0, u1, W)
            for uu, used in ((u0, span_v), (u1, span_v & span_u)):
                out |= used & bent(lambda k: a[k, uu], lambda k: a[k, uu], v0, v1, H)
            twist = np.abs(a[v0, u0] - a[v0, u1] - a[v1, u0] + a[v1, u1])
            out |= span_u & span_v & (twist > tol * np.abs(a[v0, u0]))
        return out

    def label_at(self, u, v):
        u = np.clip(np.round(np.asarray(u, dtype=float)).astype(np.int64), 0, self.width - 1)
        v = np.clip(np.round(np.asarray(v, dtype=float)).astype(np.int64), 0, self.height - 1)
        return self.labels[v, u]


def _sample_values(frame, interp_space):
    if interp_space == "depth":
        return frame.depth
    if interp_space == "inverse_depth":
        return 1.0 / frame.depth
    raise InvalidArgumentError(f"unknown interp_space {interp_space!r}")


def densify_linear(frame, cam: CameraModel, interp_space="depth") -> DepthMap:
    """Piecewise-linear depth over the Delaunay triangulation of the sample
    pixels.  Pixels outside the convex hull stay invalid; every pixel takes
    the class of its nearest sample."""
    if len(frame) < 3:
        raise DegenerateInputError(f"frame {frame.frame_id}: fewer than 3 samples")
    pts = np.column_stack([frame.u, frame.v]).astype(float)
    try:
        tri = Delaunay(pts)
    except QhullError:
        raise DegenerateInputError(f"frame {frame.frame_id}: samples are collinear") from None
    vals = _sample_values(frame, interp_space)

    vv, uu = np.mgrid[0:cam.height, 0:cam.width]
    q = np.column_stack([uu.ravel(), vv.ravel()]).astype(float)
    simplex = tri.find_simplex(q)
    inside = simplex >= 0
    T = tri.transform[simplex[inside]]
    b2 = np.einsum("nij,nj->ni", T[:, :2], q[inside] - T[:, 2])
    bary = np.column_stack([b2, 1.0 - b2.sum(axis=1)])
    corner = tri.simplices[simplex[inside]]
    interp = np.einsum("ni,ni->n", bary, vals[corner])
    # exact hits on sample pixels reproduce the data
    out = np.full(len(q), np.nan)
    out[inside] = interp
    key = frame.v * cam.width + frame.u
    out[key] = vals
    if interp_space == "inverse_depth":
        out = 1.0 / out
    _, nearest = cKDTree(pts).query(q)
    labels = frame.labels[nearest].astype(np.int16)
    return DepthMap(out.reshape(cam.height, cam.width), labels.reshape(cam.height, cam.width))


def smooth_planar_regions(dm: DepthMap, classes=(SemanticClass.FLOOR, SemanticClass.CEILING),
                          radius=5) -> DepthMap:
    """Box-blur depth inside the given classes, averaging only valid pixels
    of the same class within the ``(2r+1)^2`` window."""
    if radius < 1:
        raise InvalidArgumentError("radius must be >= 1")
    depth = dm.depth.copy()
    size = 2 * radius + 1
    valid = dm.valid
    for c in classes:
        mask = valid & (dm.labels == int(c))
        if not mask.any():
            continue
        vals = np.where(mask, dm.depth, 0.0)
        s = ndimage.uniform_filter(vals, size, mode="constant") * size * size
        n = ndimage.uniform_filter(mask.astype(float), size, mode="constant") * size * size
        n = np.round(n)
        depth[mask] = s[mask] / n[mask]
    return DepthMap(depth, dm.labels)


def lift_labeled_points(dm: DepthMap, cam: CameraModel, pose: Pose, classes=None, stride=4,
                        frame="world") -> SemanticPointCloud:
    """Back-project every ``stride``-th valid pixel whose class is in
    ``classes`` (all labeled classes when None).  ``frame='camera'`` skips
    the world transform."""
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")
    sub = np.s_[::stride, ::stride]
    vv, uu = np.mgrid[0:dm.height, 0:dm.width]
    uu, vv = uu[sub].ravel(), vv[sub].ravel()
    d = dm.depth[sub].ravel()
    lab = dm.labels[sub].ravel()
    keep = ~np.isnan(d) & (lab >= 0)
    if classes is not None:
        keep &= np.isin(lab, [int(c) for c in classes])
    X = cam.backproject_points(uu[keep], vv[keep], d[keep])
    if frame == "world":
        X = pose.apply(X)
    return SemanticPointCloud(X, lab[keep].astype(np.uint8))


def densify_frames(frames, cam, interp_space="depth", smooth_radius=5, threads=1):
    from concurrent.futures import ThreadPoolExecutor

    def one(f):
        dm = densify_linear(f, cam, interp_space)
        return smooth_planar_regions(dm, radius=smooth_radius) if smooth_radius else dm

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, frames))
    return [one(f) for f in frames]


# ----------------------------------------------------------------------------
# LiDAR scans into the image
# ----------------------------------------------------------------------------

def project_scan(points_lidar, labels, cam: CameraModel):
    """Project a LiDAR scan into the camera through ``cam.extrinsic``.

    Keeps the nearest point per pixel.  Returns ``(u, v, depth, labels)``
    suitable for building a frame.
    """
    X = cam.extrinsic.apply(np.asarray(points_lidar, dtype=float).reshape(-1, 3))
    uv, vis = cam.project_points(X)
    u = np.floor(uv[vis, 0]).astype(np.int64)
    v = np.floor(uv[vis, 1]).astype(np.int64)
    z = X[vis, 2]
    lab = np.asarray(labels)[vis]
    order = np.lexsort((z, v * cam.width + u))
    key = (v * cam.width + u)[order]
    first = np.concatenate([[True], key[1:] != key[:-1]])
    sel = order[first]
    return u[sel], v[sel], z[sel], lab[sel]


# ----------------------------------------------------------------------------
# binary raster I/O
# ----------------------------------------------------------------------------

def write_depth_bin(path, depth):
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(depth.tobytes(order="C"))


def read_depth_bin(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    if len(data) < 8:
        raise ParseError(f"{path}: truncated header")
    w, h = struct.unpack("<II", data[:8])
    if len(data) != 8 + 4 * w * h:
        raise ParseError(f"{path}: expected {w}x{h} float32 values")
    return np.frombuffer(data[8:], dtype="<f4").reshape(h, w).astype(float)


def ingest_depth(path, frame, cam: CameraModel) -> DepthMap:
    """Externally densified depth for ``frame``; classes still come from
    the frame's nearest labeled sample."""
    depth = read_depth_bin(path)
    if depth.shape != (cam.height, cam.width):
        raise ParseError(f"{path}: raster {depth.shape[::-1]} does not match the camera")
    depth = np.where(depth > 0, depth, np.nan)
    pts = np.column_stack([frame.u, frame.v]).astype(float)
    vv, uu = np.mgrid[0:cam.height, 0:cam.width]
    _, nearest = cKDTree(pts).query(np.column_stack([uu.ravel(), vv.ravel()]))
    return DepthMap(depth, frame.labels[nearest].reshape(depth.shape).astype(np.int16))
