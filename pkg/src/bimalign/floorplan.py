"""Vectorized semantic floor plan from a labeled point cloud.

The slab of points around floor level is rasterized per class, every
connected blob is outlined by Moore-neighbor tracing (outer boundary and the
boundary of each enclosed hole), outlines are simplified with Douglas-Peucker
and nearly collinear consecutive edges are merged into wall/column segments.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataIOError, EmptyPlanError, InvalidArgumentError, ParseError
from .geometry import Plane, Segment2D
from .scene import SemanticClass, SemanticPointCloud

log = logging.getLogger(__name__)

DEFAULT_HALF_BAND = 0.20
DEFAULT_RESOLUTION = 0.02
DEFAULT_MIN_HITS = 2
DEFAULT_MIN_SEGMENT_LENGTH = 0.05


@dataclass(eq=False)
class OccupancyRaster:
    resolution: float
    origin: np.ndarray
    grid: np.ndarray  # (rows along y, cols along x), bool
    cls: int = int(SemanticClass.WALL)

    def cell_centers(self, rows, cols):
        rows = np.asarray(rows, dtype=float)
        cols = np.asarray(cols, dtype=float)
        return np.stack([self.origin[0] + (cols + 0.5) * self.resolution,
                         self.origin[1] + (rows + 0.5) * self.resolution], axis=-1)

    def occupied_centers(self):
        r, c = np.nonzero(self.grid)
        return self.cell_centers(r, c)


@dataclass(eq=False)
class VectorFloorPlan:
    segments: list = field(default_factory=list)
    floor: Plane = field(default_factory=lambda: Plane.horizontal(0.0))
    ceiling: Plane = field(default_factory=lambda: Plane.horizontal(2.5))

    def segments_of(self, cls):
        return [s for s in self.segments if s.cls == int(cls)]

    def segment_arrays(self, cls):
        """``(starts (S,2), ends (S,2))`` of one class."""
        segs = self.segments_of(cls)
        if not segs:
            return np.zeros((0, 2)), np.zeros((0, 2))
        return np.array([s.start for s in segs]), np.array([s.end for s in segs])

    def to_dict(self):
        r6 = lambda v: round(float(v), 6)  # noqa: E731
        return {
            "segments": [{"class": SemanticClass(s.cls).label,
                          "x1": r6(s.start[0]), "y1": r6(s.start[1]),
                          "x2": r6(s.end[0]), "y2": r6(s.end[1])} for s in self.segments],
            "floor_z": r6(self.floor.offset),
            "ceiling_z": r6(self.ceiling.offset),
        }

    @classmethod
    def from_dict(cls, d):
        segs = [Segment2D((s["x1"], s["y1"]), (s["x2"], s["y2"]),
                          SemanticClass.from_name(s["class"])) for s in d["segments"]]
        return cls(segs, Plane.horizontal(d["floor_z"]), Plane.horizontal(d["ceiling_z"]))


def write_plan(path, plan: VectorFloorPlan):
    Path(path).write_text(json.dumps(plan.to_dict(), indent=1) + "\n")


def read_plan(path) -> VectorFloorPlan:
    try:
        return VectorFloorPlan.from_dict(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: malformed floor plan ({exc})") from None


def write_pgm(path, raster: OccupancyRaster):
    """ASCII PGM (P2) with north (max y) on top."""
    g = np.flipud(raster.grid).astype(int) * 255
    rows = [" ".join(map(str, r)) for r in g]
    Path(path).write_text(f"P2\n{g.shape[1]} {g.shape[0]}\n255\n" + "\n".join(rows) + "\n")


# ----------------------------------------------------------------------------
# slab -> raster
# ----------------------------------------------------------------------------

def slab_filter(cloud: SemanticPointCloud, floor_z, half_band=DEFAULT_HALF_BAND,
                cls=SemanticClass.WALL):
    if not half_band > 0:
        raise InvalidArgumentError("half_band must be positive")
    keep = (cloud.labels == int(cls)) & (np.abs(cloud.points[:, 2] - floor_z) <= half_band)
    return cloud.points[keep, :2].copy()


def rasterize(points, resolution=DEFAULT_RESOLUTION, min_hits=DEFAULT_MIN_HITS,
              cls=SemanticClass.WALL) -> OccupancyRaster:
    if not resolution > 0:
        raise InvalidArgumentError("resolution must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return OccupancyRaster(resolution, np.zeros(2), np.zeros((0, 0), bool), int(cls))
    origin = np.floor(pts.min(axis=0) / resolution) * resolution
    ij = np.floor((pts - origin) / resolution).astype(np.int64)
    ij = np.maximum(ij, 0)
    ncols, nrows = ij.max(axis=0) + 1
    counts = np.zeros((nrows, ncols), np.int64)
    np.add.at(counts, (ij[:, 1], ij[:, 0]), 1)
    return OccupancyRaster(resolution, origin, counts >= min_hits, int(cls))


# ----------------------------------------------------------------------------
# contour tracing
# ----------------------------------------------------------------------------

# clockwise with rows growing downwards: N, NE, E, SE, S, SW, W, NW
_DIRS = np.array([(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)])
_DIR_INDEX = {tuple(d): k for k, d in enumerate(_DIRS)}


def moore_trace(grid, start, backtrack, max_steps=None):
    """Trace the boundary of the foreground blob containing ``start``.

    ``backtrack`` is a background 8-neighbor of ``start``; the traced
    boundary is the one facing it.  Tracing stops when the first move
    (start -> second cell) is about to repeat.  The grid must carry a
    one-cell background border.
    """
    start = tuple(start)
    p, b = start, tuple(backtrack)
    contour = [p]
    second = None
    max_steps = max_steps or 8 * grid.size + 8
    for _ in range(max_steps):
        k0 = _DIR_INDEX[(b[0] - p[0], b[1] - p[1])]
        nxt = None
        prev = b
        for step in range(1, 9):
            d = _DIRS[(k0 + step) % 8]
            q = (p[0] + d[0], p[1] + d[1])
            if grid[q]:
                nxt = q
                break
            prev = q
        if nxt is None:  # isolated cell
            return contour
        if second is None:
            second = nxt
        elif p == start and nxt == second:
            return contour[:-1]
        p, b = nxt, prev
        contour.append(p)
    raise RuntimeError("contour tracing did not terminate")


def trace_boundaries(grid):
    """All outer and hole boundaries of the 8-connected foreground of
    ``grid``, as lists of (row, col) cells in unpadded coordinates."""
    padded = np.pad(np.asarray(grid, bool), 1)
    if not padded.any():
        return []
    contours = []
    labels, n = ndimage.label(padded, structure=np.ones((3, 3), int))
    firsts = ndimage.minimum_position(np.arange(padded.size).reshape(padded.shape),
                                      labels, range(1, n + 1))
    for r, c in firsts:
        contours.append(moore_trace(padded, (r, c), (r, c - 1)))

    bg, nb = ndimage.label(~padded)  # 4-connected background
    outside = bg[0, 0]
    hole_ids = [h for h in range(1, nb + 1) if h != outside]
    if hole_ids:
        hfirst = ndimage.minimum_position(np.arange(padded.size).reshape(padded.shape),
                                          bg, hole_ids)
        for r, c in hfirst:
            contours.append(moore_trace(padded, (r - 1, c), (r, c)))
    return [[(r - 1, c - 1) for r, c in cont] for cont in contours]


# ----------------------------------------------------------------------------
# simplification
# ----------------------------------------------------------------------------

def _seg_dist(P, a, b):
    d = b - a
    L2 = d @ d
    if L2 == 0:
        return np.linalg.norm(P - a, axis=1)
    s = np.clip((P - a) @ d / L2, 0, 1)
    return np.linalg.norm(P - (a + s[:, None] * d), axis=1)


def douglas_peucker(P, eps):
    """Indices of the retained vertices of the open polyline ``P``."""
    P = np.asarray(P, dtype=float)
    n = len(P)
    if n <= 2:
        return list(range(n))
    keep = np.zeros(n, bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _seg_dist(P[i + 1:j], P[i], P[j])
        k = int(np.argmax(d))
        if d[k] > eps:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return list(np.flatnonzero(keep))


def simplify_closed(P, eps):
    """Douglas-Peucker on a closed contour, split at the vertex farthest
    from the first one."""
    P = np.asarray(P, dtype=float)
    if len(P) < 2:
        return P
    f = int(np.argmax(np.linalg.norm(P - P[0], axis=1)))
    if f == 0:
        return P[:1]
    first = P[: f + 1]
    second = np.concatenate([P[f:], P[:1]])
    k1 = douglas_peucker(first, eps)
    k2 = douglas_peucker(second, eps)
    return np.concatenate([first[k1], second[k2][1:-1]])


def merge_collinear(edges, max_angle_deg=2.0, max_gap=0.06, closed=True):
    """Merge consecutive edges whose directions differ by less than
    ``max_angle_deg`` and whose joint gap is below ``max_gap``."""
    edges = [(np.asarray(a, float), np.asarray(b, float)) for a, b in edges]
    cos_tol = math.cos(math.radians(max_angle_deg))

    def mergeable(e, f):
        da, db = e[1] - e[0], f[1] - f[0]
        na, nb = np.linalg.norm(da), np.linalg.norm(db)
        if na == 0 or nb == 0:
            return True
        return (da @ db) / (na * nb) >= cos_tol and np.linalg.norm(f[0] - e[1]) < max_gap

    changed = True
    while changed and len(edges) > 1:
        changed = False
        out = [edges[0]]
        for e in edges[1:]:
            if mergeable(out[-1], e):
                out[-1] = (out[-1][0], e[1])
                changed = True
            else:
                out.append(e)
        if closed and len(out) > 1 and mergeable(out[-1], out[0]):
            out[0] = (out[-1][0], out[0][1])
            out.pop()
            changed = True
        edges = out
    return edges


def vectorize(raster: OccupancyRaster, min_segment_length=DEFAULT_MIN_SEGMENT_LENGTH,
              max_angle_deg=2.0):
    """Line segments outlining every occupied blob of ``raster``."""
    res = raster.resolution
    segments = []
    for cont in trace_boundaries(raster.grid):
        if len(cont) < 2:
            continue
        cells = np.array(cont)
        P = raster.cell_centers(cells[:, 0], cells[:, 1])
        V = simplify_closed(P, 2 * res)
        if len(V) < 2:
            continue
        edges = [(V[k], V[(k + 1) % len(V)]) for k in range(len(V))]
        if len(V) == 2:
            edges = edges[:1]
        edges = merge_collinear(edges, max_angle_deg, 3 * res, closed=len(V) > 2)
        for a, b in edges:
            if np.linalg.norm(b - a) >= min_segment_length:
                segments.append(Segment2D(a, b, raster.cls))
    return segments


def build_floorplan(cloud: SemanticPointCloud, floor_z, ceiling_z,
                    half_band=DEFAULT_HALF_BAND, resolution=DEFAULT_RESOLUTION,
                    min_hits=DEFAULT_MIN_HITS, min_segment_length=DEFAULT_MIN_SEGMENT_LENGTH,
                    rasters=None) -> VectorFloorPlan:
    """Wall/column segments of the floor-level slab plus floor and ceiling
    planes.  When ``rasters`` is a dict it receives the per-class rasters."""
    floor_pts = cloud.points[cloud.labels == SemanticClass.FLOOR]
    if len(floor_pts) == 0:
        raise EmptyPlanError("cloud has no floor points")
    segments = []
    for cls in (SemanticClass.WALL, SemanticClass.COLUMN):
        pts = slab_filter(cloud, floor_z, half_band, cls)
        if cls is SemanticClass.WALL and len(pts) == 0:
            raise EmptyPlanError("no wall points within the floor slab")
        if len(pts) == 0:
            continue
        raster = rasterize(pts, resolution, min_hits, cls)
        if rasters is not None:
            rasters[cls.label] = raster
        segments += vectorize(raster, min_segment_length)
    if not any(s.cls == SemanticClass.WALL for s in segments):
        raise EmptyPlanError("no wall segments could be extracted")
    ceil_pts = cloud.points[cloud.labels == SemanticClass.CEILING]
    cz = float(np.median(ceil_pts[:, 2])) if len(ceil_pts) else float(ceiling_z)
    return VectorFloorPlan(segments, Plane.horizontal(float(np.median(floor_pts[:, 2]))),
                           Plane.horizontal(cz))


def plan_from_scene(scene, half_band=DEFAULT_HALF_BAND) -> VectorFloorPlan:
    """Exact plan read off the mesh geometry: every vertical wall/column
    face crossing the floor slab contributes its horizontal footprint.

    Serves as the noise-free reference against which extracted plans and
    the optimizer can be checked.
    """
    segments = []
    seen = set()
    z0, z1 = scene.floor_z - half_band, scene.floor_z + half_band
    for mesh in scene.meshes:
        if mesh.cls not in (SemanticClass.WALL, SemanticClass.COLUMN):
            continue
        for tri in mesh.triangles:
            n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            if abs(n[2]) > 1e-9 * np.linalg.norm(n):
                continue
            if tri[:, 2].max() < z0 or tri[:, 2].min() > z1:
                continue
            xy = tri[:, :2]
            # footprint endpoints: extremes along the face direction
            axis = n[:2][::-1] * [1, -1]
            s = xy @ axis
            a, b = xy[np.argmin(s)], xy[np.argmax(s)]
            if np.linalg.norm(b - a) <= 1e-6:
                continue
            key = (int(mesh.cls),) + tuple(np.round(np.concatenate([a, b]), 9))
            if key in seen:
                continue
            seen.add(key)
            segments.append(Segment2D(a, b, mesh.cls))
    if not any(s.cls == SemanticClass.WALL for s in segments):
        raise EmptyPlanError("scene has no wall faces crossing the floor slab")
    return VectorFloorPlan(segments, Plane.horizontal(scene.floor_z), Plane.horizontal(scene.ceiling_z))
