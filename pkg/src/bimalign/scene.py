"""Building side of the pipeline: procedural semantic scenes, per-entity OBJ
ingestion/export and uniform surface sampling into labeled point clouds."""

from __future__ import annotations

import json
import logging
import warnings
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import DataIOError, InvalidSceneError, InvalidSpecError, ParseError

log = logging.getLogger(__name__)


class SemanticClass(IntEnum):
    WALL = 0
    COLUMN = 1
    FLOOR = 2
    CEILING = 3
    WINDOW = 4
    DOOR = 5
    CLUTTER = 6

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "SemanticClass":
        key = name.strip().upper()
        if key in ("OTHER", "CLUTTER/OTHER"):
            key = "CLUTTER"
        try:
            return cls[key]
        except KeyError:
            warnings.warn(f"unknown semantic class {name!r}, using clutter", stacklevel=2)
            return cls.CLUTTER


def triangle_areas(tris):
    tris = np.asarray(tris, dtype=float)
    return 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)


@dataclass(eq=False)
class SemanticMesh:
    triangles: np.ndarray  # (K, 3, 3)
    cls: SemanticClass
    entity_id: str

    def __post_init__(self):
        tris = np.asarray(self.triangles, dtype=float).reshape(-1, 3, 3)
        if not np.all(np.isfinite(tris)):
            raise InvalidSceneError(f"{self.entity_id}: non-finite vertex coordinates")
        if np.any(triangle_areas(tris) <= 1e-12):
            raise InvalidSceneError(f"{self.entity_id}: degenerate triangle")
        self.triangles = tris
        self.cls = SemanticClass(self.cls)

    @property
    def area(self):
        return float(triangle_areas(self.triangles).sum())


@dataclass(eq=False)
class BuildingScene:
    meshes: list
    floor_z: float
    ceiling_z: float

    def __post_init__(self):
        if not self.ceiling_z > self.floor_z:
            raise InvalidSceneError("ceiling must be above the floor")
        classes = {m.cls for m in self.meshes}
        if SemanticClass.FLOOR not in classes:
            raise InvalidSceneError("scene has no floor mesh")
        if SemanticClass.WALL not in classes:
            raise InvalidSceneError("scene has no wall mesh")

    def triangle_soup(self):
        """All triangles stacked, with a per-triangle class array."""
        tris = np.concatenate([m.triangles for m in self.meshes])
        labels = np.concatenate([np.full(len(m.triangles), int(m.cls), np.uint8) for m in self.meshes])
        return tris, labels

    def bounds(self):
        tris, _ = self.triangle_soup()
        pts = tris.reshape(-1, 3)
        return pts.min(axis=0), pts.max(axis=0)

    def summary(self):
        counts = {}
        for m in self.meshes:
            counts[m.cls.label] = counts.get(m.cls.label, 0) + 1
        lo, hi = self.bounds()
        return {
            "entities": len(self.meshes),
            "entities_per_class": dict(sorted(counts.items())),
            "triangles": int(sum(len(m.triangles) for m in self.meshes)),
            "floor_z": self.floor_z,
            "ceiling_z": self.ceiling_z,
            "bounds_min": [float(x) for x in lo],
            "bounds_max": [float(x) for x in hi],
        }


@dataclass(eq=False)
class SemanticPointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels differ in length")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite coordinates")

    def __len__(self):
        return len(self.points)

    def select(self, classes):
        keep = np.isin(self.labels, [int(c) for c in classes])
        return SemanticPointCloud(self.points[keep], self.labels[keep])

    @classmethod
    def concatenate(cls, clouds):
        clouds = list(clouds)
        if not clouds:
            return cls()
        return cls(np.concatenate([c.points for c in clouds]),
                   np.concatenate([c.labels for c in clouds]))


# ----------------------------------------------------------------------------
# procedural scenes
# ----------------------------------------------------------------------------

@dataclass
class Room:
    x: float
    y: float
    w: float
    h: float


@dataclass
class Column:
    x: float
    y: float
    size: float


@dataclass
class Door:
    """Full-height opening centered at ``(x, y)`` on a wall line."""
    x: float
    y: float
    width: float


@dataclass
class SceneSpec:
    rooms: list
    wall_thickness: float = 0.1
    floor_z: float = 0.0
    ceiling_z: float = 2.5
    columns: list = field(default_factory=list)
    doors: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d):
        known = {"rooms", "wall_thickness", "floor_z", "ceiling_z", "columns", "doors"}
        extra = set(d) - known
        if extra:
            raise InvalidSpecError(f"unknown scene spec key {sorted(extra)[0]!r}")
        try:
            return cls(
                rooms=[Room(**r) for r in d.get("rooms", [])],
                wall_thickness=float(d.get("wall_thickness", 0.1)),
                floor_z=float(d.get("floor_z", 0.0)),
                ceiling_z=float(d.get("ceiling_z", 2.5)),
                columns=[Column(**c) for c in d.get("columns", [])],
                doors=[Door(**o) for o in d.get("doors", [])],
            )
        except TypeError as exc:
            raise InvalidSpecError(f"malformed scene spec: {exc}") from None

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except OSError as exc:
            raise DataIOError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None

    def to_dict(self):
        return {
            "rooms": [vars(r) for r in self.rooms],
            "wall_thickness": self.wall_thickness,
            "floor_z": self.floor_z,
            "ceiling_z": self.ceiling_z,
            "columns": [vars(c) for c in self.columns],
            "doors": [vars(o) for o in self.doors],
        }


def _quad(a, b, c, d):
    return [[a, b, c], [a, c, d]]


def _vertical_box(x0, x1, y0, y1, z0, z1):
    """Four side faces of an axis-aligned box (no caps), 8 triangles."""
    p = lambda x, y, z: (x, y, z)  # noqa: E731
    tris = []
    tris += _quad(p(x0, y0, z0), p(x1, y0, z0), p(x1, y0, z1), p(x0, y0, z1))
    tris += _quad(p(x1, y0, z0), p(x1, y1, z0), p(x1, y1, z1), p(x1, y0, z1))
    tris += _quad(p(x1, y1, z0), p(x0, y1, z0), p(x0, y1, z1), p(x1, y1, z1))
    tris += _quad(p(x0, y1, z0), p(x0, y0, z0), p(x0, y0, z1), p(x0, y1, z1))
    return np.array(tris, dtype=float)


def _merge_intervals(intervals):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1] + 1e-9:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return out


def wall_lines(spec: SceneSpec):
    """Merged wall center lines after cutting door openings.

    Returns a list of ``(orientation, fixed, a, b, cut_a, cut_b)`` where
    orientation is ``"h"`` (constant y) or ``"v"`` (constant x) and the cut
    flags mark ends produced by an opening.
    """
    lines = {"h": {}, "v": {}}
    for r in spec.rooms:
        for y in (r.y, r.y + r.h):
            lines["h"].setdefault(round(y, 9), []).append((r.x, r.x + r.w))
        for x in (r.x, r.x + r.w):
            lines["v"].setdefault(round(x, 9), []).append((r.y, r.y + r.h))

    pieces = []
    tol = max(spec.wall_thickness, 1e-6)
    for orient in ("h", "v"):
        for fixed, ivs in sorted(lines[orient].items()):
            for a, b in _merge_intervals(ivs):
                cuts = []
                for d in spec.doors:
                    along, across = (d.x, d.y) if orient == "h" else (d.y, d.x)
                    if abs(across - fixed) <= tol and a < along < b:
                        cuts.append((along - d.width / 2, along + d.width / 2))
                segs = [(a, b, False, False)]
                for c0, c1 in sorted(cuts):
                    nxt = []
                    for s0, s1, f0, f1 in segs:
                        if c1 <= s0 or c0 >= s1:
                            nxt.append((s0, s1, f0, f1))
                            continue
                        if c0 > s0:
                            nxt.append((s0, c0, f0, True))
                        if c1 < s1:
                            nxt.append((c1, s1, True, f1))
                    segs = nxt
                pieces += [(orient, fixed, s0, s1, f0, f1) for s0, s1, f0, f1 in segs]
    return pieces


def generate_scene(spec) -> BuildingScene:
    """Build an axis-aligned semantic scene from a :class:`SceneSpec` (or the
    equivalent dict).

    Room rectangles give wall center lines; horizontal walls are extended and
    vertical walls trimmed by half the thickness so corners close without
    overlap.  Floor and ceiling are zero-thickness slabs covering the rooms.
    """
    if isinstance(spec, dict):
        spec = SceneSpec.from_dict(spec)
    if not spec.rooms:
        raise InvalidSpecError("scene spec has no rooms")
    for r in spec.rooms:
        if not (r.w > 0 and r.h > 0):
            raise InvalidSpecError(f"room at ({r.x}, {r.y}) has zero area")
    if not spec.ceiling_z > spec.floor_z:
        raise InvalidSpecError("ceiling_z must exceed floor_z")
    if not spec.wall_thickness > 0:
        raise InvalidSpecError("wall_thickness must be positive")

    t2 = spec.wall_thickness / 2
    z0, z1 = spec.floor_z, spec.ceiling_z
    meshes = []
    walls = []
    for orient, fixed, a, b, cut_a, cut_b in wall_lines(spec):
        if orient == "h":
            lo = a if cut_a else a - t2
            hi = b if cut_b else b + t2
            box = _vertical_box(lo, hi, fixed - t2, fixed + t2, z0, z1)
        else:
            lo = a if cut_a else a + t2
            hi = b if cut_b else b - t2
            if hi - lo <= 1e-9:
                continue
            box = _vertical_box(fixed - t2, fixed + t2, lo, hi, z0, z1)
        walls.append(box)
    for k, box in enumerate(walls):
        meshes.append(SemanticMesh(box, SemanticClass.WALL, f"wall_{k:02d}"))

    for k, c in enumerate(spec.columns):
        if not c.size > 0:
            raise InvalidSpecError("column size must be positive")
        h = c.size / 2
        box = _vertical_box(c.x - h, c.x + h, c.y - h, c.y + h, z0, z1)
        meshes.append(SemanticMesh(box, SemanticClass.COLUMN, f"column_{k:02d}"))

    floor, ceiling = [], []
    for r in spec.rooms:
        x0, x1, y0, y1 = r.x, r.x + r.w, r.y, r.y + r.h
        floor += _quad((x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0))
        ceiling += _quad((x0, y0, z1), (x0, y1, z1), (x1, y1, z1), (x1, y0, z1))
    meshes.append(SemanticMesh(np.array(floor), SemanticClass.FLOOR, "floor_00"))
    meshes.append(SemanticMesh(np.array(ceiling), SemanticClass.CEILING, "ceiling_00"))

    meshes.sort(key=lambda m: m.entity_id)
    return BuildingScene(meshes, float(z0), float(z1))


# ----------------------------------------------------------------------------
# OBJ boundary
# ----------------------------------------------------------------------------

def read_obj(path):
    """Parse ``v``/``f`` records of an ASCII OBJ into a triangle array.

    Polygons are fan-triangulated; ``f`` entries may use ``v/vt/vn`` syntax.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if any(i < 0 for i in idx):
                    raise ParseError(f"{path}:{lineno}: negative vertex indices are not supported")
                if any(i == 0 for i in idx) or len(idx) < 3:
                    raise ParseError(f"{path}:{lineno}: malformed face")
                faces.append([i - 1 for i in idx])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: malformed record") from None
    verts = np.array(verts, dtype=float).reshape(-1, 3)
    tris = []
    for f in faces:
        if max(f) >= len(verts):
            raise ParseError(f"{path}: face references missing vertex")
        for k in range(1, len(f) - 1):
            tris.append(verts[[f[0], f[k], f[k + 1]]])
    return np.array(tris, dtype=float).reshape(-1, 3, 3), verts


def write_obj(path, triangles):
    tris = np.asarray(triangles, dtype=float)
    lines = []
    for tri in tris:
        for v in tri:
            # 17 significant digits round-trip doubles exactly
            lines.append("v " + " ".join(f"{float(c):.17g}" for c in v))
    for k in range(len(tris)):
        lines.append(f"f {3 * k + 1} {3 * k + 2} {3 * k + 3}")
    Path(path).write_text("\n".join(lines) + "\n")


def export_obj_directory(scene: BuildingScene, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for m in scene.meshes:
        write_obj(path / f"{m.entity_id}.obj", m.triangles)


def ingest_obj_directory(path) -> BuildingScene:
    """One :class:`SemanticMesh` per ``<class>_<name>.obj`` file."""
    path = Path(path)
    if not path.is_dir():
        raise DataIOError(f"{path}: not a directory")
    meshes = []
    floor_z, ceil_z, all_z = [], [], []
    for f in sorted(path.glob("*.obj")):
        tris, verts = read_obj(f)
        if len(tris) == 0:
            warnings.warn(f"{f.name}: no faces, skipped", stacklevel=2)
            continue
        good = triangle_areas(tris) > 1e-12
        if not good.all():
            warnings.warn(f"{f.name}: dropped {int((~good).sum())} degenerate triangles", stacklevel=2)
            tris = tris[good]
            if len(tris) == 0:
                continue
        cls = SemanticClass.from_name(f.stem.split("_")[0])
        meshes.append(SemanticMesh(tris, cls, f.stem))
        if cls is SemanticClass.FLOOR:
            floor_z.append(verts[:, 2])
        elif cls is SemanticClass.CEILING:
            ceil_z.append(verts[:, 2])
        all_z.append(verts[:, 2])
    if not floor_z:
        raise InvalidSceneError(f"{path}: no floor mesh")
    fz = float(np.median(np.concatenate(floor_z)))
    cz = float(np.median(np.concatenate(ceil_z))) if ceil_z else float(np.concatenate(all_z).max())
    return BuildingScene(meshes, fz, cz)


def load_scene(path) -> BuildingScene:
    """Scene from a spec JSON file or an OBJ directory."""
    path = Path(path)
    if path.is_dir():
        return ingest_obj_directory(path)
    return generate_scene(SceneSpec.from_json(path))


# ----------------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------------

def entity_rng(seed, entity_id):
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(entity_id.encode())]))


def sample_triangles(tris, density, rng):
    """Area-uniform samples with stochastic rounding of ``area * density``.

    Returns ``(points, triangle_index)``.
    """
    areas = triangle_areas(tris)
    expected = areas * density
    counts = np.floor(expected).astype(np.int64)
    counts += rng.random(len(tris)) < (expected - counts)
    idx = np.repeat(np.arange(len(tris)), counts)
    r = rng.random((len(idx), 2))
    s = np.sqrt(r[:, 0])
    a, b, c = tris[idx, 0], tris[idx, 1], tris[idx, 2]
    pts = (1 - s)[:, None] * a + (s * (1 - r[:, 1]))[:, None] * b + (s * r[:, 1])[:, None] * c
    return pts, idx


def sample_uniform(scene: BuildingScene, density=400.0, seed=0) -> SemanticPointCloud:
    """Sample every mesh at ``density`` points/m², each entity with its own
    stream derived from ``(seed, entity_id)``."""
    if not density > 0:
        raise InvalidSpecError("density must be positive")
    pts, labels = [], []
    for m in scene.meshes:
        p, _ = sample_triangles(m.triangles, density, entity_rng(seed, m.entity_id))
        pts.append(p)
        labels.append(np.full(len(p), int(m.cls), np.uint8))
    return SemanticPointCloud(np.concatenate(pts), np.concatenate(labels))


# ----------------------------------------------------------------------------
# PLY
# ----------------------------------------------------------------------------

def write_ply(path, cloud: SemanticPointCloud):
    header = (
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar class\nend_header\n"
    )
    with open(path, "w") as f:
        f.write(header)
        if len(cloud):
            body = np.column_stack([cloud.points, cloud.labels.astype(float)])
            np.savetxt(f, body, fmt=["%.6f", "%.6f", "%.6f", "%d"])


def read_ply(path) -> SemanticPointCloud:
    try:
        with open(path) as f:
            if f.readline().strip() != "ply":
                raise ParseError(f"{path}: not a PLY file")
            n = None
            props = []
            for line in f:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "format" and parts[1] != "ascii":
                    raise ParseError(f"{path}: only ASCII PLY is supported")
                if parts[0] == "element" and parts[1] == "vertex":
                    n = int(parts[2])
                elif parts[0] == "property":
                    props.append(parts[-1])
                elif parts[0] == "end_header":
                    break
            if n is None or props[:3] != ["x", "y", "z"]:
                raise ParseError(f"{path}: expected vertex element with x, y, z")
            data = np.loadtxt(f, ndmin=2, max_rows=n) if n else np.zeros((0, len(props)))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    labels = data[:, props.index("class")] if "class" in props else np.full(len(data), SemanticClass.CLUTTER)
    return SemanticPointCloud(data[:, :3], labels.astype(np.uint8))
