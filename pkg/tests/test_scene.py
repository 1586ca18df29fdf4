import numpy as np
import pytest

from bimalign.errors import DataIOError, InvalidSceneError, InvalidSpecError, ParseError
from bimalign.scene import (BuildingScene, SemanticClass, SemanticMesh, SemanticPointCloud,
                            export_obj_directory, generate_scene, ingest_obj_directory, read_obj,
                            read_ply, sample_uniform, triangle_areas, write_obj, write_ply)

ROOM = {"rooms": [{"x": 0, "y": 0, "w": 4, "h": 3}], "wall_thickness": 0.1, "floor_z": 0, "ceiling_z": 2.5}


def _count(scene, cls):
    return sum(1 for m in scene.meshes if m.cls == cls)


def _square_scene(z=0.0):
    sq = np.array([[[0, 0, z], [1, 0, z], [1, 1, z]], [[0, 0, z], [1, 1, z], [0, 1, z]]], float)
    wall = np.array([[[0, 0, 0], [1, 0, 0], [1, 0, 1]]], float)
    return BuildingScene([SemanticMesh(sq, SemanticClass.FLOOR, "floor_00"),
                          SemanticMesh(wall, SemanticClass.WALL, "wall_00")], 0.0, 2.5)


def test_single_room_entities():
    sc = generate_scene(ROOM)
    assert _count(sc, SemanticClass.WALL) == 4
    assert _count(sc, SemanticClass.FLOOR) == 1
    assert _count(sc, SemanticClass.CEILING) == 1
    assert len(sc.meshes) == 6


def test_column_adds_one_entity_with_four_vertical_faces():
    spec = dict(ROOM, columns=[{"x": 2, "y": 1.5, "size": 0.3}])
    sc = generate_scene(spec)
    assert len(sc.meshes) == 7
    col = [m for m in sc.meshes if m.cls == SemanticClass.COLUMN]
    assert len(col) == 1
    tris = col[0].triangles
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    n /= np.linalg.norm(n, axis=1)[:, None]
    vertical = np.abs(n[:, 2]) < 1e-12
    dirs = {tuple(np.round(v, 9)) for v in n[vertical]}
    assert len(dirs) == 4


def test_empty_room_list_rejected():
    with pytest.raises(InvalidSpecError):
        generate_scene({"rooms": []})


def test_zero_area_room_rejected():
    with pytest.raises(InvalidSpecError):
        generate_scene({"rooms": [{"x": 0, "y": 0, "w": 0, "h": 3}]})


def test_generation_is_deterministic():
    a, b = generate_scene(ROOM), generate_scene(ROOM)
    for ma, mb in zip(a.meshes, b.meshes):
        assert ma.entity_id == mb.entity_id and np.array_equal(ma.triangles, mb.triangles)


def test_degenerate_triangle_rejected():
    with pytest.raises(InvalidSceneError):
        SemanticMesh(np.zeros((1, 3, 3)), SemanticClass.WALL, "wall_x")


# --- OBJ ingestion ----------------------------------------------------------

def _write_tri(path, z=0.0):
    write_obj(path, np.array([[[0, 0, z], [1, 0, z], [0, 1, z]]], float))


def _write_wall(path):
    write_obj(path, np.array([[[0, 0, 0], [1, 0, 0], [1, 0, 2.5]]], float))


def test_ingest_three_entities(tmp_path):
    _write_wall(tmp_path / "wall_01.obj")
    _write_tri(tmp_path / "floor_00.obj")
    _write_tri(tmp_path / "ceiling_00.obj", 2.5)
    sc = ingest_obj_directory(tmp_path)
    assert len(sc.meshes) == 3
    assert sc.floor_z == 0.0 and sc.ceiling_z == 2.5


def test_unknown_prefix_becomes_clutter(tmp_path):
    _write_wall(tmp_path / "wall_01.obj")
    for name in ("floor_00", "slab_00"):
        _write_tri(tmp_path / f"{name}.obj")
    with pytest.warns(UserWarning, match="slab"):
        sc = ingest_obj_directory(tmp_path)
    slab = [m for m in sc.meshes if m.entity_id == "slab_00"][0]
    assert slab.cls == SemanticClass.CLUTTER


def test_only_walls_is_invalid_scene(tmp_path):
    _write_wall(tmp_path / "wall_01.obj")
    with pytest.raises(InvalidSceneError):
        ingest_obj_directory(tmp_path)


def test_faceless_obj_skipped(tmp_path):
    _write_wall(tmp_path / "wall_01.obj")
    _write_tri(tmp_path / "floor_00.obj")
    (tmp_path / "door_00.obj").write_text("v 0 0 0\n")
    with pytest.warns(UserWarning, match="no faces"):
        sc = ingest_obj_directory(tmp_path)
    assert len(sc.meshes) == 2


def test_negative_indices_are_parse_error(tmp_path):
    p = tmp_path / "wall_00.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    with pytest.raises(ParseError):
        read_obj(p)


def test_quads_are_fan_triangulated(tmp_path):
    p = tmp_path / "floor_00.obj"
    p.write_text("v 0 0 0\nv 2 0 0\nv 2 1 0\nv 0 1 0\nf 1/1/1 2/2/1 3/3/1 4/4/1\n")
    tris, _ = read_obj(p)
    assert tris.shape == (2, 3, 3)
    assert triangle_areas(tris).sum() == pytest.approx(2.0)


def test_unreadable_file_names_it(tmp_path):
    p = tmp_path / "wall_00.obj"
    p.write_bytes(b"\xff\xfe\x00bad")
    with pytest.raises(DataIOError, match="wall_00.obj"):
        read_obj(p)


# --- sampling ---------------------------------------------------------------

def _shoelace_area(poly):
    x, y = np.asarray(poly, float).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# Oracle: expected count is area * density, the area from the shoelace formula
# on the outline rather than from triangle cross products.  Both triangles of
# the unit square have area 0.5 and integral expectation 50, so stochastic
# rounding never fires and the count is exact.
UNIT_SQUARE_COUNT = 100
FLOOR_4X3_COUNT = 1200


def test_oracle_counts_frozen():
    assert _shoelace_area([(0, 0), (1, 0), (1, 1), (0, 1)]) * 100 == UNIT_SQUARE_COUNT
    assert _shoelace_area([(0, 0), (4, 0), (4, 3), (0, 3)]) * 100 == FLOOR_4X3_COUNT


def test_unit_square_density_100():
    cloud = sample_uniform(_square_scene(), 100, seed=3).select([SemanticClass.FLOOR])
    assert abs(len(cloud) - UNIT_SQUARE_COUNT) <= 10
    p = cloud.points
    assert np.all((p[:, :2] >= 0) & (p[:, :2] <= 1)) and np.all(p[:, 2] == 0)


def test_floor_4x3_density_100():
    cloud = sample_uniform(generate_scene(ROOM), 100, seed=0)
    n = int(np.sum(cloud.labels == SemanticClass.FLOOR))
    assert abs(n - FLOOR_4X3_COUNT) <= 3 * np.sqrt(FLOOR_4X3_COUNT)


def test_same_seed_bit_identical():
    sc = generate_scene(ROOM)
    a, b = sample_uniform(sc, 200, 7), sample_uniform(sc, 200, 7)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.labels, b.labels)


def test_density_must_be_positive():
    with pytest.raises(InvalidSpecError):
        sample_uniform(generate_scene(ROOM), 0)


def test_points_lie_on_their_triangles():
    from bimalign.scene import entity_rng, sample_triangles
    sc = generate_scene(dict(ROOM, columns=[{"x": 2, "y": 1.5, "size": 0.3}]))
    for m in sc.meshes:
        pts, idx = sample_triangles(m.triangles, 300, entity_rng(0, m.entity_id))
        T = m.triangles[idx]
        e1, e2 = T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]
        n = np.cross(e1, e2)
        n /= np.linalg.norm(n, axis=1)[:, None]
        d = np.einsum("ij,ij->i", pts - T[:, 0], n)
        assert np.max(np.abs(d)) < 1e-9
        # barycentric coordinates from the 2x2 Gram system of the edges
        q = pts - T[:, 0]
        g11, g12, g22 = (np.einsum("ij,ij->i", x, y) for x, y in ((e1, e1), (e1, e2), (e2, e2)))
        b1, b2 = np.einsum("ij,ij->i", q, e1), np.einsum("ij,ij->i", q, e2)
        det = g11 * g22 - g12 * g12
        s = (g22 * b1 - g12 * b2) / det
        t = (g11 * b2 - g12 * b1) / det
        assert np.all(s >= -1e-9) and np.all(t >= -1e-9) and np.all(s + t <= 1 + 1e-9)


def test_class_share_matches_area_share():
    spec = {"rooms": [{"x": 0, "y": 0, "w": 5, "h": 4}], "ceiling_z": 2.5,
            "columns": [{"x": 1.5, "y": 1.5, "size": 0.6}, {"x": 3.5, "y": 2.5, "size": 0.6}]}
    sc = generate_scene(spec)
    cloud = sample_uniform(sc, 400, 0)
    area = {}
    for m in sc.meshes:
        area[m.cls] = area.get(m.cls, 0.0) + m.area
    total_a = sum(area.values())
    for cls, a in area.items():
        if a < 10:
            continue
        share = np.mean(cloud.labels == cls)
        assert abs(share - a / total_a) <= 0.05 * a / total_a


def test_obj_round_trip_samples_bit_exact(tmp_path):
    sc = generate_scene(dict(ROOM, columns=[{"x": 2, "y": 1.5, "size": 0.3}]))
    export_obj_directory(sc, tmp_path)
    sc2 = ingest_obj_directory(tmp_path)
    a, b = sample_uniform(sc, 150, 4), sample_uniform(sc2, 150, 4)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.labels, b.labels)


def test_ply_round_trip(tmp_path):
    cloud = SemanticPointCloud(np.array([[0.5, 1.25, -2.0], [3, 4, 5]]), np.array([2, 0]))
    write_ply(tmp_path / "c.ply", cloud)
    back = read_ply(tmp_path / "c.ply")
    assert np.allclose(back.points, cloud.points) and np.array_equal(back.labels, cloud.labels)
