import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from bimalign.errors import AssociationError, InvalidArgumentError, MetricUndefinedError
from bimalign.geometry import Pose, camera_pose
from bimalign.metrics import MetricsReport, ate, evaluate, mme, mpv, nnd
from bimalign.scene import SemanticPointCloud
from bimalign.simulate import Trajectory, read_tum, write_tum


def _traj(n=20, yaw=0.0, pitch=0.0, offset=(0, 0, 0), dt=0.1):
    poses = [camera_pose(np.array([0.2 * k, 0.1 * k, 1.2]) + offset, 3.0 * k + yaw, pitch) for k in range(n)]
    return Trajectory(np.arange(n) * dt, poses)


# --- ATE --------------------------------------------------------------------

def test_ate_identical_is_zero():
    r = ate(_traj(), _traj())
    assert (r.ate_pos, r.ate_rot, r.rmse_yaw, r.rmse_pitch, r.rmse_roll) == pytest.approx((0, 0, 0, 0, 0), abs=1e-6)
    assert r.matched == 20 and r.unmatched == 0


def test_ate_constant_offset():
    r = ate(_traj(offset=(1, 0, 0)), _traj())
    assert r.ate_pos == pytest.approx(1.0, abs=1e-12)
    assert r.ate_rot == pytest.approx(0.0, abs=1e-6)


def test_ate_yaw_offset():
    r = ate(_traj(yaw=10.0), _traj())
    assert r.ate_rot == pytest.approx(10.0, abs=1e-9)
    assert r.rmse_yaw == pytest.approx(10.0, abs=1e-9)
    assert r.rmse_pitch == pytest.approx(0.0, abs=1e-9) and r.rmse_roll == pytest.approx(0.0, abs=1e-9)


def test_ate_pitch_offset_lands_on_pitch_axis():
    r = ate(_traj(pitch=4.0), _traj())
    assert r.rmse_pitch == pytest.approx(4.0, abs=1e-9)
    assert r.rmse_yaw == pytest.approx(0.0, abs=1e-9)


def test_ate_mixed_errors_against_direct_rmse():
    rng = np.random.default_rng(4)
    gt = _traj(30)
    est_poses, pos, rot = [], [], []
    for p in gt.poses:
        d = rng.normal(0, 0.1, 3)
        w = rng.normal(0, 0.05, 3)
        R = Rotation.from_rotvec(w).as_matrix() @ p.matrix
        est_poses.append(Pose.from_matrix(R, p.translation + d))
        pos.append(np.linalg.norm(d))
        rot.append(np.degrees(np.linalg.norm(w)))
    r = ate(Trajectory(gt.timestamps, est_poses), gt)
    assert r.ate_pos == pytest.approx(math.sqrt(np.mean(np.square(pos))), rel=1e-12)
    assert r.ate_rot == pytest.approx(math.sqrt(np.mean(np.square(rot))), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(15))))
def test_ate_ignores_line_order(tmp_path_factory, perm):
    rng = np.random.default_rng(0)
    gt = _traj(15)
    est = Trajectory(gt.timestamps, [Pose(p.rotation, p.translation + rng.normal(0, 0.1, 3)) for p in gt.poses])
    path = tmp_path_factory.mktemp("tum") / "est.txt"
    write_tum(path, est)
    header, *lines = path.read_text().splitlines()
    ordered = read_tum(path)
    path.write_text("\n".join([header] + [lines[k] for k in perm]) + "\n")
    a, b = ate(ordered, gt), ate(read_tum(path), gt)
    assert (a.ate_pos, a.ate_rot) == (b.ate_pos, b.ate_rot)


def test_ate_drops_unmatched_and_reports():
    gt = _traj(10)
    est = Trajectory(np.concatenate([gt.timestamps, [5.0, 6.0]]), gt.poses + gt.poses[:2])
    r = ate(est, gt)
    assert r.matched == 10 and r.unmatched == 2


def test_ate_tolerates_small_timestamp_jitter():
    gt = _traj(10)
    est = Trajectory(gt.timestamps + 0.04, gt.poses)
    assert ate(est, gt).matched == 10
    with pytest.raises(AssociationError):
        ate(Trajectory(gt.timestamps + 100.0, gt.poses), gt)


# --- independent neighbourhood oracles --------------------------------------

def _oracle_neighbourhoods(query, pool, radius):
    for q in query:
        out = []
        for k, p in enumerate(pool):
            if math.dist(q, p) <= radius:
                out.append(k)
        yield out


def _oracle_mme(cloud, reference, radius, k_min):
    pool = np.vstack([cloud, reference])
    hs = []
    for idx in _oracle_neighbourhoods(cloud, pool, radius):
        if len(idx) < k_min:
            continue
        cov = np.cov(pool[idx].T, bias=True) + 1e-12 * np.eye(3)
        hs.append(0.5 * (3 * math.log(2 * math.pi * math.e) + np.linalg.slogdet(cov)[1]))
    return float(np.mean(hs))


def _oracle_mpv(cloud, radius, k_min):
    vals = []
    for idx in _oracle_neighbourhoods(cloud, cloud, radius):
        if len(idx) >= k_min:
            vals.append(math.sqrt(max(np.linalg.eigvalsh(np.cov(cloud[idx].T, bias=True))[0], 0.0)))
    return float(np.mean(vals))


def _noisy_plane(n, sigma, seed, size=1.0):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0, size, n), rng.uniform(0, size, n), rng.normal(0, sigma, n)])


@pytest.fixture(scope="module")
def clouds():
    rng = np.random.default_rng(8)
    a = _noisy_plane(1000, 0.02, 1)
    b = _noisy_plane(1000, 0.0, 2) + rng.normal(0, 0.01, (1000, 3))
    return a, b


def test_mme_equals_bruteforce(clouds):
    a, b = clouds
    assert abs(mme(a, b, 0.15, 10) - _oracle_mme(a, b, 0.15, 10)) < 1e-12


def test_mpv_equals_bruteforce(clouds):
    a, _ = clouds
    assert abs(mpv(a, 0.15, 10) - _oracle_mpv(a, 0.15, 10)) < 1e-12


def test_nnd_equals_bruteforce_exactly():
    rng = np.random.default_rng(3)
    P, Q = rng.uniform(0, 5, (1000, 3)), rng.uniform(0, 5, (1000, 3))
    d = np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=2))
    want = np.mean(np.sqrt(((P - Q[np.argmin(d, axis=1)]) ** 2).sum(axis=1)))
    assert nnd(P, Q) == want


def test_mme_self_reference_is_plane_entropy():
    plane = _noisy_plane(1000, 0.0, 5)
    h = mme(plane, plane)
    assert h == pytest.approx(_oracle_mme(plane, plane, 0.3, 10), abs=1e-9)
    assert h < -5


def test_mme_scaling_adds_three_log_two():
    a = _noisy_plane(600, 0.03, 6)
    r = _noisy_plane(600, 0.03, 7)
    h1, n1 = mme(a, r, 0.3, 10, return_count=True)
    h2, n2 = mme(2 * a, 2 * r, 0.6, 10, return_count=True)
    assert n1 == n2
    assert h2 - h1 == pytest.approx(3 * math.log(2), abs=1e-6)


def test_mme_coplanar_neighbourhood_is_finite():
    g = np.stack(np.meshgrid(np.linspace(0, 1, 20), np.linspace(0, 1, 20)), -1).reshape(-1, 2)
    plane = np.column_stack([g, np.zeros(len(g))])
    assert np.isfinite(mme(plane, plane))


def test_mpv_exact_plane_is_zero():
    assert mpv(_noisy_plane(2000, 0.0, 9)) < 1e-9


def test_mpv_recovers_plane_noise():
    assert mpv(_noisy_plane(20_000, 0.05, 10, size=3.0), radius=0.5) == pytest.approx(0.05, rel=0.10)


def test_mpv_isotropic_blob():
    blob = np.random.default_rng(11).normal(0, 0.1, (4000, 3))
    assert mpv(blob, radius=0.6) == pytest.approx(0.1, rel=0.15)


def test_mpv_rigid_motion_invariant():
    a = _noisy_plane(1500, 0.02, 12)
    R = Rotation.from_euler("zyx", [40, 25, -10], degrees=True).as_matrix()
    moved = a @ R.T + [3.0, -1.0, 2.0]
    assert abs(mpv(a) - mpv(moved)) < 1e-9


def test_metric_parameter_checks():
    a = _noisy_plane(100, 0.01, 0)
    with pytest.raises(InvalidArgumentError):
        mpv(a, radius=0.0)
    with pytest.raises(InvalidArgumentError):
        mme(a, a, min_neighbors=3)
    with pytest.raises(MetricUndefinedError):
        mpv(a * 100)


def test_nnd_examples():
    plane = _noisy_plane(1000, 0.0, 13)
    assert nnd(plane, plane) == 0.0
    g = np.stack(np.meshgrid(np.linspace(0, 2, 81), np.linspace(0, 2, 81)), -1).reshape(-1, 2)
    wall = np.column_stack([np.zeros(len(g)), g])
    assert nnd(wall + [0.1, 0, 0], wall) == pytest.approx(0.1, abs=1e-12)
    assert nnd([[2.0, 0, 0]], [[0.0, 0, 0]]) == 2.0
    with pytest.raises(MetricUndefinedError):
        nnd(np.zeros((0, 3)), plane)


def test_nnd_within_cloud_mode():
    pts = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], float)
    assert nnd(pts, None, mode="within_cloud") == pytest.approx((1 + 1 + 2) / 3)
    with pytest.raises(InvalidArgumentError):
        nnd(pts, pts, mode="sideways")


# --- report -----------------------------------------------------------------

def test_report_json_and_csv():
    a = _noisy_plane(800, 0.02, 14)
    rep = evaluate(_traj(yaw=1.0), _traj(), SemanticPointCloud(a, np.zeros(len(a), int)),
                   SemanticPointCloud(a, np.zeros(len(a), int)))
    d = json.loads(rep.to_json())
    assert d["ate_rot"] == pytest.approx(1.0, abs=1e-9) and d["poses"] == 20 and d["points"] == 800
    assert d["nnd"] == 0.0 and d["mpv"] > 0
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == list(MetricsReport.CSV_FIELDS)
    assert len(lines[1].split(",")) == len(MetricsReport.CSV_FIELDS)


def test_report_without_cloud_leaves_map_metrics_empty():
    d = evaluate(_traj(), _traj()).to_dict()
    assert d["mme"] is None and d["mpv"] is None and d["nnd"] is None
