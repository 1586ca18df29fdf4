import csv
import json

import pytest

from bimalign.cli import main
from bimalign.config import PipelineConfig

from conftest import SMALL_ROOM

TINY = {
    "scene": {"spec": SMALL_ROOM},
    "sampling": {"density": 1000.0},
    "simulate": {"waypoints": [[0.6, 0.7], [1.6, 2.0], [3.2, 2.4]], "n_frames": 12, "rows": 16, "cols": 24,
                 "per_pair": 30, "window": 2},
    "drift": {"sigma_t": 0.02, "sigma_pitch": 0.5, "sigma_yaw": 1.0, "target_ate_pos": None,
              "target_ate_rot": None},
    "solver": {"max_outer_iters": 10},
    "metrics": {"max_points": 3000},
    "ablation": {"rows": [["geometric"], ["floor"], ["geometric", "floor", "wall"],
                          ["geometric", "floor", "wall", "column", "ceiling"]]},
}


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def _run(config_path, ws, *args):
    return main([args[0], "--config", str(config_path), "--out-dir", str(ws), *args[1:]])


@pytest.fixture(scope="module")
def workspace(config_path, tmp_path_factory):
    ws = tmp_path_factory.mktemp("run")
    assert _run(config_path, ws, "run") == 0
    return ws


# --- configuration ----------------------------------------------------------

def test_unknown_key_names_the_key(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"solver": {"max_iters": 3}}))
    assert main(["sample", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("config_error:") and "solver.max_iters" in err and "\n" not in err


def test_override_parses_json_scalars():
    cfg = PipelineConfig.load(None, ["drift.seed=7", "solver.optimize_rotation=false", "depth.source=rendered"])
    assert cfg.drift.seed == 7 and cfg.solver.optimize_rotation is False and cfg.depth.source == "rendered"


def test_override_type_checked():
    from bimalign.errors import ConfigError
    with pytest.raises(ConfigError, match="solver.max_outer_iters"):
        PipelineConfig.load(None, ["solver.max_outer_iters=many"])
    with pytest.raises(ConfigError):
        PipelineConfig.load(None, ["novel=1"])


def test_config_round_trip():
    cfg = PipelineConfig.load(None, ["simulate.n_frames=9"])
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


def test_missing_config_file_is_io_error(tmp_path, capsys):
    assert main(["sample", "--config", str(tmp_path / "none.json")]) == 3
    assert capsys.readouterr().err.startswith("io_error:")


def test_stage_without_inputs_is_io_error(tmp_path, config_path, capsys):
    assert _run(config_path, tmp_path, "optimize") == 3
    assert "missing" in capsys.readouterr().err


def test_bad_thread_count(tmp_path, config_path):
    assert _run(config_path, tmp_path, "sample", "--threads", "0") == 2


# --- stages -----------------------------------------------------------------

def test_run_writes_every_artifact(workspace):
    for name in ("scene.json", "reference.ply", "plan.json", "gt.tum", "correspondences.csv", "drifted.tum",
                 "refined.tum", "solve_report.json", "map_gt.ply", "map_refined.ply", "metrics.json",
                 "convergence.svg"):
        assert (workspace / name).is_file(), name
    assert any((workspace / "depth").iterdir())
    assert (workspace / "obj").is_dir()


def test_zero_drift_copies_input(workspace, config_path, tmp_path):
    out = tmp_path / "same.tum"
    code = _run(config_path, workspace, "drift", "--input", str(workspace / "gt.tum"), "--output", str(out),
                "--set", "drift.sigma_t=0", "--set", "drift.sigma_pitch=0", "--set", "drift.sigma_yaw=0")
    assert code == 0
    assert out.read_bytes() == (workspace / "gt.tum").read_bytes()


def test_eval_against_itself_is_zero(workspace, config_path, capsys):
    assert _run(config_path, workspace, "eval", "--est", "gt", "--gt", "gt",
                "--cloud", str(workspace / "map_gt.ply")) == 0
    out = capsys.readouterr().out.splitlines()
    row = dict(zip(out[0].split(","), out[1].split(",")))
    for k in ("ate_pos", "ate_rot", "rmse_yaw", "rmse_pitch", "rmse_roll"):
        assert float(row[k]) == 0.0


def test_ablate_table_layout(workspace, config_path, capsys):
    assert _run(config_path, workspace, "ablate") == 0
    capsys.readouterr()
    rows = list(csv.reader((workspace / "ablation.csv").open()))
    assert rows[0] == ["method", "G", "F", "W", "Co", "Ce", "MME", "MPV", "NND", "ATE_pos", "ATE_rot"]
    body = rows[1:]
    assert [r[0] for r in body] == ["G", "F", "G+F+W", "G+F+W+Co+Ce"]
    assert body[0][1:6] == ["1", "0", "0", "0", "0"] and body[-1][1:6] == ["1"] * 5
    assert all(float(v) >= 0 for r in body for v in r[9:])


def test_plot_is_svg(workspace, config_path, capsys):
    assert _run(config_path, workspace, "plot") == 0
    svg = (workspace / "convergence.svg").read_text()
    assert svg.startswith("<svg") and "ATE" in svg and "<polyline" in svg


def test_stages_are_idempotent(workspace, config_path):
    before = (workspace / "plan.json").read_bytes(), (workspace / "reference.ply").read_bytes()
    assert _run(config_path, workspace, "sample") == 0
    assert _run(config_path, workspace, "floorplan") == 0
    assert ((workspace / "plan.json").read_bytes(), (workspace / "reference.ply").read_bytes()) == before


def test_scene_summary_prints_json(tmp_path, config_path, capsys):
    assert _run(config_path, tmp_path, "scene") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary and (tmp_path / "obj").is_dir()
