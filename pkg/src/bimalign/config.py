"""Pipeline configuration: nested dataclasses loaded from JSON with strict
key checking and ``key.path=value`` overrides."""

from __future__ import annotations

import copy
import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DataIOError

REFERENCE_SCENE = {
    "rooms": [{"x": 0.0, "y": 0.0, "w": 5.0, "h": 8.0},
              {"x": 5.0, "y": 0.0, "w": 5.0, "h": 8.0}],
    "wall_thickness": 0.1,
    "floor_z": 0.0,
    "ceiling_z": 2.5,
    "columns": [{"x": 2.5, "y": 6.0, "size": 0.3},
                {"x": 7.5, "y": 2.0, "size": 0.3}],
    "doors": [{"x": 5.0, "y": 4.0, "width": 1.0}],
}


@dataclass
class SceneConfig:
    source: str | None = None           # spec JSON or OBJ directory; None = spec below
    spec: dict = field(default_factory=lambda: copy.deepcopy(REFERENCE_SCENE))


@dataclass
class SamplingConfig:
    density: float = 2000.0
    seed: int = 0


@dataclass
class FloorplanConfig:
    half_band: float = 0.20
    resolution: float = 0.02
    min_hits: int = 2
    min_segment_length: float = 0.05


@dataclass
class CameraConfig:
    fx: float = 100.0
    fy: float = 100.0
    cx: float = 80.0
    cy: float = 60.0
    width: int = 160
    height: int = 120


@dataclass
class SimulateConfig:
    camera: CameraConfig = field(default_factory=CameraConfig)
    rows: int = 32
    cols: int = 64
    waypoints: list = field(default_factory=lambda: [[1.0, 1.5], [1.0, 4.0], [9.0, 4.0]])
    n_frames: int = 120
    height: float = 1.2
    per_pair: int = 50
    pixel_noise_sigma: float = 0.5
    window: int = 3
    seed: int = 0


@dataclass
class DriftSection:
    sigma_t: float = 0.0
    sigma_pitch: float = 0.0
    sigma_yaw: float = 0.0
    seed: int = 1
    target_ate_pos: float | None = 0.303
    target_ate_rot: float | None = 8.82


@dataclass
class DepthConfig:
    source: str = "densified"           # densified | rendered
    interp_space: str = "depth"
    smooth_radius: int = 5
    stride: int = 4


@dataclass
class TermsSection:
    enabled: dict = field(default_factory=lambda: {t: True for t in
                                                   ("geometric", "floor", "wall", "column", "ceiling")})
    weight: dict = field(default_factory=lambda: {t: 1.0 for t in
                                                  ("geometric", "floor", "wall", "column", "ceiling")})
    huber_delta: dict = field(default_factory=lambda: {"geometric": 0.10, "floor": 0.05, "ceiling": 0.05,
                                                       "wall": 0.10, "column": 0.10})
    assoc_gate: float = 0.5


@dataclass
class SolverConfig:
    max_outer_iters: int = 50
    rel_cost_tol: float = 1e-6
    lm_lambda_init: float = 1e-4
    lm_lambda_factor: float = 10.0
    fix_first_pose: str = "auto"
    optimize_rotation: bool = True
    rank_rcond: float = 1e-4


@dataclass
class MetricsConfig:
    radius: float = 0.30
    min_neighbors: int = 10
    nnd_mode: str = "to_reference"
    max_points: int | None = 20000
    seed: int = 0
    map_stride: int = 8


@dataclass
class AblationConfig:
    rows: list = field(default_factory=lambda: [
        ["geometric"], ["floor"], ["wall"], ["column"], ["ceiling"],
        ["geometric", "floor", "wall"],
        ["geometric", "floor", "wall", "column", "ceiling"],
    ])


@dataclass
class PipelineConfig:
    out_dir: str = "bimalign_out"
    threads: int | None = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    floorplan: FloorplanConfig = field(default_factory=FloorplanConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    drift: DriftSection = field(default_factory=DriftSection)
    depth: DepthConfig = field(default_factory=DepthConfig)
    terms: TermsSection = field(default_factory=TermsSection)
    solver: SolverConfig = field(default_factory=SolverConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data, "")

    @classmethod
    def load(cls, path=None, overrides=()):
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except OSError as exc:
                raise DataIOError(f"cannot read config {path}: {exc.strerror}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        merged = _merge(cls().to_dict(), data, "")
        for item in overrides:
            apply_override(merged, item)
        return cls.from_dict(merged)


# free-form mappings whose keys are data, not schema
_OPEN_DICTS = {"scene.spec"}


def _merge(base, new, path):
    if not isinstance(new, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    out = dict(base)
    for k, v in new.items():
        key = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and key not in _OPEN_DICTS:
            out[k] = _merge(base[k], v, key)
        else:
            out[k] = v
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data, item):
    """Apply one ``key.path=value`` override in place; the value is parsed
    as JSON when possible, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key {'.'.join(parts[:i + 1])!r}")
        node = node[p]
    parent = ".".join(parts[:-1])
    if not isinstance(node, dict) or (parts[-1] not in node and parent not in _OPEN_DICTS):
        raise ConfigError(f"unknown config key {key.strip()!r}")
    node[parts[-1]] = _parse_value(text)


def _check_scalar(value, tp, key):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object, got {value!r}")
        return value
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"unknown config key {(path + '.' if path else '') + k!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        key = f"{path}.{f.name}" if path else f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], key)
        else:
            kwargs[f.name] = _check_scalar(data[f.name], tp, key)
    return cls(**kwargs)
