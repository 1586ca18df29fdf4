"""Trajectory refinement against a BIM-derived semantic floor plan."""

from .errors import (BimAlignError, CalibrationError, ConfigError, DataIOError, EmptyProblemError,
                     InvalidArgumentError, NumericError)
from .geometry import CameraModel, Pose
from .scene import BuildingScene, SceneSpec, SemanticClass, SemanticPointCloud
from .floorplan import VectorFloorPlan, build_floorplan
from .simulate import Correspondences, Frame, Trajectory
from .drift import DriftConfig, apply_drift, calibrate_sigma
from .depth import DepthMap
from .optimize import Problem, SolveOptions, SolveReport, TermConfig, solve
from .metrics import MetricsReport, ate, evaluate

__version__ = "0.1.0"

__all__ = [
    "BimAlignError", "BuildingScene", "CalibrationError", "CameraModel", "ConfigError",
    "Correspondences", "DataIOError", "DepthMap", "DriftConfig", "EmptyProblemError", "Frame",
    "InvalidArgumentError", "MetricsReport", "NumericError", "Pose", "Problem", "SceneSpec",
    "SemanticClass", "SemanticPointCloud", "SolveOptions", "SolveReport", "TermConfig", "Trajectory",
    "VectorFloorPlan", "apply_drift", "ate", "build_floorplan", "calibrate_sigma", "evaluate", "solve",
]
