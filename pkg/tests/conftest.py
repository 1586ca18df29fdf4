from dataclasses import dataclass

import numpy as np
import pytest

from bimalign.depth import DepthMap
from bimalign.floorplan import plan_from_scene
from bimalign.geometry import CameraModel
from bimalign.scene import generate_scene
from bimalign.simulate import (generate_gt_trajectory, render_depth, render_frames, scanline_pattern,
                               synth_correspondences)

SMALL_ROOM = {"rooms": [{"x": 0, "y": 0, "w": 4, "h": 3}], "wall_thickness": 0.1, "floor_z": 0.0,
              "ceiling_z": 2.5, "columns": [{"x": 2.8, "y": 1.8, "size": 0.3}]}


@dataclass
class World:
    scene: object
    cam: CameraModel
    gt: object
    maps: list
    frames: list
    corr: object
    plan: object


def make_world(n_frames=8, noise=0.0, seed=0):
    """Noise-free small room: exact rendered depth, exact plan, GT poses."""
    scene = generate_scene(SMALL_ROOM)
    cam = CameraModel(100.0, 100.0, 80.0, 60.0, 160, 120)
    gt = generate_gt_trajectory(scene, [(0.6, 0.7), (1.6, 2.0), (3.2, 2.4)], n_frames, 1.2)
    soup = scene.triangle_soup()
    maps = [DepthMap(*render_depth(scene, cam, p, soup)) for p in gt.poses]
    frames = render_frames(scene, cam, gt, scanline_pattern(cam, 16, 24))
    corr = synth_correspondences(scene, cam, gt, per_pair=40, pixel_noise_sigma=noise, window=2, seed=seed)
    return World(scene, cam, gt, maps, frames, corr, plan_from_scene(scene))


@pytest.fixture(scope="session")
def world():
    return make_world()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
