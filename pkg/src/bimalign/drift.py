"""Synthetic SLAM-like drift on top of a ground-truth trajectory."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CalibrationError, InvalidArgumentError
from .geometry import CAMERA_FROM_BODY, Pose, rot_y, rot_z
from .metrics import ate
from .simulate import Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DriftConfig:
    sigma_t: float = 0.0      # m, per-axis random-walk increment std
    sigma_pitch: float = 0.0  # deg
    sigma_yaw: float = 0.0    # deg
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_t", "sigma_pitch", "sigma_yaw"):
            if not getattr(self, name) >= 0:
                raise InvalidArgumentError(f"{name} must be >= 0")

    def to_dict(self):
        return asdict(self)

    @property
    def is_zero(self):
        return self.sigma_t == 0 and self.sigma_pitch == 0 and self.sigma_yaw == 0


def draw_offsets(n, cfg: DriftConfig):
    """Raw random draws for ``n`` poses: ``(translation offsets (n,3),
    pitch (n,), yaw (n,))``.  Translation is a per-axis Gaussian random
    walk starting from a first draw around zero; the angles are independent
    per pose."""
    rng = np.random.default_rng(cfg.seed)
    steps = rng.standard_normal((n, 3))
    pitch = rng.standard_normal(n)
    yaw = rng.standard_normal(n)
    return np.cumsum(steps, axis=0) * cfg.sigma_t, pitch * cfg.sigma_pitch, yaw * cfg.sigma_yaw


def apply_drift(gt: Trajectory, cfg: DriftConfig) -> Trajectory:
    """Drifted copy of ``gt``.

    Orientation errors are applied about the camera's own body axes:
    ``R_body <- R_body * Rz(yaw) * Ry(pitch)``; roll is never touched.
    """
    if cfg.is_zero:
        return gt.with_poses(gt.poses)
    dt, pitch, yaw = draw_offsets(len(gt), cfg)
    C = CAMERA_FROM_BODY
    poses = []
    for p, d, ph, th in zip(gt.poses, dt, pitch, yaw):
        if ph == 0 and th == 0:
            poses.append(Pose(p.rotation, p.translation + d))
        else:
            R = p.matrix @ C @ rot_z(th) @ rot_y(ph) @ C.T
            poses.append(Pose.from_matrix(R, p.translation + d))
    return gt.with_poses(poses)


def _bisect(f, target, tol_rel=0.05, max_steps=60):
    """Find ``k >= 0`` with ``f(k)`` within ``tol_rel`` of ``target``;
    ``f`` is nondecreasing with ``f(0) = 0``.  The search keeps refining
    towards a tenth of the tolerance and returns the closest multiplier
    seen once the step budget runs out."""
    lo, hi = 0.0, 1.0
    best, best_err = None, np.inf
    steps = 0
    while steps < max_steps and f(hi) < target:
        lo, hi = hi, hi * 2.0
        steps += 1
    while steps < max_steps:
        k = 0.5 * (lo + hi)
        err = (f(k) - target) / target
        steps += 1
        if abs(err) < best_err:
            best, best_err = k, abs(err)
        if abs(err) <= 0.1 * tol_rel:
            break
        if err < 0:
            lo = k
        else:
            hi = k
    if best is None or best_err > tol_rel:
        raise CalibrationError(f"target {target} not reached within {max_steps} bisection steps")
    return best


def calibrate_sigma(gt: Trajectory, target_ate_pos, target_ate_rot, seed=0,
                    tol_rel=0.05, max_steps=60) -> DriftConfig:
    """Scale the drift sigmas until ATE_pos / ATE_rot of the drifted
    trajectory land within ``tol_rel`` of the targets for this seed.

    Translation and rotation are drawn from separate streams, so the two
    multipliers are searched independently; pitch and yaw share one sigma.
    """
    if not (target_ate_pos >= 0 and target_ate_rot >= 0):
        raise InvalidArgumentError("calibration targets must be >= 0")
    sigma_t = 0.0
    sigma_r = 0.0
    if target_ate_pos > 0:
        sigma_t = _bisect(lambda k: ate(apply_drift(gt, DriftConfig(k, 0.0, 0.0, seed)), gt).ate_pos,
                          target_ate_pos, tol_rel, max_steps)
    if target_ate_rot > 0:
        sigma_r = _bisect(lambda k: ate(apply_drift(gt, DriftConfig(0.0, k, k, seed)), gt).ate_rot,
                          target_ate_rot, tol_rel, max_steps)
    cfg = DriftConfig(sigma_t, sigma_r, sigma_r, seed)
    res = ate(apply_drift(gt, cfg), gt)
    log.info("calibrated sigma_t=%.4f sigma_rot=%.3f -> ATE %.3f m / %.2f deg",
             sigma_t, sigma_r, res.ate_pos, res.ate_rot)
    return cfg
