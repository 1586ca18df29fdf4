"""Rigid transforms, rotation parametrizations, the pinhole camera and
small distance kernels shared by the rest of the package.

Conventions
-----------
* Quaternions are stored scalar-first, ``(w, x, y, z)``.
* A :class:`Pose` maps points from its local frame into the parent frame:
  ``apply(p, x) = R @ x + t``.
* Camera frames are optical: x right, y down, z forward (depth).
* The *body* frame rigidly attached to a camera is x forward, y left, z up.
  Yaw/pitch/roll of a camera always refer to the body frame, see
  :data:`CAMERA_FROM_BODY`.
* Euler angles are intrinsic Z(yaw)-Y(pitch)-X(roll), in degrees.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError

_NORM_TOL = 1e-12


class GimbalLockWarning(RuntimeWarning):
    pass


# ----------------------------------------------------------------------------
# quaternion / rotation kernels (vectorized over leading axes)
# ----------------------------------------------------------------------------

def skew(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_multiply(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (Shepperd's method), ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    q = np.empty((R.shape[0], 4))
    tr = np.trace(R, axis1=1, axis2=2)
    diag = np.stack([R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    for idx in range(len(R)):
        m = R[idx]
        c = choice[idx]
        if c == 0:
            s = math.sqrt(1.0 + tr[idx]) * 2
            q[idx] = [0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif c == 1:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q[idx] = [(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif c == 2:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q[idx] = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q[idx] = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q[q[:, 0] < 0] *= -1
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(batch + (4,))


def rotvec_to_quat(w):
    w = np.asarray(w, dtype=float)
    angle = np.linalg.norm(w, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle, with the Taylor series near zero
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle ** 2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), w * k], axis=-1)


def quat_to_rotvec(q):
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    k = np.where(small, 2.0 / np.where(small, q[..., :1], 1.0), angle / np.where(small, 1.0, s))
    return v * k


def so3_exp(w):
    """Rodrigues' formula, vectorized."""
    return quat_to_matrix(rotvec_to_quat(w))


def rot_x(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def ypr_to_matrix(yaw, pitch, roll):
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def matrix_to_ypr(R):
    """Intrinsic Z-Y-X decomposition of one or many rotation matrices.

    Returns ``(yaw, pitch, roll, degenerate)`` arrays in degrees.  Where
    ``|pitch|`` is within 1e-6 deg of 90 the roll is set to 0 and the whole
    residual rotation is folded into yaw.
    """
    R = np.asarray(R, dtype=float)
    # atan2 form stays accurate near the poles where arcsin does not
    pitch = np.degrees(np.arctan2(-R[..., 2, 0], np.hypot(R[..., 0, 0], R[..., 1, 0])))
    degenerate = np.abs(np.abs(pitch) - 90.0) < 1e-6
    yaw = np.degrees(np.arctan2(R[..., 1, 0], R[..., 0, 0]))
    roll = np.degrees(np.arctan2(R[..., 2, 1], R[..., 2, 2]))
    if np.any(degenerate):
        # R = Rz(yaw - s*roll) Ry(s*90) with roll := 0
        gl_yaw = np.degrees(np.arctan2(-R[..., 0, 1], R[..., 1, 1]))
        yaw = np.where(degenerate, gl_yaw, yaw)
        roll = np.where(degenerate, 0.0, roll)
    return yaw, pitch, roll, degenerate


# ----------------------------------------------------------------------------
# Pose
# ----------------------------------------------------------------------------

def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform with a unit quaternion ``rotation`` (w, x, y, z) and a
    ``translation`` in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float).reshape(4)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise InvalidArgumentError("pose has non-finite components")
        n = float(np.linalg.norm(q))
        if n < 1e-300:
            raise InvalidArgumentError("zero quaternion")
        # only renormalize when needed so that round trips stay bit-exact
        if abs(n - 1.0) > _NORM_TOL:
            q = q / n
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)):
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_rotvec(cls, w, t=(0.0, 0.0, 0.0)):
        return cls(rotvec_to_quat(w), t)

    @classmethod
    def from_ypr(cls, yaw=0.0, pitch=0.0, roll=0.0, t=(0.0, 0.0, 0.0)):
        return cls.from_matrix(ypr_to_matrix(yaw, pitch, roll), t)

    @classmethod
    def from_matrix4(cls, T):
        T = np.asarray(T, dtype=float)
        return cls.from_matrix(T[:3, :3], T[:3, 3])

    @cached_property
    def matrix(self):
        R = quat_to_matrix(self.rotation)
        R.setflags(write=False)
        return R

    def as_matrix4(self):
        T = np.eye(4)
        T[:3, :3] = self.matrix
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        qi = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(qi, -(self.matrix.T @ self.translation))

    def compose(self, other):
        """``self ∘ other``: applies ``other`` first, then ``self``."""
        q = quat_multiply(self.rotation, other.rotation)
        return Pose(q, self.matrix @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T + self.translation

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"Pose(q=({q}), t=({t}))"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def apply(p: Pose, x):
    return p.apply(x)


def rotation_geodesic(a: Pose, b: Pose) -> float:
    """Angle of the relative rotation between two poses, degrees in [0, 180]."""
    rel = quat_multiply(a.rotation * np.array([1.0, -1.0, -1.0, -1.0]), b.rotation)
    return float(np.degrees(2.0 * math.atan2(np.linalg.norm(rel[1:]), abs(rel[0]))))


def rotation_geodesic_matrices(Ra, Rb):
    """Vectorized geodesic angle in degrees between stacks of matrices."""
    Rrel = np.einsum("...ji,...jk->...ik", Ra, Rb)
    c = (np.trace(Rrel, axis1=-2, axis2=-1) - 1.0) / 2.0
    # asin branch of the skew part keeps accuracy near 0 and 180
    s = 0.5 * np.linalg.norm(np.stack([
        Rrel[..., 2, 1] - Rrel[..., 1, 2],
        Rrel[..., 0, 2] - Rrel[..., 2, 0],
        Rrel[..., 1, 0] - Rrel[..., 0, 1],
    ], axis=-1), axis=-1)
    return np.degrees(np.arctan2(s, c))


def to_yaw_pitch_roll(p: Pose):
    """Intrinsic Z-Y-X Euler angles of ``p``'s rotation in degrees."""
    yaw, pitch, roll, degenerate = matrix_to_ypr(p.matrix)
    if degenerate:
        warnings.warn("pitch at +-90 deg: yaw/roll not separable, roll set to 0",
                      GimbalLockWarning, stacklevel=2)
    return float(yaw), float(pitch), float(roll)


# Camera (optical) axes expressed in the body frame and vice versa.
# Body x (forward) = camera z, body y (left) = -camera x, body z (up) = -camera y.
CAMERA_FROM_BODY = np.array([[0.0, -1.0, 0.0],
                             [0.0, 0.0, -1.0],
                             [1.0, 0.0, 0.0]])
CAMERA_FROM_BODY.setflags(write=False)


def camera_pose(position, yaw=0.0, pitch=0.0, roll=0.0) -> Pose:
    """World-from-camera pose of a camera whose body frame has the given
    yaw/pitch/roll (degrees) in the world."""
    R_wb = ypr_to_matrix(yaw, pitch, roll)
    return Pose.from_matrix(R_wb @ CAMERA_FROM_BODY.T, position)


def body_matrix(p: Pose):
    """World-from-body rotation of a world-from-camera pose."""
    return p.matrix @ CAMERA_FROM_BODY


# ----------------------------------------------------------------------------
# camera
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    """Undistorted pinhole camera.

    ``extrinsic`` is the camera-from-LiDAR transform, only needed when raw
    scans are projected into the image.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point outside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def in_bounds(self, u, v):
        u = np.asarray(u)
        v = np.asarray(v)
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    def project_points(self, X):
        """Project camera-frame points. Returns ``(uv, visible)``; ``uv`` is
        NaN where the point is behind the camera."""
        X = np.asarray(X, dtype=float)
        z = X[..., 2]
        front = z > 0
        zs = np.where(front, z, 1.0)
        u = self.fx * X[..., 0] / zs + self.cx
        v = self.fy * X[..., 1] / zs + self.cy
        u = np.where(front, u, np.nan)
        v = np.where(front, v, np.nan)
        visible = front & self.in_bounds(np.nan_to_num(u, nan=-1), np.nan_to_num(v, nan=-1))
        return np.stack([u, v], axis=-1), visible

    def rays(self, u, v):
        """Camera-frame ray directions scaled to unit depth (z = 1)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy,
                         np.ones(np.broadcast(u, v).shape)], axis=-1)

    def backproject_points(self, u, v, depth):
        depth = np.asarray(depth, dtype=float)
        return self.rays(u, v) * depth[..., None]

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "extrinsic": {"q": [float(x) for x in self.extrinsic.rotation],
                              "t": [float(x) for x in self.extrinsic.translation]}}

    @classmethod
    def from_dict(cls, d):
        ext = d.get("extrinsic")
        extrinsic = Pose(ext["q"], ext["t"]) if ext else Pose.identity()
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), extrinsic)


def project(cam: CameraModel, x_cam):
    """Pinhole projection of one camera-frame point; ``None`` if out of view."""
    uv, visible = cam.project_points(np.asarray(x_cam, dtype=float))
    if not visible:
        return None
    return float(uv[0]), float(uv[1])


def backproject(cam: CameraModel, u, v, depth):
    if not depth > 0:
        raise InvalidArgumentError(f"depth must be positive, got {depth}")
    return cam.backproject_points(u, v, depth)


# ----------------------------------------------------------------------------
# planes and segments
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Plane:
    """The plane ``normal · x = offset``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise InvalidArgumentError("plane normal must be non-zero")
        if abs(norm - 1.0) > 1e-12:
            n = n / norm
        object.__setattr__(self, "normal", _frozen(n))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def horizontal(cls, z):
        return cls(np.array([0.0, 0.0, 1.0]), z)


def point_to_plane(x, pl: Plane):
    return np.asarray(x, dtype=float) @ pl.normal - pl.offset


@dataclass(frozen=True, eq=False)
class Segment2D:
    start: np.ndarray
    end: np.ndarray
    cls: int

    def __post_init__(self):
        a = np.array(self.start, dtype=float).reshape(2)
        b = np.array(self.end, dtype=float).reshape(2)
        if np.linalg.norm(b - a) <= 1e-6:
            raise InvalidArgumentError("segment endpoints coincide")
        object.__setattr__(self, "start", _frozen(a))
        object.__setattr__(self, "end", _frozen(b))
        object.__setattr__(self, "cls", int(self.cls))

    @property
    def length(self):
        return float(np.linalg.norm(self.end - self.start))


def closest_on_segments(P, A, B):
    """Closest points and distances from points ``P (M,2)`` to segments
    ``A->B (S,2)``. Returns ``(dist (M,S), closest (M,S,2))``."""
    P = np.asarray(P, dtype=float)[:, None, :]
    A = np.asarray(A, dtype=float)[None]
    d = np.asarray(B, dtype=float)[None] - A
    L2 = np.sum(d * d, axis=-1)
    s = np.clip(np.sum((P - A) * d, axis=-1) / L2, 0.0, 1.0)
    C = A + s[..., None] * d
    return np.linalg.norm(P - C, axis=-1), C


def point_to_segment(x, s: Segment2D):
    dist, C = closest_on_segments(np.asarray(x, dtype=float).reshape(1, 2),
                                  s.start[None], s.end[None])
    return float(dist[0, 0]), C[0, 0]
