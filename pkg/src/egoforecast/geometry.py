"""Rotations, pinhole projection, field-of-view tests and gravity-preserving
canonicalization.

Conventions used throughout the package:

* world frame is right-handed with +z pointing up (against gravity);
* camera frames follow the pinhole/OpenCV convention: +x right, +y down,
  +z along the optical axis;
* ``CameraPose.R`` maps camera coordinates to world coordinates and
  ``CameraPose.t`` is the camera centre in world coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence as SequenceT

import numpy as np

UP = np.array([0.0, 0.0, 1.0])


class GeometryError(ValueError):
    pass


class InvalidRotationError(GeometryError):
    pass


class CameraPlaneError(GeometryError):
    """Raised when a point lies on the camera plane (zero depth)."""


class EmptyInputError(GeometryError):
    pass


# ---------------------------------------------------------------------------
# 6D rotation representation
# ---------------------------------------------------------------------------

def rotation_6d_to_matrix(r6) -> np.ndarray:
    """Decode a 6D rotation (first two matrix columns) with Gram-Schmidt.

    Broadcasts over leading dimensions: ``(..., 6) -> (..., 3, 3)``.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise InvalidRotationError(f"expected trailing dimension 6, got {r6.shape}")
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-12):
        raise InvalidRotationError("first 6D column is zero")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    # parallel columns leave nothing after projection
    if np.any(n2 < 1e-12 * np.maximum(np.linalg.norm(a2, axis=-1, keepdims=True), 1.0)):
        raise InvalidRotationError("6D columns are zero or parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rotation_6d(R) -> np.ndarray:
    """Encode a rotation matrix as its first two columns ``(..., 3, 3) -> (..., 6)``."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected (..., 3, 3), got {R.shape}")
    eye = np.eye(3)
    orth_err = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max(initial=0.0)
    if orth_err > 1e-6 or np.any(np.abs(np.linalg.det(R) - 1.0) > 1e-6):
        raise InvalidRotationError("matrix is not a proper rotation")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


# camera looking along world +x, image x to world -y, image y to world -z
_LEVEL_CAMERA = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def camera_rotation(yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """World-from-camera rotation for a head-style camera.

    ``yaw`` turns the heading about world +z (0 looks along world +x),
    ``pitch`` tilts the optical axis up (positive) or down (negative) and
    ``roll`` spins about the optical axis.
    """
    # pitch about camera x: positive pitch raises the optical axis (camera y points down)
    return rot_z(yaw) @ _LEVEL_CAMERA @ rot_x(pitch) @ _rot_optical(roll)


def _rot_optical(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def heading_yaw(R) -> float:
    """Yaw about world +z of a camera's optical axis projected to the ground.

    Falls back to the camera "up" axis (-y) when looking straight up or down.
    """
    R = np.asarray(R, dtype=np.float64)
    fwd = R[:, 2]
    if np.hypot(fwd[0], fwd[1]) < 1e-9:
        fwd = -R[:, 1] * np.sign(R[2, 2]) if R[2, 2] != 0 else -R[:, 1]
    return float(np.arctan2(fwd[1], fwd[0]))


# ---------------------------------------------------------------------------
# Camera model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray          # 6D, world-from-camera
    translation: np.ndarray       # camera centre in world, metres
    intrinsics: tuple             # (fx, fy, cx, cy), pixels
    image_size: tuple             # (width, height), pixels
    R: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r6 = np.asarray(self.rotation, dtype=np.float64).reshape(6)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        fx, fy, cx, cy = (float(v) for v in self.intrinsics)
        w, h = (int(v) for v in self.image_size)
        if fx <= 0 or fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if w <= 0 or h <= 0:
            raise GeometryError("image size must be positive")
        object.__setattr__(self, "rotation", r6)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "intrinsics", (fx, fy, cx, cy))
        object.__setattr__(self, "image_size", (w, h))
        object.__setattr__(self, "R", rotation_6d_to_matrix(r6))

    @classmethod
    def from_matrix(cls, R, translation, intrinsics, image_size) -> "CameraPose":
        return cls(matrix_to_rotation_6d(R), translation, intrinsics, image_size)

    @property
    def c_cam(self) -> np.ndarray:
        """The 9-vector conditioning signal: 6D rotation then translation."""
        return np.concatenate([self.rotation, self.translation])

    @property
    def K(self) -> np.ndarray:
        fx, fy, cx, cy = self.intrinsics
        return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])

    def world_to_camera(self, x_world) -> np.ndarray:
        x = np.asarray(x_world, dtype=np.float64)
        return (x - self.translation) @ self.R

    def camera_to_world(self, x_cam) -> np.ndarray:
        x = np.asarray(x_cam, dtype=np.float64)
        return x @ self.R.T + self.translation


def project_points(pose: CameraPose, x_world) -> np.ndarray:
    """Vectorised projection ``(..., 3) -> (..., 3)`` as (u, v, depth).

    No camera-plane check; depth may be zero or negative.
    """
    xc = pose.world_to_camera(x_world)
    fx, fy, cx, cy = pose.intrinsics
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * xc[..., 0] / z + cx
        v = fy * xc[..., 1] / z + cy
    return np.stack([u, v, z], axis=-1)


def project_point(pose: CameraPose, x_world) -> tuple[float, float, float]:
    xc = pose.world_to_camera(np.asarray(x_world, dtype=np.float64).reshape(3))
    if abs(xc[2]) < 1e-9:
        raise CameraPlaneError(f"point at depth {xc[2]:.3g} lies on the camera plane")
    fx, fy, cx, cy = pose.intrinsics
    return fx * xc[0] / xc[2] + cx, fy * xc[1] / xc[2] + cy, float(xc[2])


def lift_point(pose: CameraPose, u: float, v: float, depth: float) -> np.ndarray:
    """Inverse of :func:`project_point`."""
    fx, fy, cx, cy = pose.intrinsics
    xc = np.array([(u - cx) / fx * depth, (v - cy) / fy * depth, depth])
    return pose.camera_to_world(xc)


def _in_bounds(uvz, image_size) -> np.ndarray:
    w, h = image_size
    u, v, z = uvz[..., 0], uvz[..., 1], uvz[..., 2]
    return (z > 0) & (u >= 0) & (u < w) & (v >= 0) & (v < h)


def in_view(pose: CameraPose, x_world) -> bool:
    try:
        uvz = np.array(project_point(pose, x_world))
    except CameraPlaneError:
        return False
    return bool(_in_bounds(uvz, pose.image_size))


def in_view_many(pose: CameraPose, x_world) -> np.ndarray:
    """Vectorised :func:`in_view` over ``(..., 3)`` points."""
    uvz = project_points(pose, x_world)
    ok = np.abs(uvz[..., 2]) >= 1e-9
    return ok & np.nan_to_num(_in_bounds(uvz, pose.image_size), nan=False).astype(bool)


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CanonicalTransform:
    """x_canon = Rz(-yaw) (x - [ox, oy, 0])."""

    yaw: float
    horizontal_offset: tuple

    @property
    def yaw_rotation(self) -> np.ndarray:
        return rot_z(self.yaw)

    @property
    def _offset3(self) -> np.ndarray:
        ox, oy = self.horizontal_offset
        return np.array([ox, oy, 0.0])

    def apply_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self._offset3) @ self.yaw_rotation   # row-vector form of Rz(-yaw) @ x

    def invert_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.yaw_rotation.T + self._offset3

    def apply_pose(self, pose: CameraPose) -> CameraPose:
        Rz_inv = self.yaw_rotation.T
        return CameraPose.from_matrix(Rz_inv @ pose.R, self.apply_points(pose.translation),
                                      pose.intrinsics, pose.image_size)

    def invert_pose(self, pose: CameraPose) -> CameraPose:
        return CameraPose.from_matrix(self.yaw_rotation @ pose.R, self.invert_points(pose.translation),
                                      pose.intrinsics, pose.image_size)

    @property
    def is_identity(self) -> bool:
        return self.yaw == 0.0 and self.horizontal_offset == (0.0, 0.0)


def canonical_transform_for(pose: CameraPose, atol: float = 1e-12) -> CanonicalTransform:
    """Transform that zeroes the yaw and horizontal position of ``pose``.

    Poses that are already canonical within ``atol`` yield the exact identity,
    which keeps canonical-form files byte-stable across load/save.
    """
    yaw = heading_yaw(pose.R)
    ox, oy = float(pose.translation[0]), float(pose.translation[1])
    if abs(yaw) < atol:
        yaw = 0.0
    if abs(ox) < atol:
        ox = 0.0
    if abs(oy) < atol:
        oy = 0.0
    return CanonicalTransform(yaw=yaw, horizontal_offset=(ox, oy))


def canonicalize_sequence(poses: SequenceT[CameraPose], joints):
    """Express poses and 3D points relative to the first camera's heading.

    ``joints`` is an array of points ``(..., 3)`` or a list of objects with a
    ``joints`` array and a ``with_joints`` method (e.g. ``JointFrame``).
    Returns ``(poses', joints', transform)``.
    """
    poses = list(poses)
    if not poses:
        raise EmptyInputError("cannot canonicalize an empty sequence")
    tf = canonical_transform_for(poses[0])
    if tf.is_identity:
        return poses, joints, tf
    new_poses = [tf.apply_pose(p) for p in poses]
    if isinstance(joints, (list, tuple)) and joints and hasattr(joints[0], "with_joints"):
        new_joints = [jf.with_joints(tf.apply_points(jf.joints)) for jf in joints]
    else:
        new_joints = tf.apply_points(joints)
    return new_poses, new_joints, tf
