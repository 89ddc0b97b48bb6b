"""Core geometry: camera poses, pinhole projection and pose-error metrics.

Conventions
- A pose stores the camera-to-world rotation q (unit quaternion, w first) and the camera
  center t in world coordinates (meters).
- World to camera: x_cam = R(q)^T (x - t); camera axes are x right, y down, z forward.
- Pixel (0,0) is the top-left pixel; a projection (u, v) lies in pixel (floor(u), floor(v)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

NEAR_PLANE = 0.1  # meters
IDENTITY_QUATERNION = (1.0, 0.0, 0.0, 0.0)


def canonicalQuaternion(q: np.ndarray) -> np.ndarray:
    """Normalize a (w,x,y,z) quaternion and flip it into the w >= 0 hemisphere.

    Args:
        q (np.ndarray): quaternion, scalar first

    Returns:
        np.ndarray: unit quaternion with w >= 0
    """
    q = np.asarray(q, dtype=float).reshape(4)
    norm = float(np.linalg.norm(q))
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError(f'Invalid quaternion {q.tolist()}')
    q = q / norm
    if q[0] < 0.0:
        q = -q
    return q


def rotationFromQuaternion(q: np.ndarray) -> Rotation:
    """Scipy rotation of a scalar-first quaternion."""
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


def quaternionFromRotation(rotation: Rotation) -> np.ndarray:
    """Scalar-first canonical quaternion of a scipy rotation."""
    x, y, z, w = rotation.as_quat()
    return canonicalQuaternion(np.array([w, x, y, z]))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """6-DoF camera pose p = [q, t]; camera-to-world rotation and camera center."""
    q: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.t, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f'Invalid translation {t.tolist()}')
        object.__setattr__(self, 'q', canonicalQuaternion(self.q))
        object.__setattr__(self, 't', t)
        self.q.setflags(write=False)
        self.t.setflags(write=False)

    @classmethod
    def identity(cls) -> CameraPose:
        """Pose at the world origin looking along the world z axis."""
        return cls(np.array(IDENTITY_QUATERNION), np.zeros(3))

    @classmethod
    def fromRotation(cls, rotation: Rotation, t: np.ndarray) -> CameraPose:
        """Build a pose from a scipy rotation and a camera center."""
        return cls(quaternionFromRotation(rotation), np.asarray(t, dtype=float))

    @property
    def rotation(self) -> Rotation:
        """Camera-to-world rotation."""
        return rotationFromQuaternion(self.q)

    @property
    def rotationMatrix(self) -> np.ndarray:
        """Camera-to-world rotation matrix R(q)."""
        return self.rotation.as_matrix()

    def worldToCamera(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (N,3) into the camera frame: R^T (x - t)."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return (points - self.t) @ self.rotationMatrix

    def cameraToWorld(self, points: np.ndarray) -> np.ndarray:
        """Transform camera-frame points (N,3) into the world: R x + t."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return points @ self.rotationMatrix.T + self.t

    def allClose(self, other: CameraPose, atol: float = 1e-9) -> bool:
        """True if both poses agree within atol in q and t."""
        return bool(np.allclose(self.q, other.q, atol=atol) and np.allclose(self.t, other.t, atol=atol))


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Pose correction p_hat = [q_hat, t_hat] applied onto a coarse pose."""
    q: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, 'q', canonicalQuaternion(self.q))
        object.__setattr__(self, 't', np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> RelativePose:
        """Correction that changes nothing."""
        return cls(np.array(IDENTITY_QUATERNION), np.zeros(3))

    @classmethod
    def fromRotation(cls, rotation: Rotation, t: np.ndarray) -> RelativePose:
        """Build a correction from a scipy rotation and a world-frame translation."""
        return cls(quaternionFromRotation(rotation), np.asarray(t, dtype=float))

    @property
    def rotation(self) -> Rotation:
        """Rotation part of the correction."""
        return rotationFromQuaternion(self.q)

    def inverse(self) -> RelativePose:
        """Correction undoing this one under composeCorrection."""
        return RelativePose.fromRotation(self.rotation.inv(), -self.t)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics and raster size; owns the projective function."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f'Focal lengths must be positive: fx={self.fx}, fy={self.fy}')
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f'Raster size must be positive: {self.width}x{self.height}')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f'Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} raster')

    @classmethod
    def fromString(cls, text: str) -> CameraModel:
        """Parse 'fx,fy,cx,cy,w,h' as used on the command line."""
        parts = [part.strip() for part in text.split(',')]
        if len(parts) != 6:
            raise ValueError(f"Camera must be 'fx,fy,cx,cy,w,h', got '{text}'")
        try:
            fx, fy, cx, cy = (float(part) for part in parts[:4])
            width, height = int(parts[4]), int(parts[5])
        except ValueError as e:
            raise ValueError(f"Camera must be 'fx,fy,cx,cy,w,h', got '{text}'") from e
        return cls(fx, fy, cx, cy, width, height)

    @property
    def K(self) -> np.ndarray:  # pylint: disable=invalid-name
        """3x3 intrinsic matrix."""
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        """Raster diagonal in pixels."""
        return math.hypot(self.width, self.height)

    def scaled(self, width: int, height: int) -> CameraModel:
        """Same field of view at another raster size."""
        sx, sy = width / self.width, height / self.height
        return CameraModel(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    def asString(self) -> str:
        """Inverse of fromString."""
        return f'{self.fx:g},{self.fy:g},{self.cx:g},{self.cy:g},{self.width},{self.height}'


def projectPoints(points: np.ndarray, pose: CameraPose, cam: CameraModel,
                  near: float = NEAR_PLANE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of world points.

    Args:
        points (np.ndarray): (N,3) world points
        pose (CameraPose): camera pose
        cam (CameraModel): intrinsics
        near (float): near plane in meters

    Returns:
        tuple: uv (N,2), depth (N,), valid (N,) boolean; uv/depth are meaningless where not valid
    """
    xCam = pose.worldToCamera(points)
    depth = xCam[:, 2]
    inFront = depth > near
    safeDepth = np.where(inFront, depth, 1.0)
    u = cam.fx * xCam[:, 0] / safeDepth + cam.cx
    v = cam.fy * xCam[:, 1] / safeDepth + cam.cy
    valid = inFront & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return np.column_stack([u, v]), depth, valid


def project(x: np.ndarray, pose: CameraPose, cam: CameraModel,
            near: float = NEAR_PLANE) -> Optional[tuple[float, float, float]]:
    """Project a single world point; None when behind the near plane or outside the raster.

    Args:
        x (np.ndarray): 3D point in the world frame
        pose (CameraPose): camera pose
        cam (CameraModel): intrinsics
        near (float): near plane in meters

    Returns:
        tuple: (u, v, depth) or None
    """
    uv, depth, valid = projectPoints(np.asarray(x, dtype=float).reshape(1, 3), pose, cam, near)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1]), float(depth[0])


def composeCorrection(coarse: CameraPose, delta: RelativePose) -> CameraPose:
    """Apply a correction: q = q_hat * q_coarse, t = t_coarse + t_hat (world frame)."""
    return CameraPose.fromRotation(delta.rotation * coarse.rotation, coarse.t + delta.t)


def rotationAngleDeg(a: CameraPose, b: CameraPose) -> float:
    """Relative rotation angle between two poses in degrees, in [0, 180]."""
    dot = min(1.0, abs(float(np.dot(a.q, b.q))))
    return math.degrees(2.0 * math.acos(dot))


def translationError(a: CameraPose, b: CameraPose) -> float:
    """Euclidean distance between camera centers in meters."""
    return float(np.linalg.norm(a.t - b.t))


PoseRecord = tuple[str, CameraPose]


def readPoses(path: Union[str, Path]) -> list[PoseRecord]:
    """Read a pose file: 'frame_id tx ty tz qw qx qy qz' per line, '#' comments.

    Args:
        path (str|Path): file to read

    Returns:
        list: (frame id, pose) in file order
    """
    records: list[PoseRecord] = []
    with open(path, encoding='utf-8') as fh:
        for lineNo, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f'{path}:{lineNo}: expected 8 fields, got {len(parts)}')
            try:
                values = [float(part) for part in parts[1:]]
                pose = CameraPose(np.array(values[3:]), np.array(values[:3]))
            except ValueError as e:
                raise ValueError(f'{path}:{lineNo}: {e}') from e
            records.append((parts[0], pose))
    return records


def writePoses(path: Union[str, Path], records: list[PoseRecord]) -> None:
    """Write a pose file in the format of readPoses (full double precision)."""
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write('# frame_id tx ty tz qw qx qy qz\n')
        for frameId, pose in records:
            values = ' '.join(f'{value:.17g}' for value in (*pose.t, *pose.q))
            fh.write(f'{frameId} {values}\n')
