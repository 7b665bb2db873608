"""Rigid poses, the pinhole camera and point clouds.

Camera frame convention: +z forward (optical axis), +x right, +y down.
Platform frame convention: +x forward, +y left, +z up.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

Z_MIN = 0.05  # near-plane cutoff for projection, meters
EDGE_TOL = 1e-9  # pixels; absorbs rounding when a point backprojected from u = 0 is re-projected


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``p_parent = R p_child + t``.

    ``rotation`` is a unit quaternion ``(w, x, y, z)``; it is normalized on
    construction and its sign fixed so that the first non-negligible
    component is positive (``q`` and ``-q`` are the same rotation).
    """

    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError("pose needs a 4-quaternion and a 3-translation")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose components must be finite")
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("zero quaternion")
        q = q / n
        lead = q[np.flatnonzero(np.abs(q) > 1e-12)[0]]
        if lead < 0:
            q = -q
        object.__setattr__(self, "rotation", tuple(float(v) for v in q))
        object.__setattr__(self, "translation", tuple(float(v) for v in t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, rot: np.ndarray, translation: Sequence[float]) -> "Pose":
        m = np.asarray(rot, dtype=float)
        tr = np.trace(m)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        return cls(tuple(q), tuple(translation))

    @classmethod
    def from_xyz_rpy(cls, x: float, y: float, z: float,
                     roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0) -> "Pose":
        """Build a pose from a position and Z-Y-X Euler angles in radians."""
        cr, sr = np.cos(roll / 2), np.sin(roll / 2)
        cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
        cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
        q = (
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
        return cls(q, (x, y, z))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        """Inverse of :meth:`to_list`: ``[qw, qx, qy, qz, tx, ty, tz]``."""
        if len(values) != 7:
            raise ValueError(f"pose list needs 7 numbers, got {len(values)}")
        return cls(tuple(values[:4]), tuple(values[4:]))

    def to_list(self) -> list:
        return list(self.rotation) + list(self.translation)

    @property
    def matrix(self) -> np.ndarray:
        return _quat_to_matrix(np.asarray(self.rotation))

    @property
    def yaw(self) -> float:
        m = self.matrix
        return float(np.arctan2(m[1, 0], m[0, 0]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + np.asarray(self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        q = _quat_mul(np.asarray(self.rotation), np.asarray(other.rotation))
        t = self.apply(np.asarray(other.translation))
        return Pose(tuple(q), tuple(t))

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation
        qi = Pose((w, -x, -y, -z))
        t = -qi.apply(np.asarray(self.translation))
        return Pose(qi.rotation, tuple(t))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        a, b = np.asarray(self.rotation), np.asarray(other.rotation)
        same_rot = (np.allclose(a, b, atol=atol, rtol=0) or np.allclose(a, -b, atol=atol, rtol=0))
        return same_rot and np.allclose(self.translation, other.translation, atol=atol, rtol=0)


def _default_extrinsic() -> Pose:
    # camera axes expressed in the platform frame: z_cam -> x, x_cam -> -y, y_cam -> -z
    rot = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    return Pose.from_matrix(rot, (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera without distortion (inputs are assumed rectified)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: Pose = field(default_factory=_default_extrinsic)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def mounted(cls, fx, fy, cx, cy, width, height, height_m=1.0, pitch=0.0) -> "CameraModel":
        """Camera at ``height_m`` above the platform origin, tilted down by ``pitch`` radians."""
        tilt = Pose.from_xyz_rpy(0.0, 0.0, height_m, pitch=pitch)
        return cls(fx, fy, cx, cy, width, height, tilt.compose(_default_extrinsic()))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "extrinsic": self.extrinsic.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        extr = Pose.from_list(d["extrinsic"]) if "extrinsic" in d else _default_extrinsic()
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), extr)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``points`` is ``(N, 3)`` float; ``pixels`` is an optional ``(N, 2)`` int array of (row, col)."""

    points: np.ndarray
    pixels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.pixels is not None:
            px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
            if len(px) != len(pts):
                raise ValueError("pixel index count differs from point count")
            object.__setattr__(self, "pixels", px)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if (self.pixels is None) != (other.pixels is None):
            return False
        same_px = self.pixels is None or np.array_equal(self.pixels, other.pixels)
        return same_px and np.array_equal(self.points, other.points)

    def pixels_within(self, width: int, height: int) -> bool:
        if self.pixels is None or len(self.pixels) == 0:
            return True
        r, c = self.pixels[:, 0], self.pixels[:, 1]
        return bool(np.all((r >= 0) & (r < height) & (c >= 0) & (c < width)))


def project(point, cam: CameraModel) -> Optional[Tuple[float, float]]:
    """Project a camera-frame point to ``(u, v)``; ``None`` if behind the near plane or off-image."""
    x, y, z = (float(v) for v in point)
    if not z > Z_MIN:
        return None
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    if not (-EDGE_TOL <= u < cam.width and -EDGE_TOL <= v < cam.height):
        return None
    return u, v


def project_many(points: np.ndarray, cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`project`. Returns ``(uv, valid)``; invalid rows of ``uv`` are NaN."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > Z_MIN
    uv = np.full((len(pts), 2), np.nan)
    zs = z[valid]
    uv[valid, 0] = cam.fx * pts[valid, 0] / zs + cam.cx
    uv[valid, 1] = cam.fy * pts[valid, 1] / zs + cam.cy
    with np.errstate(invalid="ignore"):
        inside = ((uv[:, 0] >= -EDGE_TOL) & (uv[:, 0] < cam.width)
                  & (uv[:, 1] >= -EDGE_TOL) & (uv[:, 1] < cam.height))
    valid &= inside
    uv[~valid] = np.nan
    return uv, valid


def backproject(u: float, v: float, depth: float, cam: CameraModel) -> np.ndarray:
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    return np.array([(u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, float(depth)])


def backproject_many(uv: np.ndarray, depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    d = np.asarray(depth, dtype=float).reshape(-1)
    if np.any(~(d > 0)):
        raise ValueError("depth must be positive")
    return np.column_stack([(uv[:, 0] - cam.cx) * d / cam.fx, (uv[:, 1] - cam.cy) * d / cam.fy, d])


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    return PointCloud(pose.apply(cloud.points), cloud.pixels)


def sensor_to_world(pose: Pose, cam: CameraModel) -> Pose:
    """World pose of the camera given the platform pose."""
    return pose.compose(cam.extrinsic)
