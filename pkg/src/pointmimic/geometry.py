"""Pinhole cameras, DLT triangulation, rigid registration, and SE(3) algebra.

Conventions:
  - World frame is the robot base frame, right-handed, z up, units in meters.
  - Camera frame follows computer vision convention: x right, y down,
    z forward along the optical axis.
  - Extrinsics map world coordinates to camera coordinates.
  - Quaternions are stored scalar-first (w, x, y, z) with w >= 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateGeometry,
    DepthNonPositive,
    NonUnitInput,
)

ROTATION_TOL = 1e-9
QUAT_NORM_TOL = 1e-6
COLLINEARITY_RTOL = 1e-8


def _as_vector(x, size: int, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} must be finite")
    return v


def _as_points(x, name: str) -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} must be finite")
    return pts


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.isfinite(r).all():
        raise ValueError("rotation must be finite")
    if not np.allclose(r.T @ r, np.eye(3), atol=ROTATION_TOL, rtol=0.0):
        raise ValueError("rotation is not orthonormal within tolerance")
    if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
        raise ValueError("rotation has determinant != +1 (improper rotation)")
    return r


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def canonicalize_quaternion(q) -> np.ndarray:
    """Return q with w >= 0 (sign of the first nonzero component if w == 0)."""
    q = _as_vector(q, 4, "quaternion")
    for component in q:
        if component != 0.0:
            return -q if component < 0.0 else q
    raise ValueError("zero quaternion cannot be canonicalized")


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b, canonicalized."""
    aw, ax, ay, az = _as_vector(a, 4, "quaternion a")
    bw, bx, by, bz = _as_vector(b, 4, "quaternion b")
    out = np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])
    return canonicalize_quaternion(out)


def quat_conjugate(q) -> np.ndarray:
    q = _as_vector(q, 4, "quaternion")
    return canonicalize_quaternion(np.array([q[0], -q[1], -q[2], -q[3]]))


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix for a unit quaternion (w, x, y, z)."""
    q = _as_vector(q, 4, "quaternion")
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise NonUnitInput(f"quaternion norm {norm:.9f} deviates from 1 beyond {QUAT_NORM_TOL}")
    w, x, y, z = q / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(rotation) -> np.ndarray:
    """Unit quaternion (w >= 0) for a rotation matrix, via the max-trace branch."""
    r = _check_rotation(rotation)
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    if trace > max(r[0, 0], r[1, 1], r[2, 2]):
        s = 2.0 * np.sqrt(1.0 + trace)
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax([r[0, 0], r[1, 1], r[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k])
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return canonicalize_quaternion(q / np.linalg.norm(q))


def quat_rotate(q, point) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    return quat_to_matrix(q) @ _as_vector(point, 3, "point")


def quat_angle(a, b) -> float:
    """Geodesic distance in radians between two unit quaternions."""
    qa = _as_vector(a, 4, "quaternion a")
    qb = _as_vector(b, 4, "quaternion b")
    dot = np.clip(abs(float(qa @ qb)) / (np.linalg.norm(qa) * np.linalg.norm(qb)), -1.0, 1.0)
    return 2.0 * float(np.arccos(dot))


def identity_quaternion() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# rigid transforms and poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vector(self.translation, 3, "translation"))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a stack of points (n, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape == (3,):
            return self.rotation @ pts + self.translation
        return _as_points(pts, "points") @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True, eq=False)
class Pose:
    """End-effector pose: position in meters plus a unit quaternion orientation."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vector(self.position, 3, "position"))
        q = _as_vector(self.orientation, 4, "orientation")
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise NonUnitInput(f"pose orientation norm {norm:.9f} deviates from 1")
        object.__setattr__(self, "orientation", canonicalize_quaternion(q / norm))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), identity_quaternion())

    @classmethod
    def from_transform(cls, transform: RigidTransform) -> "Pose":
        return cls(transform.translation, matrix_to_quat(transform.rotation))

    def as_transform(self) -> RigidTransform:
        return RigidTransform(quat_to_matrix(self.orientation), self.position)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.position + self.position,
                    quat_multiply(self.orientation, other.orientation))

    def inverse(self) -> "Pose":
        q_inv = quat_conjugate(self.orientation)
        return Pose(-(quat_to_matrix(q_inv) @ self.position), q_inv)


def compose(a, b):
    """Group composition of two RigidTransforms or two Poses."""
    if isinstance(a, RigidTransform) and isinstance(b, RigidTransform):
        return a.compose(b)
    if isinstance(a, Pose) and isinstance(b, Pose):
        return a.compose(b)
    raise TypeError(f"cannot compose {type(a).__name__} with {type(b).__name__}")


def invert(a):
    """Group inverse of a RigidTransform or Pose."""
    if isinstance(a, (RigidTransform, Pose)):
        return a.inverse()
    raise TypeError(f"cannot invert {type(a).__name__}")


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

def intrinsics_matrix(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Calibrated pinhole view: intrinsics in pixels, extrinsics world->camera."""

    intrinsics: np.ndarray
    extrinsics: RigidTransform
    name: str = field(default="cam", compare=False)

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {k.shape}")
        if not np.isfinite(k).all():
            raise ValueError("intrinsics must be finite")
        lower = np.array([k[1, 0], k[2, 0], k[2, 1]])
        if np.any(lower != 0.0):
            raise ValueError("intrinsics must be upper triangular")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise ValueError("focal entries must be strictly positive")
        if abs(k[2, 2] - 1.0) > 1e-12:
            raise ValueError("intrinsics[2, 2] must equal 1")
        object.__setattr__(self, "intrinsics", k)

    @property
    def projection(self) -> np.ndarray:
        """3x4 projection matrix intrinsics @ [R | t]."""
        rt = np.hstack([self.extrinsics.rotation, self.extrinsics.translation[:, None]])
        return self.intrinsics @ rt

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.extrinsics.rotation.T @ self.extrinsics.translation

    @classmethod
    def look_at(cls, position, target, intrinsics, name: str = "cam") -> "CameraModel":
        """Camera at `position` with the optical axis through `target`, z-up world."""
        position = _as_vector(position, 3, "position")
        target = _as_vector(target, 3, "target")
        forward = target - position
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValueError("camera position and target coincide")
        z = forward / norm
        up = np.array([0.0, 0.0, 1.0])
        x = np.cross(z, up)
        xn = np.linalg.norm(x)
        if xn < 1e-12:
            raise ValueError("viewing direction parallel to the up axis")
        x = x / xn
        y = np.cross(z, x)
        rotation = np.stack([x, y, z])
        return cls(np.asarray(intrinsics, dtype=np.float64),
                   RigidTransform(rotation, -rotation @ position), name=name)

    def to_mapping(self) -> dict:
        """Plain-data form used by the structured camera config."""
        return {
            "intrinsics": [float(v) for v in self.intrinsics.reshape(-1)],
            "extrinsics": {
                "quaternion": [float(v) for v in matrix_to_quat(self.extrinsics.rotation)],
                "translation": [float(v) for v in self.extrinsics.translation],
            },
        }

    @classmethod
    def from_mapping(cls, mapping: dict, name: str = "cam") -> "CameraModel":
        """Inverse of to_mapping: row-major intrinsics, quaternion (w,x,y,z) + translation."""
        k = np.asarray(mapping["intrinsics"], dtype=np.float64).reshape(3, 3)
        ext = mapping["extrinsics"]
        rotation = quat_to_matrix(np.asarray(ext["quaternion"], dtype=np.float64))
        translation = np.asarray(ext["translation"], dtype=np.float64)
        return cls(k, RigidTransform(rotation, translation), name=name)


def project(camera: CameraModel, point) -> np.ndarray:
    """Project a world point to pixel coordinates.

    Raises DepthNonPositive if the point is at or behind the camera plane.
    """
    x = _as_vector(point, 3, "point")
    cam = camera.extrinsics.apply(x)
    if cam[2] <= 0.0:
        raise DepthNonPositive(f"point has non-positive depth {cam[2]:.6g} in camera frame")
    uvw = camera.intrinsics @ cam
    return uvw[:2] / uvw[2]


# ---------------------------------------------------------------------------
# triangulation
# ---------------------------------------------------------------------------

def _conditioning_transform(intrinsics: np.ndarray) -> np.ndarray:
    # Shift the principal point to the origin and scale by the mean focal
    # length. With one observation per view the classic per-image point-set
    # normalization is undefined, so condition from the intrinsics instead.
    scale = 0.5 * (intrinsics[0, 0] + intrinsics[1, 1])
    cx, cy = intrinsics[0, 2], intrinsics[1, 2]
    return np.array([
        [1.0 / scale, 0.0, -cx / scale],
        [0.0, 1.0 / scale, -cy / scale],
        [0.0, 0.0, 1.0],
    ])


def triangulate_dlt(observations) -> np.ndarray:
    """Triangulate one 3D point from two or more pixel observations.

    Each observation is a (CameraModel, pixel) pair. Builds the standard
    two-rows-per-view homogeneous system, conditions it per view, and solves
    for the right singular vector of the smallest singular value.

    Raises DegenerateGeometry when camera centers coincide or the stacked
    system is rank-deficient beyond tolerance.
    """
    observations = list(observations)
    if len(observations) < 2:
        raise ValueError(f"triangulation needs at least 2 views, got {len(observations)}")

    centers = np.stack([cam.center for cam, _ in observations])
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if np.linalg.norm(centers[i] - centers[j]) < 1e-9:
                raise DegenerateGeometry(f"camera centers {i} and {j} coincide (zero baseline)")

    rows = []
    for cam, pixel in observations:
        uv = _as_vector(pixel, 2, "pixel")
        t = _conditioning_transform(cam.intrinsics)
        p = t @ cam.projection
        u, v, _ = t @ np.array([uv[0], uv[1], 1.0])
        rows.append(u * p[2] - p[0])
        rows.append(v * p[2] - p[1])
    a = np.stack(rows)

    _, singular, vt = np.linalg.svd(a)
    if singular[-2] < COLLINEARITY_RTOL * singular[0]:
        raise DegenerateGeometry("triangulation system is rank-deficient")
    x = vt[-1]
    if abs(x[3]) < 1e-12 * np.linalg.norm(x):
        raise DegenerateGeometry("triangulated point lies at infinity")
    return x[:3] / x[3]


# ---------------------------------------------------------------------------
# rigid registration
# ---------------------------------------------------------------------------

def estimate_rigid_transform(src, dst) -> RigidTransform:
    """Least-squares rigid fit (rotation + translation, no scale) mapping src to dst.

    Kabsch algorithm: centroid alignment, SVD of the cross-covariance, and a
    reflection correction so the result is always a proper rotation.

    Raises DegenerateConfiguration if the source points are collinear.
    """
    src = _as_points(src, "src")
    dst = _as_points(dst, "dst")
    if src.shape != dst.shape:
        raise ValueError(f"point sets must match, got {src.shape} vs {dst.shape}")
    if src.shape[0] < 3:
        raise ValueError(f"registration needs at least 3 points, got {src.shape[0]}")

    centroid_src = src.mean(axis=0)
    centroid_dst = dst.mean(axis=0)
    src_centered = src - centroid_src
    dst_centered = dst - centroid_dst

    # Collinear iff the centered source has rank < 2.
    spread = np.linalg.svd(src_centered, compute_uv=False)
    if spread[1] < COLLINEARITY_RTOL * spread[0]:
        raise DegenerateConfiguration("source points are collinear within tolerance")

    h = src_centered.T @ dst_centered
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = centroid_dst - rotation @ centroid_src
    return RigidTransform(rotation, translation)


def registration_residual(transform: RigidTransform, src, dst) -> float:
    """Root-mean-square distance between transform(src) and dst."""
    src = _as_points(src, "src")
    dst = _as_points(dst, "dst")
    diff = transform.apply(src) - dst
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
