"""Calibrated pinhole geometry: poses, projection, triangulation, pose errors.

Conventions used throughout the package:

* world-to-camera transform, ``x_cam = R @ x_world + t``,
* camera center ``c = -R.T @ t``,
* bearings are unit vectors in the camera frame with z > 0 for points
  in front of the camera,
* pixel coordinates are (x, y) with x along image columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Degeneracy guards, fixed for reproducibility.
PARALLEL_RAY_SIN = 1e-6          # two-view rays closer than ~1e-6 rad are unusable
RANK_DEFICIENT_SV_RATIO = 0.99   # multi-view DLT nullspace ambiguity threshold


@dataclass(frozen=True)
class CameraPose:
    """Rigid world-to-camera transform, x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "rotation",
            np.array(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(
            self, "translation",
            np.array(self.translation, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, c = -R.T @ t."""
        return -self.rotation.T @ self.translation

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Pose mapping x to self(other(x))."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation)

    def inverse(self) -> "CameraPose":
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map world point(s) of shape (3,) or (n, 3) into the camera frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(
            np.linalg.norm(r.T @ r - np.eye(3)) <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
            and np.all(np.isfinite(self.translation)))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image bounds")

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Bounds check for pixel coordinates of shape (..., 2)."""
        xy = np.asarray(xy)
        return ((xy[..., 0] >= 0) & (xy[..., 0] < self.width)
                & (xy[..., 1] >= 0) & (xy[..., 1] < self.height))


def normalized(v: np.ndarray) -> np.ndarray:
    """Unit vector(s) along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def project(pose: CameraPose, K: Intrinsics, point: np.ndarray):
    """Pixel of a world point, or None when the point is at or behind the camera."""
    xc = pose.rotation @ np.asarray(point, dtype=np.float64) + pose.translation
    if xc[2] <= 0.0:
        return None
    return np.array([K.fx * xc[0] / xc[2] + K.cx, K.fy * xc[1] / xc[2] + K.cy])


def project_many(pose: CameraPose, K: Intrinsics, points: np.ndarray):
    """Vectorized projection of (n, 3) world points.

    Returns (pixels (n, 2), in_front (n,) bool); pixels of behind-camera points
    are meaningless and masked out by in_front.
    """
    xc = pose.transform(points)
    z = xc[:, 2]
    in_front = z > 0.0
    zsafe = np.where(in_front, z, 1.0)
    pix = np.stack([K.fx * xc[:, 0] / zsafe + K.cx,
                    K.fy * xc[:, 1] / zsafe + K.cy], axis=1)
    return pix, in_front


def backproject(K: Intrinsics, pixel: np.ndarray) -> np.ndarray:
    """Unit bearing in the camera frame for a pixel."""
    pixel = np.asarray(pixel, dtype=np.float64)
    v = np.array([(pixel[0] - K.cx) / K.fx, (pixel[1] - K.cy) / K.fy, 1.0])
    return v / np.linalg.norm(v)


def backproject_many(K: Intrinsics, pixels: np.ndarray) -> np.ndarray:
    """Unit bearings for (n, 2) pixels."""
    pixels = np.asarray(pixels, dtype=np.float64)
    v = np.stack([(pixels[:, 0] - K.cx) / K.fx,
                  (pixels[:, 1] - K.cy) / K.fy,
                  np.ones(len(pixels))], axis=1)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def closest_ray_points(origin_a, dir_a, origin_b, dir_b):
    """Parameters (s, t) of the closest points on two unit-direction rays.

    Returns None when the rays are parallel within PARALLEL_RAY_SIN.
    """
    e = origin_b - origin_a
    b = float(dir_a @ dir_b)
    denom = 1.0 - b * b
    if denom < PARALLEL_RAY_SIN ** 2:
        return None
    da_e = float(dir_a @ e)
    db_e = float(dir_b @ e)
    s = (da_e - b * db_e) / denom
    t = b * s - db_e
    return s, t


def triangulate_two_view(pose_a: CameraPose, pose_b: CameraPose,
                         ray_a: np.ndarray, ray_b: np.ndarray):
    """Midpoint of the shortest segment between two world-space rays.

    Returns None (degenerate) for near-parallel rays or when either
    closest-point depth is non-positive.
    """
    oa, ob = pose_a.center, pose_b.center
    da = pose_a.rotation.T @ ray_a
    db = pose_b.rotation.T @ ray_b
    st = closest_ray_points(oa, da, ob, db)
    if st is None:
        return None
    s, t = st
    if s <= 0.0 or t <= 0.0:
        return None
    return 0.5 * ((oa + s * da) + (ob + t * db))


def triangulate_multiview(poses: list[CameraPose], rays: list[np.ndarray]):
    """Linear (DLT) triangulation from two or more posed bearings.

    Stacks the two independent rows of the cross-product constraint
    ray x (R X + t) = 0 per view and takes the smallest right singular
    vector. Returns None when the system is rank deficient (nearly equal
    two smallest singular values, i.e. no unique intersection) or when the
    solution violates cheirality in any view.
    """
    if len(poses) < 2 or len(poses) != len(rays):
        raise ValueError("need >= 2 posed rays")
    rows = []
    for pose, ray in zip(poses, rays):
        P = np.hstack([pose.rotation, pose.translation[:, None]])
        rows.append(ray[1] * P[2] - ray[2] * P[1])
        rows.append(ray[2] * P[0] - ray[0] * P[2])
    A = np.asarray(rows)
    _, s, vt = np.linalg.svd(A)
    if s[-2] <= 1e-12 * s[0] or s[-1] / s[-2] > RANK_DEFICIENT_SV_RATIO:
        return None
    X = vt[-1]
    if abs(X[3]) < 1e-12:
        return None
    X = X[:3] / X[3]
    for pose in poses:
        if pose.rotation[2] @ X + pose.translation[2] <= 0.0:
            return None
    return X


def triangulation_angle_deg(centers: np.ndarray, point: np.ndarray) -> float:
    """Largest angle subtended at the point by any pair of camera centers."""
    d = normalized(np.asarray(centers, dtype=np.float64) - point)
    cosines = np.clip(d @ d.T, -1.0, 1.0)
    return float(np.degrees(np.arccos(cosines.min())))


def position_error(est: CameraPose, gt: CameraPose) -> float:
    """Euclidean distance between camera centers."""
    return float(np.linalg.norm(est.center - gt.center))


def rotation_error_deg(est: CameraPose, gt: CameraPose) -> float:
    """Angle of the relative rotation, in degrees."""
    c = (np.trace(gt.rotation.T @ est.rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a scalar-first quaternion (normalized internally)."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_from_rotation(R: np.ndarray) -> np.ndarray:
    """Scalar-first unit quaternion for a rotation matrix, qw >= 0 canonical sign."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    q = q / np.linalg.norm(q)
    first_nonzero = q[np.nonzero(q)[0][0]]
    if first_nonzero < 0:
        q = -q
    return q


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]_x."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of an axis-angle vector."""
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)
