"""Camera models, disparity-spaced plane stacks, and plane homographies.

Conventions (used everywhere, tested in test_geometry):
  * world-to-camera pose: x_cam = R @ x_world + t
  * camera looks down +z, x right, y down (image convention)
  * pixel = (fx * x/z + cx, fy * y/z + cy)

``plane_homography(ref, tgt, depth)`` returns the inverse-warp map: it
takes *target*-image pixel coordinates to *reference*-image pixel
coordinates for points on the fronto-parallel plane z_ref = depth, so a
target view can be synthesized by sampling reference-space content.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image dims must be >= 1, got {self.width}x{self.height}")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def matrix_inv(self):
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def scaled(self, sx, sy):
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                          int(round(self.width * sx)), int(round(self.height * sy)))


def _check_rotation(R, tol=1e-6):
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err > tol:
        raise GeometryError(f"rotation not orthonormal (max deviation {err:.2e})")
    if np.linalg.det(R) < 0:
        raise GeometryError("rotation has negative determinant (reflection)")


def nearest_rotation(R):
    """Project a near-rotation onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    S = np.eye(3)
    S[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ S @ Vt


@dataclass(frozen=True)
class CameraView:
    intrinsics: Intrinsics
    rotation: np.ndarray = field(repr=False)       # 3x3 world-to-camera
    translation: np.ndarray = field(repr=False)    # camera coords of world origin

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64).reshape(3))
        if R.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {R.shape}")
        _check_rotation(R)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def same_view(self, other):
        return (self.intrinsics == other.intrinsics
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))


@dataclass(frozen=True)
class PlaneStack:
    """Plane depths in the reference frame, strictly increasing near to far."""

    depths: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        if d.size < 1 or d[0] <= 0 or np.any(np.diff(d) <= 0):
            raise GeometryError("plane depths must be positive and strictly increasing")
        if d.size >= 3:
            steps = np.diff(1.0 / d)
            spread = np.abs(steps - steps.mean()).max()
            if spread > 1e-6 * abs(steps.mean()) + 1e-12:
                raise GeometryError("plane disparities must be equally spaced")
        object.__setattr__(self, "depths", d)

    def __len__(self):
        return self.depths.size

    @property
    def count(self):
        return self.depths.size

    @property
    def disparities(self):
        return 1.0 / self.depths

    def nearest_plane(self, depth):
        """Index of the plane closest in disparity to the given depth."""
        return int(np.argmin(np.abs(self.disparities - 1.0 / depth)))


def disparity_depths(near, far, count):
    """Depths of `count` planes sampled uniformly in disparity on [near, far]."""
    if not 0 < near < far:
        raise GeometryError(f"need 0 < near < far, got near={near}, far={far}")
    if count < 2:
        raise GeometryError(f"need at least 2 planes, got {count}")
    i = np.arange(count, dtype=np.float64)
    disp = (1.0 / near) + (i / (count - 1)) * ((1.0 / far) - (1.0 / near))
    return PlaneStack(1.0 / disp)


def percentile_depth_range(point_depths, lo=2.0, hi=98.0, margin=0.05):
    """Near/far from sparse scene-point depths via robust percentiles.

    A small relative margin keeps the extreme points strictly inside the
    volume.  This stands in for a plane-range heuristic the source data
    pipeline would normally provide; the percentiles are configurable so
    a run's choice is always recorded.
    """
    d = np.asarray(point_depths, dtype=np.float64)
    d = d[d > 0]
    if d.size == 0:
        raise GeometryError("no positive point depths to derive near/far from")
    near = np.percentile(d, lo) * (1.0 - margin)
    far = np.percentile(d, hi) * (1.0 + margin)
    if near <= 0:
        near = d.min() * 0.5
    if far <= near:
        far = near * 2.0
    return float(near), float(far)


# -- projection ----------------------------------------------------------------

def project(cam, point):
    """Pinhole projection of a world point; returns ((u, v), depth).

    Points at or behind the camera plane (depth <= 0) raise.
    """
    p = cam.rotation @ np.asarray(point, dtype=np.float64).reshape(3) + cam.translation
    z = p[2]
    if z <= 0:
        raise GeometryError(f"point projects behind the camera (depth {z:.4g})")
    K = cam.intrinsics
    return np.array([K.fx * p[0] / z + K.cx, K.fy * p[1] / z + K.cy]), float(z)


def unproject(cam, pixel, depth):
    """World point seen at `pixel` with camera-space depth `depth`."""
    K = cam.intrinsics
    u, v = float(pixel[0]), float(pixel[1])
    pc = np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])
    return cam.rotation.T @ (pc - cam.translation)


# -- plane homographies ----------------------------------------------------------

def _forward_plane_matrix(ref, tgt, depth):
    # Maps ref-pixel homogeneous coords to tgt-pixel coords for the plane
    # z_ref = depth (fronto-parallel in ref).
    R_rel = tgt.rotation @ ref.rotation.T
    t_rel = tgt.translation - R_rel @ ref.translation
    M = R_rel.copy()
    M[:, 2] += t_rel / depth  # R_rel + t_rel @ n^T / d with n = ref +z
    return tgt.intrinsics.matrix @ M @ ref.intrinsics.matrix_inv


def plane_homography(ref, tgt, depth):
    """3x3 map from target pixels to reference pixels on plane z_ref = depth.

    Normalized so H[2,2] == 1.  Degenerate when the plane passes through
    the target camera center.
    """
    if depth <= 0:
        raise GeometryError(f"plane depth must be positive, got {depth}")
    fwd = _forward_plane_matrix(ref, tgt, depth)
    det = np.linalg.det(fwd)
    if abs(det) < 1e-12:
        raise GeometryError(
            f"degenerate plane homography at depth {depth} (plane passes through target camera)")
    H = np.linalg.inv(fwd)
    if abs(H[2, 2]) < 1e-15:
        raise GeometryError(f"homography cannot be normalized at depth {depth}")
    return H / H[2, 2]


def plane_homography_forward(ref, tgt, depth):
    """3x3 map from reference pixels to target pixels (inverse direction)."""
    if depth <= 0:
        raise GeometryError(f"plane depth must be positive, got {depth}")
    fwd = _forward_plane_matrix(ref, tgt, depth)
    if abs(fwd[2, 2]) < 1e-15:
        raise GeometryError(f"forward homography cannot be normalized at depth {depth}")
    return fwd / fwd[2, 2]


def stack_homographies(ref, tgt, planes):
    """Target->reference homographies for every plane, as one [D,3,3] array."""
    return np.stack([plane_homography(ref, tgt, d) for d in planes.depths])


def apply_homography(H, pts):
    """Apply a 3x3 homography to [N,2] pixel coordinates."""
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    q = ph @ np.asarray(H).T
    return q[:, :2] / q[:, 2:3]


# -- pose interpolation ----------------------------------------------------------

def rotation_to_quat(R):
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def quat_to_rotation(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_slerp(q0, q1, t):
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0:
        q1 = -q1
        dot = -dot
    if dot > 0.9995:
        q = q0 + t * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1


def interpolate_views(a, b, t):
    """Pose slerp + linear translation/intrinsics between two cameras."""
    q = quat_slerp(rotation_to_quat(a.rotation), rotation_to_quat(b.rotation), t)
    R = nearest_rotation(quat_to_rotation(q))
    trans = (1 - t) * a.translation + t * b.translation
    ia, ib = a.intrinsics, b.intrinsics
    intr = Intrinsics(
        (1 - t) * ia.fx + t * ib.fx, (1 - t) * ia.fy + t * ib.fy,
        (1 - t) * ia.cx + t * ib.cx, (1 - t) * ia.cy + t * ib.cy,
        ia.width, ia.height)
    return CameraView(intr, R, trans)
