"""Geometric substrate: vectors, quaternions, oriented boxes, box IoU, chamfer distance.

All types are immutable values; every function here is pure and thread-safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPointSet

# Degenerate (planar/collinear) point sets get extents floored here so that
# downstream volumes and IoUs stay finite.
EXTENT_FLOOR = 1e-6

# Default per-axis resolution of the sampled IoU estimator. Exposed as a knob
# because the conflict-score IoU has no canonical resolution; 32 keeps the
# estimate deterministic and within 0.02 of closed forms on box benchmarks.
DEFAULT_IOU_GRID = 32

_QUAT_IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class Vec3:
    """A 3D point or vector in model units."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise ValueError(f"Vec3 components must be finite, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Vec3":
        a = np.asarray(a, dtype=np.float64)
        return Vec3(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion with canonical sign (w >= 0); normalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(n) or n < 1e-12:
            raise ValueError("quaternion norm too small to normalize")
        w, x, y, z = self.w / n, self.x / n, self.y / n, self.z / n
        if w < 0.0:
            w, x, y, z = -w, -x, -y, -z
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    def is_identity(self, tol: float = _QUAT_IDENTITY_TOL) -> bool:
        return abs(self.w - 1.0) <= tol

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def rotation_matrix(self) -> np.ndarray:
        """3x3 rotation matrix whose columns are the rotated frame axes."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )

    @staticmethod
    def from_matrix(m) -> "UnitQuaternion":
        """Quaternion of a (right-handed) rotation matrix, Shepperd's method."""
        m = np.asarray(m, dtype=np.float64)
        t = np.trace(m)
        if t > 0:
            s = math.sqrt(t + 1.0) * 2
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return UnitQuaternion(w, x, y, z)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "UnitQuaternion":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        h = angle / 2.0
        s = math.sin(h)
        return UnitQuaternion(math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s)


_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [-1, -1, +1],
        [-1, +1, -1],
        [-1, +1, +1],
        [+1, -1, -1],
        [+1, -1, +1],
        [+1, +1, -1],
        [+1, +1, +1],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class OrientedBox:
    """Oriented bounding box: center translation, full extents, rotation."""

    translation: Vec3
    scale: Vec3
    rotation: UnitQuaternion

    def __post_init__(self):
        s = self.scale
        for v in (s.x, s.y, s.z):
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"box extents must be strictly positive, got {v!r}")

    def volume(self) -> float:
        s = self.scale
        return s.x * s.y * s.z

    def corners(self) -> np.ndarray:
        """The 8 corner points, shape (8, 3)."""
        half = self.scale.as_array() / 2.0
        r = self.rotation.rotation_matrix()
        return self.translation.as_array() + (_CORNER_SIGNS * half) @ r.T

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        half = np.abs(self.rotation.rotation_matrix()) @ (self.scale.as_array() / 2.0)
        t = self.translation.as_array()
        return t - half, t + half

    def contains(self, points: np.ndarray, eps: float = 1e-12) -> np.ndarray:
        """Boolean mask of points inside the (closed) box."""
        pts = np.asarray(points, dtype=np.float64)
        local = (pts - self.translation.as_array()) @ self.rotation.rotation_matrix()
        half = self.scale.as_array() / 2.0
        return np.all(np.abs(local) <= half + eps, axis=1)


def as_points(points) -> np.ndarray:
    """Coerce a point collection (Nx3 array or iterable of Vec3) to float64 (N,3)."""
    if isinstance(points, np.ndarray):
        pts = points.astype(np.float64, copy=False)
    else:
        seq = list(points)
        if seq and isinstance(seq[0], Vec3):
            pts = np.array([[p.x, p.y, p.z] for p in seq], dtype=np.float64)
        else:
            pts = np.asarray(seq, dtype=np.float64)
    if pts.size == 0:
        raise EmptyPointSet("need at least one point")
    pts = pts.reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _fix_axis_signs(axes: np.ndarray) -> np.ndarray:
    """Canonical eigenvector signs: nonnegative dot with (1,1,1), ties toward +x."""
    axes = axes.copy()
    for k in range(3):
        col = axes[:, k]
        s = col.sum()
        if abs(s) < 1e-12:
            s = col[0]
        if abs(s) < 1e-12:
            s = col[1]
        if abs(s) < 1e-12:
            s = col[2]
        if s < 0:
            axes[:, k] = -col
    return axes


def pca_obb(points) -> OrientedBox:
    """Principal-component oriented bounding box of a point set.

    Axes are covariance eigenvectors ordered by descending eigenvalue with a
    canonical sign convention; the frame is made right-handed by flipping the
    last axis if needed. Extents are the max-min span of the projections,
    floored at EXTENT_FLOOR, and the center is placed so the box covers every
    input point.
    """
    pts = as_points(points)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    axes = _fix_axis_signs(eigvecs[:, order])
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]
    proj = centered @ axes
    mins = proj.min(axis=0)
    maxs = proj.max(axis=0)
    extents = np.maximum(maxs - mins, EXTENT_FLOOR)
    center = centroid + axes @ ((mins + maxs) / 2.0)
    return OrientedBox(Vec3.from_array(center), Vec3.from_array(extents), UnitQuaternion.from_matrix(axes))


def _aligned_volume_overlap(a: OrientedBox, b: OrientedBox) -> float:
    amin = a.translation.as_array() - a.scale.as_array() / 2
    amax = a.translation.as_array() + a.scale.as_array() / 2
    bmin = b.translation.as_array() - b.scale.as_array() / 2
    bmax = b.translation.as_array() + b.scale.as_array() / 2
    span = np.minimum(amax, bmax) - np.maximum(amin, bmin)
    if np.any(span <= 0):
        return 0.0
    return float(np.prod(span))


_UNIT_GRIDS: dict = {}


def _grid_centers(lo: np.ndarray, hi: np.ndarray, grid: int) -> np.ndarray:
    unit = _UNIT_GRIDS.get(grid)
    if unit is None:
        ax = (np.arange(grid) + 0.5) / grid
        gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
        unit = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        _UNIT_GRIDS[grid] = unit
    return lo + unit * (hi - lo)


def _count_inside_both(pts: np.ndarray, a: OrientedBox, b: OrientedBox) -> int:
    """Points inside both boxes, filtering axis by axis to shrink the set."""
    sub = pts
    for box in (a, b):
        if sub.shape[0] == 0:
            return 0
        t = box.translation.as_array()
        rot = box.rotation.rotation_matrix()
        half = box.scale.as_array() / 2.0
        shifted = sub - t
        for k in range(3):
            proj = shifted @ rot[:, k]
            keep = np.abs(proj) <= half[k] + 1e-12
            shifted = shifted[keep]
            if shifted.shape[0] == 0:
                return 0
        sub = shifted + t
    return sub.shape[0]


def box_iou(a: OrientedBox, b: OrientedBox, grid: int = DEFAULT_IOU_GRID) -> float:
    """Intersection-over-union of two oriented boxes, in [0, 1].

    Axis-aligned pairs (both rotations identity) use the exact closed form.
    The general case estimates the intersection volume by classifying a
    deterministic grid^3 lattice of cell centers spanning the overlap of the
    two boxes' AABBs; box volumes are analytic, so only the intersection is
    sampled. Symmetric in its arguments and reproducible for a fixed grid.
    """
    if a == b:
        return 1.0
    va = a.volume()
    vb = b.volume()
    if a.rotation.is_identity() and b.rotation.is_identity():
        inter = _aligned_volume_overlap(a, b)
        return inter / (va + vb - inter)
    alo, ahi = a.aabb()
    blo, bhi = b.aabb()
    lo = np.maximum(alo, blo)
    hi = np.minimum(ahi, bhi)
    if np.any(hi <= lo):
        return 0.0
    pts = _grid_centers(lo, hi, grid)
    inter = _count_inside_both(pts, a, b) / pts.shape[0] * float(np.prod(hi - lo))
    if inter <= 0.0:
        return 0.0
    return float(min(1.0, inter / (va + vb - inter)))


def box_gap(a: OrientedBox, b: OrientedBox) -> float:
    """Separation distance between two boxes (0 when they touch or overlap).

    Largest separating-axis distance over the 15 SAT directions; exact for
    face-parallel configurations, a lower bound in general.
    """
    ra = a.rotation.rotation_matrix()
    rb = b.rotation.rotation_matrix()
    axes = [ra[:, k] for k in range(3)] + [rb[:, k] for k in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(ra[:, i], rb[:, j])
            n = np.linalg.norm(c)
            if n > 1e-9:
                axes.append(c / n)
    d = a.translation.as_array() - b.translation.as_array()
    ha = a.scale.as_array() / 2
    hb = b.scale.as_array() / 2
    best = 0.0
    for u in axes:
        proj_a = np.abs(u @ ra) @ ha
        proj_b = np.abs(u @ rb) @ hb
        sep = abs(float(u @ d)) - float(proj_a + proj_b)
        if sep > best:
            best = sep
    return best


def _directed_sq(src: np.ndarray, dst: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(src.shape[0], dtype=np.float64)
    for start in range(0, src.shape[0], chunk):
        block = src[start : start + chunk]
        d2 = ((block[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = d2.min(axis=1)
    return out


def chamfer_sq(a, b) -> float:
    """Squared chamfer distance: both directed mean squared nearest distances."""
    pa = as_points(a)
    pb = as_points(b)
    return float(np.mean(_directed_sq(pa, pb)) + np.mean(_directed_sq(pb, pa)))
