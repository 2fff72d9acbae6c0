"""Core 3D/2D types and projection primitives.

World frame convention: Z up, trachea longitudinal axis along +Y, cut travel
along X. All lengths in millimeters. Camera frame follows the usual computer
vision convention (+X right, +Y down, +Z forward); depth images store the
camera-frame Z coordinate per pixel, 0 meaning invalid / no return.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation

# Point-cloud / label-image class ids.
CLASS_BACKGROUND = 0
CLASS_TRACHEA = 1
CLASS_TUMOR = 2
CLASS_CHAR = 3

CLASS_NAMES = {
    CLASS_BACKGROUND: "background",
    CLASS_TRACHEA: "trachea",
    CLASS_TUMOR: "tumor",
    CLASS_CHAR: "char",
}
CLASS_IDS = {name: cid for cid, name in CLASS_NAMES.items()}


@dataclass(frozen=True)
class Point3:
    """A point in millimeters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y) and np.isfinite(self.z)):
            raise ContractViolation(f"non-finite point ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


class PointCloud:
    """Ordered list of 3D points with an optional per-point class label.

    Stored as an (N, 3) float64 array plus an optional (N,) uint8 label array
    using the CLASS_* ids.
    """

    def __init__(self, points, labels=None):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ContractViolation("point cloud contains non-finite coordinates")
        self.points = pts
        if labels is not None:
            labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
            if labels.shape[0] != pts.shape[0]:
                raise ContractViolation(
                    f"labels length {labels.shape[0]} != point count {pts.shape[0]}"
                )
        self.labels = labels

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if not np.array_equal(self.points, other.points):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def select(self, mask) -> "PointCloud":
        mask = np.asarray(mask, dtype=bool)
        labels = self.labels[mask] if self.labels is not None else None
        return PointCloud(self.points[mask], labels)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    f_x: float
    f_y: float
    c_x: float
    c_y: float

    def __post_init__(self):
        if self.f_x <= 0 or self.f_y <= 0:
            raise ContractViolation("focal lengths must be positive")


class DepthImage:
    """Row-major per-pixel depth in millimeters; 0 marks an invalid pixel."""

    def __init__(self, width: int, height: int, depth):
        grid = np.asarray(depth, dtype=float).reshape(height, width)
        if not np.all(np.isfinite(grid)):
            raise ContractViolation("depth image contains non-finite values")
        if np.any(grid < 0):
            raise ContractViolation("depth values must be >= 0")
        self.width = int(width)
        self.height = int(height)
        self.depth = grid

    @classmethod
    def from_grid(cls, grid) -> "DepthImage":
        grid = np.asarray(grid, dtype=float)
        return cls(grid.shape[1], grid.shape[0], grid)


class BinaryMask:
    """Row-major boolean pixel mask paired with an image of the same size."""

    def __init__(self, width: int, height: int, bits):
        grid = np.asarray(bits, dtype=bool).reshape(height, width)
        self.width = int(width)
        self.height = int(height)
        self.bits = grid

    @classmethod
    def from_grid(cls, grid) -> "BinaryMask":
        grid = np.asarray(grid, dtype=bool)
        return cls(grid.shape[1], grid.shape[0], grid)

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.ones((height, width), dtype=bool))


class RigidTransform:
    """Rotation + translation; rotation must be orthonormal with det +1."""

    _TOL = 1e-9

    def __init__(self, rotation, translation):
        R = np.asarray(rotation, dtype=float).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=self._TOL):
            raise ContractViolation("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ContractViolation("rotation determinant is not +1")
        self.rotation = R
        if isinstance(translation, Point3):
            translation = translation.as_array()
        self.translation = np.asarray(translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def translation_only(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Returns self ∘ other: apply `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass
class BoundingBox2D:
    """Axis-aligned pixel box with a class name and a classification score."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float
    cls: str
    cls_score: float
    source: str = "auto"

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ContractViolation(
                f"degenerate box ({self.u_min},{self.v_min})-({self.u_max},{self.v_max})"
            )
        if not 0.0 <= self.cls_score <= 1.0:
            raise ContractViolation(f"cls_score {self.cls_score} outside [0,1]")
        if self.cls not in ("trachea", "tumor"):
            raise ContractViolation(f"unknown box class {self.cls!r}")

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)

    def to_dict(self) -> dict:
        return {
            "class": self.cls,
            "u_min": self.u_min,
            "v_min": self.v_min,
            "u_max": self.u_max,
            "v_max": self.v_max,
            "cls_score": self.cls_score,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox2D":
        return cls(
            u_min=d["u_min"],
            v_min=d["v_min"],
            u_max=d["u_max"],
            v_max=d["v_max"],
            cls=d["class"],
            cls_score=d.get("cls_score", 1.0),
            source=d.get("source", "auto"),
        )


def project_depth_to_cloud(
    depth: DepthImage, mask: BinaryMask, intrinsics: CameraIntrinsics
) -> PointCloud:
    """Project masked depth pixels to a camera-frame point cloud.

    X = (u - c_x) * Z / f_x, Y = (v - c_y) * Z / f_y, Z = depth. One point per
    masked pixel with depth > 0, in row-major scan order.
    """
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise ContractViolation(
            f"mask {mask.width}x{mask.height} does not match depth "
            f"{depth.width}x{depth.height}"
        )
    valid = mask.bits & (depth.depth > 0)
    v_idx, u_idx = np.nonzero(valid)
    z = depth.depth[v_idx, u_idx]
    x = (u_idx - intrinsics.c_x) * z / intrinsics.f_x
    y = (v_idx - intrinsics.c_y) * z / intrinsics.f_y
    return PointCloud(np.column_stack([x, y, z]))


def transform_cloud(cloud: PointCloud, pose: RigidTransform) -> PointCloud:
    """Map each point p to R @ p + t, preserving labels and order."""
    return PointCloud(pose.apply(cloud.points), cloud.labels)


def bbox_iou(a: BoundingBox2D, b: BoundingBox2D) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def subtract_cloud(base: PointCloud, removal: PointCloud, radius: float) -> PointCloud:
    """Keep base points farther than `radius` from every removal point."""
    if radius <= 0:
        raise ContractViolation(f"subtraction radius must be > 0, got {radius}")
    if len(removal) == 0 or len(base) == 0:
        return PointCloud(base.points.copy(), None if base.labels is None else base.labels.copy())
    tree = cKDTree(removal.points)
    dist, _ = tree.query(base.points, k=1)
    return base.select(dist > radius)
