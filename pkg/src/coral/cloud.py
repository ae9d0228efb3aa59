"""Point clouds, rigid motions, voxel downsampling and joining."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import InvalidParameterError, InvalidTransformError

ORTHO_TOL = 1e-9


class Label(IntEnum):
    A = 0
    B = 1


def _as_points(points) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidParameterError(f"points must have shape (n, 3), got {pts.shape}")
    return pts


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: ``p -> R @ p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidTransformError("transform contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise InvalidTransformError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvalidTransformError("rotation determinant is not +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def about_z(cls, angle: float, pivot=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation by ``angle`` radians about the vertical axis through ``pivot``."""
        c, s = np.cos(angle), np.sin(angle)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pivot = np.asarray(pivot, dtype=np.float64)
        return cls(R, pivot - R @ pivot)

    @classmethod
    def translation_only(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable (n, 3) point array with a sensor origin and per-point source labels.

    A single scan carries one label for all its points; a joined cloud keeps
    the label each point came with.
    """

    points: np.ndarray
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    labels: np.ndarray | None = None
    label: Label = Label.A

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("points must be finite")
        origin = np.array(self.sensor_origin, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(origin)):
            raise InvalidParameterError("sensor_origin must be finite")
        if self.labels is None:
            labels = np.full(len(pts), int(self.label), dtype=np.uint8)
        else:
            labels = np.array(self.labels, dtype=np.uint8).reshape(-1)
            if len(labels) != len(pts):
                raise InvalidParameterError("labels length does not match points")
        if pts is self.points:
            pts = pts.copy()
        for a in (pts, origin, labels):
            a.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "sensor_origin", origin)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "label", Label(self.label))

    def __len__(self) -> int:
        return len(self.points)

    def with_label(self, label: Label) -> "PointCloud":
        return PointCloud(self.points, self.sensor_origin, label=label)


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Map every point and the sensor origin through ``t``."""
    if len(cloud) == 0:
        raise InvalidParameterError("cannot transform an empty cloud")
    return PointCloud(t.apply(cloud.points), t.apply(cloud.sensor_origin),
                      labels=cloud.labels, label=cloud.label)


def voxel_downsample(cloud: PointCloud, cell: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    The grid is anchored at the world origin; a point belongs to voxel
    ``floor(p / cell)``.  Output order follows the lexicographic voxel order.
    """
    if not cell > 0:
        raise InvalidParameterError("voxel cell must be > 0")
    if len(cloud) == 0:
        return cloud
    ijk = np.floor(cloud.points / cell).astype(np.int64)
    _, inverse, counts = np.unique(ijk, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    lo = np.full((len(counts), 3), np.inf)
    hi = np.full((len(counts), 3), -np.inf)
    np.minimum.at(lo, inverse, cloud.points)
    np.maximum.at(hi, inverse, cloud.points)
    # a rounded centroid may cross a cell face; the member bounding box cannot
    centroids = np.clip(sums / counts[:, None], lo, hi)
    return PointCloud(centroids, cloud.sensor_origin, label=cloud.label)


def join(a: PointCloud, b: PointCloud) -> PointCloud:
    """Concatenate two clouds without merging duplicates; labels travel with the points.

    The joint cloud keeps ``a``'s sensor origin; per-point origins are the
    caller's business.
    """
    return PointCloud(np.concatenate([a.points, b.points]), a.sensor_origin,
                      labels=np.concatenate([a.labels, b.labels]))
