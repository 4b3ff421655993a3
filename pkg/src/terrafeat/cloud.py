"""Columnar point-cloud data model, bounding boxes, and voxel subsampling.

A :class:`PointCloud` stores one array per attribute (positions, colors,
labels, named scalar feature columns) so that feature computations can
stream a single attribute over tens of millions of points.  Clouds are
treated as immutable: every operation returns a new cloud that shares
the unchanged columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LABEL_COLUMN = "class"
UNLABELED = 255


@dataclass
class PointCloud:
    """Columnar point cloud.

    Attributes:
        positions: (N, 3) float64 xyz in meters.
        colors: optional (N, 3) uint8 RGB.
        labels: optional (N,) uint8 class ids, 255 meaning unlabeled.
        features: ordered mapping of feature name to (N,) float32 column.
    """

    positions: np.ndarray
    colors: np.ndarray | None = None
    labels: np.ndarray | None = None
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (N, 3)")
        n = len(self.positions)
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8)
            if self.colors.shape != (n, 3):
                raise ValueError("colors must have shape (N, 3)")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
            if self.labels.shape != (n,):
                raise ValueError("labels must have shape (N,)")
        clean = {}
        for name, col in self.features.items():
            if not name:
                raise ValueError("feature names must be nonempty")
            col = np.ascontiguousarray(col, dtype=np.float32)
            if col.shape != (n,):
                raise ValueError(f"feature {name!r} must have shape (N,)")
            clean[name] = col
        self.features = clean

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def x(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.positions[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.positions[:, 2]

    def with_feature(self, name: str, values: np.ndarray) -> "PointCloud":
        """Return a new cloud with `values` stored under feature `name`.

        An existing column of the same name is replaced; the caller is
        expected to warn if that matters.
        """
        feats = dict(self.features)
        feats[name] = np.ascontiguousarray(values, dtype=np.float32)
        return PointCloud(self.positions, self.colors, self.labels, feats)

    def select(self, indices: np.ndarray) -> "PointCloud":
        """Return a new cloud containing the rows of `indices`, in order."""
        return PointCloud(
            self.positions[indices],
            None if self.colors is None else self.colors[indices],
            None if self.labels is None else self.labels[indices],
            {k: v[indices] for k, v in self.features.items()},
        )


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with componentwise min <= max."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError("bounding box must satisfy min <= max componentwise")


def compute_bbox(cloud: PointCloud) -> BoundingBox:
    """Tight componentwise bounding box of a nonempty cloud."""
    if len(cloud) == 0:
        raise ValueError("cannot compute bounding box of an empty cloud")
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    return BoundingBox(tuple(lo), tuple(hi))


def grid_subsample(cloud: PointCloud, cell: float) -> PointCloud:
    """Keep at most one point per occupied 3D voxel of edge `cell`.

    The voxel grid is anchored at the coordinate origin
    (``floor(coord / cell)`` per axis), which makes the operation
    idempotent and independent of point order.  The representative of a
    voxel is the member nearest the voxel centroid, ties broken by the
    lowest original index; all columns are carried over from it.
    """
    if cell <= 0:
        raise ValueError("cell must be positive")
    n = len(cloud)
    if n == 0:
        return cloud.select(np.empty(0, dtype=np.int64))

    idx3 = np.floor(cloud.positions / cell).astype(np.int64)
    voxels, inverse = np.unique(idx3, axis=0, return_inverse=True)
    inverse = inverse.ravel()

    centroids = (idx3.astype(np.float64) + 0.5) * cell
    dist2 = np.einsum("ij,ij->i", cloud.positions - centroids,
                      cloud.positions - centroids)

    order = np.lexsort((np.arange(n), dist2, inverse))
    group = inverse[order]
    first = np.ones(n, dtype=bool)
    first[1:] = group[1:] != group[:-1]
    keep = np.sort(order[first])
    return cloud.select(keep)
