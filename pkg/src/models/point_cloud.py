"""
Data model for colored point clouds and the pieces they are cut into.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np


def _frozen_array(values, dtype, ncols: int, label: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim != 2 or arr.shape[1] != ncols:
        raise ValueError(f"{label} must be an N x {ncols} array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points with xyz coordinates and RGB colors normalized to [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray
    name: str = ""

    def __post_init__(self):
        positions = _frozen_array(self.positions, np.float64, 3, "positions")
        colors = _frozen_array(self.colors, np.float64, 3, "colors")
        if positions.shape[0] < 1:
            raise ValueError("A point cloud needs at least one point")
        if positions.shape[0] != colors.shape[0]:
            raise ValueError(
                f"positions ({positions.shape[0]}) and colors ({colors.shape[0]}) differ in length"
            )
        if not np.isfinite(positions).all():
            raise ValueError("non-finite coordinate in point cloud")
        if not np.isfinite(colors).all() or colors.min() < 0.0 or colors.max() > 1.0:
            raise ValueError("color channels must lie in [0, 1]")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "colors", colors)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def permuted(self, order: np.ndarray) -> "PointCloud":
        """Same points in a different storage order."""
        return PointCloud(self.positions[order], self.colors[order], self.name)


@dataclass(frozen=True, eq=False)
class Partition:
    """A slab of the parent cloud along the slicing axis."""

    point_indices: np.ndarray
    slab_range: Tuple[float, float]
    axis: int = 0

    def __len__(self) -> int:
        return int(self.point_indices.shape[0])


@dataclass(frozen=True, eq=False)
class Patch:
    """Fixed-size neighborhood fed to the network: one matrix per stream."""

    geometry: np.ndarray          # N_p x 3, centered and unit-sphere scaled
    color: np.ndarray             # N_p x 3, in [0, 1]
    centroid_index: int = -1      # seed point, index into the parent cloud
    point_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.geometry.shape != self.color.shape:
            raise ValueError(
                f"geometry {self.geometry.shape} and color {self.color.shape} row counts differ"
            )

    @property
    def size(self) -> int:
        return int(self.geometry.shape[0])


@dataclass(eq=False)
class PreprocessedCloud:
    """Every partition of one cloud with the patches built from it."""

    name: str
    partitions: List[Partition]
    patches: List[List[Patch]]

    @property
    def patch_count(self) -> int:
        return sum(len(p) for p in self.patches)
