"""
Cut a point cloud into vertical slabs and each slab into covering kNN patches.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from src.models.config import PreprocessConfig
from src.models.point_cloud import Partition, Patch, PointCloud, PreprocessedCloud

logger = logging.getLogger(__name__)


def compute_partition_count(n_points: int, cfg: PreprocessConfig) -> int:
    """clamp(round(n / target), min, max); rounds half up so the map stays monotone."""
    if n_points < 1:
        raise ValueError(f"n_points must be >= 1, got {n_points}")
    raw = math.floor(n_points / cfg.points_per_partition_target + 0.5)
    return int(min(max(raw, cfg.min_partitions), cfg.max_partitions))


def slicing_axis(cloud: PointCloud, override: Optional[int] = None) -> int:
    """Axis of maximum bounding-box extent (lowest axis on ties) unless overridden."""
    if override is not None:
        return int(override)
    low, high = cloud.bounding_box()
    return int(np.argmax(high - low))


def slice_partitions(cloud: PointCloud, k: int, axis: Optional[int] = None) -> List[Partition]:
    """
    k equal-width slabs along the slicing axis. Points on the upper boundary
    join the last slab; empty slabs are dropped.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    axis = slicing_axis(cloud, axis)
    coords = cloud.positions[:, axis]
    low, high = float(coords.min()), float(coords.max())

    if high == low or k == 1:
        return [Partition(np.arange(len(cloud)), (low, high), axis)]

    edges = low + (high - low) * np.arange(k + 1) / k
    edges[0], edges[-1] = low, high
    slab = np.clip(np.searchsorted(edges, coords, side='right') - 1, 0, k - 1)

    partitions = []
    for i in range(k):
        members = np.flatnonzero(slab == i)
        if members.size:
            partitions.append(Partition(members, (float(edges[i]), float(edges[i + 1])), axis))
    return partitions


def farthest_point_sample(points: np.ndarray, m: int, start: int = 0) -> List[int]:
    """
    Greedy max-min selection starting at `start`; ties go to the lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if m > n:
        raise ValueError(f"cannot sample {m} points from {n}")
    if m < 1:
        return []

    chosen = [int(start)]
    min_dist = np.sum((points - points[start]) ** 2, axis=1)
    min_dist[start] = -1.0
    for _ in range(m - 1):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.sum((points - points[nxt]) ** 2, axis=1))
        min_dist[chosen] = -1.0
    return chosen


def normalize_patch(geometry_raw: np.ndarray, colors: np.ndarray, centroid_index: int = -1,
                    point_indices: Optional[np.ndarray] = None) -> Patch:
    """Center geometry at its mean and scale into the unit sphere; colors untouched."""
    centered = geometry_raw - geometry_raw.mean(axis=0)
    radius = float(np.sqrt((centered ** 2).sum(axis=1)).max())
    scale = radius if radius > 0 else 1.0
    return Patch(
        geometry=centered / scale,
        color=np.array(colors, dtype=np.float64),
        centroid_index=centroid_index,
        point_indices=np.zeros(0, dtype=np.int64) if point_indices is None else point_indices,
    )


def _neighbors(points: np.ndarray, center: int, patch_size: int) -> np.ndarray:
    """
    patch_size nearest rows to points[center]. The center itself always ranks
    first, other ties go to the lowest index. Wraps around when too few points.
    """
    d2 = np.sum((points - points[center]) ** 2, axis=1)
    not_center = np.arange(points.shape[0]) != center
    order = np.lexsort((not_center, d2))
    if order.size >= patch_size:
        return order[:patch_size]
    return order[np.arange(patch_size) % order.size]


def build_patches(cloud: PointCloud, partition: Partition, cfg: PreprocessConfig) -> List[Patch]:
    """
    ceil(|partition| / patch_size) FPS centroids seeded at the point nearest
    the partition centroid, one kNN patch each, then extra centroids at the
    farthest uncovered points until every point sits in some patch.
    """
    indices = partition.point_indices
    points = cloud.positions[indices]
    n = points.shape[0]
    if n < 1:
        raise ValueError("cannot build patches from an empty partition")

    start = int(np.argmin(np.sum((points - points.mean(axis=0)) ** 2, axis=1)))
    count = math.ceil(n / cfg.patch_size)
    centroids = farthest_point_sample(points, count, start)

    covered = np.zeros(n, dtype=bool)
    local_patches = []
    for c in centroids:
        members = _neighbors(points, c, cfg.patch_size)
        covered[members] = True
        local_patches.append((c, members))

    if not covered.all():
        min_dist = np.full(n, np.inf)
        for c in centroids:
            min_dist = np.minimum(min_dist, np.sum((points - points[c]) ** 2, axis=1))
        while not covered.all():
            candidates = np.where(covered, -1.0, min_dist)
            c = int(np.argmax(candidates))
            members = _neighbors(points, c, cfg.patch_size)
            covered[members] = True
            local_patches.append((c, members))
            min_dist = np.minimum(min_dist, np.sum((points - points[c]) ** 2, axis=1))

    patches = []
    for c, members in local_patches:
        global_idx = indices[members]
        patches.append(normalize_patch(points[members], cloud.colors[global_idx],
                                       centroid_index=int(indices[c]), point_indices=global_idx))
    return patches


def assert_coverage(partition: Partition, patches: Sequence[Patch]):
    """Every partition point must appear in at least one patch."""
    seen = np.unique(np.concatenate([p.point_indices for p in patches]))
    missing = np.setdiff1d(partition.point_indices, seen)
    if missing.size:
        raise AssertionError(f"{missing.size} partition points are in no patch")


def preprocess_cloud(cloud: PointCloud, cfg: PreprocessConfig,
                     threads: Optional[int] = None) -> PreprocessedCloud:
    """Full pipeline: partition count, slicing, per-partition patches (in parallel)."""
    if cfg.partitions == "auto":
        k = compute_partition_count(len(cloud), cfg)
    else:
        k = int(cfg.partitions)
    partitions = slice_partitions(cloud, k, cfg.slice_axis)

    workers = max(1, min(threads or 1, len(partitions)))
    if workers == 1:
        patches = [build_patches(cloud, p, cfg) for p in partitions]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            patches = list(pool.map(lambda p: build_patches(cloud, p, cfg), partitions))

    for partition, partition_patches in zip(partitions, patches):
        assert_coverage(partition, partition_patches)

    result = PreprocessedCloud(name=cloud.name, partitions=partitions, patches=patches)
    logger.debug("%s: %d points -> %d partitions, %d patches",
                 cloud.name or "<cloud>", len(cloud), len(partitions), result.patch_count)
    return result
