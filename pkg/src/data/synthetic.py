"""
Synthetic stimuli for smoke tests and scaled experiments: random blobs and
a noise ladder over simple base shapes.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.data.manifest_loader import ManifestLoader
from src.data.ply_reader import write_ply
from src.models.manifest import DatasetManifest, ManifestEntry
from src.models.point_cloud import PointCloud

logger = logging.getLogger(__name__)

SHAPES = ('sphere', 'box', 'torus', 'cylinder')
DEFAULT_NOISE_LEVELS = (0.0, 0.01, 0.02, 0.04, 0.08)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def random_blob_cloud(n_points: int, seed: int = 0, blobs: int = 3, name: str = "") -> PointCloud:
    """A few Gaussian blobs, each with its own base color plus jitter."""
    if n_points < 1 or blobs < 1:
        raise ValueError(f"need at least one point and one blob, got {n_points} points, {blobs} blobs")
    rng = _rng(seed)
    centers = rng.uniform(-1.0, 1.0, size=(blobs, 3))
    spreads = rng.uniform(0.05, 0.3, size=blobs)
    base_colors = rng.uniform(0.1, 0.9, size=(blobs, 3))

    owner = rng.integers(0, blobs, size=n_points)
    positions = centers[owner] + rng.normal(size=(n_points, 3)) * spreads[owner, None]
    colors = np.clip(base_colors[owner] + rng.normal(scale=0.05, size=(n_points, 3)), 0.0, 1.0)
    return PointCloud(positions, colors, name)


def _sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _box(rng: np.random.Generator, n: int) -> np.ndarray:
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    face_axis = rng.integers(0, 3, size=n)
    face_sign = rng.choice([-1.0, 1.0], size=n)
    pts[np.arange(n), face_axis] = face_sign
    return pts


def _torus(rng: np.random.Generator, n: int, major: float = 0.7, minor: float = 0.3) -> np.ndarray:
    u = rng.uniform(0.0, 2 * np.pi, size=n)
    v = rng.uniform(0.0, 2 * np.pi, size=n)
    ring = major + minor * np.cos(v)
    return np.column_stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)])


def _cylinder(rng: np.random.Generator, n: int) -> np.ndarray:
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    z = rng.uniform(-1.0, 1.0, size=n)
    return np.column_stack([np.cos(theta), np.sin(theta), z])


_SAMPLERS = {'sphere': _sphere, 'box': _box, 'torus': _torus, 'cylinder': _cylinder}


def base_shape(shape: str, n_points: int, seed: int = 0) -> PointCloud:
    """Surface samples of a unit-scale shape, colored by a gradient over height."""
    if shape not in _SAMPLERS:
        raise ValueError(f"unknown shape {shape!r}, expected one of {', '.join(SHAPES)}")
    positions = _SAMPLERS[shape](_rng(seed), n_points)
    z = positions[:, 2]
    t = (z - z.min()) / max(float(np.ptp(z)), 1e-12)
    colors = np.column_stack([t, 0.5 * np.ones_like(t), 1.0 - t])
    return PointCloud(positions, colors, shape)


def add_geometry_noise(cloud: PointCloud, sigma: float, seed: int = 0) -> PointCloud:
    """Gaussian displacement of every coordinate; colors are kept."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return PointCloud(cloud.positions, cloud.colors, cloud.name)
    jitter = _rng(seed).normal(scale=sigma, size=cloud.positions.shape)
    return PointCloud(cloud.positions + jitter, cloud.colors, cloud.name)


def ladder_mos(level: int, levels: int) -> float:
    """5 for the clean level down to 1 for the noisiest."""
    if levels < 2:
        return 5.0
    return 5.0 - 4.0 * level / (levels - 1)


def noise_ladder(n_points: int, seed: int = 0, shapes: Sequence[str] = SHAPES,
                 noise_levels: Sequence[float] = DEFAULT_NOISE_LEVELS) -> List[Tuple[PointCloud, ManifestEntry]]:
    """Every shape at every noise level, with its manifest entry (path relative to the dataset)."""
    items = []
    for s_index, shape in enumerate(shapes):
        clean = base_shape(shape, n_points, seed + s_index)
        for level, sigma in enumerate(noise_levels):
            noisy = add_geometry_noise(clean, sigma, seed=seed + 1000 * (s_index + 1) + level)
            path = f"{shape}_{level}.ply"
            cloud = PointCloud(noisy.positions, noisy.colors, f"{shape}_{level}")
            items.append((cloud, ManifestEntry(path, ladder_mos(level, len(noise_levels)), shape)))
    return items


def make_noise_ladder_dataset(out_dir: Union[str, Path], n_points: int = 2048, seed: int = 0,
                              shapes: Sequence[str] = SHAPES,
                              noise_levels: Sequence[float] = DEFAULT_NOISE_LEVELS) -> Path:
    """Write binary PLY files plus manifest.csv; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for cloud, entry in noise_ladder(n_points, seed, shapes, noise_levels):
        (out_dir / entry.path).write_bytes(write_ply(cloud))
        entries.append(entry)
    manifest_path = out_dir / "manifest.csv"
    manifest_path.write_text(ManifestLoader.save_manifest(DatasetManifest(entries)), encoding='utf-8')
    logger.info("✓ Wrote %d stimuli (%d shapes x %d levels) to %s",
                len(entries), len(shapes), len(noise_levels), out_dir)
    return manifest_path


def make_blob_dataset(out_dir: Union[str, Path], count: int = 8, n_points: int = 512, seed: int = 0,
                      mos: Optional[Sequence[float]] = None) -> Path:
    """Random blob clouds with arbitrary MOS in [1, 5]; one reference per cloud."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if mos is None:
        mos = _rng(seed + 7).uniform(1.0, 5.0, size=count).tolist()
    if len(mos) != count:
        raise ValueError(f"{len(mos)} MOS values for {count} clouds")
    entries = []
    for i in range(count):
        path = f"blob_{i}.ply"
        cloud = random_blob_cloud(n_points, seed=seed + i, name=f"blob_{i}")
        (out_dir / path).write_bytes(write_ply(cloud))
        entries.append(ManifestEntry(path, float(mos[i]), f"blob_{i}"))
    manifest_path = out_dir / "manifest.csv"
    manifest_path.write_text(ManifestLoader.save_manifest(DatasetManifest(entries)), encoding='utf-8')
    return manifest_path

