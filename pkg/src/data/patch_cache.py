"""
On-disk cache of preprocessed patches, one file per cloud.

File layout (little-endian):
    magic b"PCQAPAT\\n", uint32 version, 16-byte config hash,
    uint32 patch_size, uint32 partition count,
    per partition: float64 slab low/high, uint32 axis, uint32 point count,
                   uint32 point indices, uint32 patch count,
    per patch: int32 centroid index, float32 geometry (N_p x 3),
               float32 color (N_p x 3), uint32 point indices (N_p)
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import Callable, Dict, Optional, Union

import numpy as np

from src.models.config import PreprocessConfig
from src.models.point_cloud import Partition, Patch, PreprocessedCloud

logger = logging.getLogger(__name__)

MAGIC = b"PCQAPAT\n"
CACHE_VERSION = 1


class PatchCacheError(ValueError):
    """A cache file is truncated, corrupt, or from another version."""


def stimulus_key(path: Union[str, Path]) -> str:
    """Cache key for a PLY file: resolved path, size and modification time."""
    path = Path(path)
    stat = path.stat()
    return f"{path.resolve()}:{stat.st_size}:{stat.st_mtime_ns}"


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise PatchCacheError("truncated cache file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()


def encode_patches(prepared: PreprocessedCloud, cfg: PreprocessConfig) -> bytes:
    parts = [MAGIC, struct.pack('<I', CACHE_VERSION), cfg.config_hash(),
             struct.pack('<II', cfg.patch_size, len(prepared.partitions))]
    for partition, patches in zip(prepared.partitions, prepared.patches):
        parts.append(struct.pack('<ddII', partition.slab_range[0], partition.slab_range[1],
                                 partition.axis, len(partition)))
        parts.append(partition.point_indices.astype('<u4').tobytes())
        parts.append(struct.pack('<I', len(patches)))
        for patch in patches:
            parts.append(struct.pack('<i', patch.centroid_index))
            parts.append(patch.geometry.astype('<f4').tobytes())
            parts.append(patch.color.astype('<f4').tobytes())
            parts.append(patch.point_indices.astype('<u4').tobytes())
    return b''.join(parts)


def decode_patches(data: bytes, name: str, cfg: PreprocessConfig) -> PreprocessedCloud:
    """Rebuild the patch lists; raises PatchCacheError on mismatch or damage."""
    cursor = _Cursor(data)
    if cursor.take(len(MAGIC)) != MAGIC:
        raise PatchCacheError("corrupt cache file: bad magic")
    (version,) = cursor.unpack('<I')
    if version != CACHE_VERSION:
        raise PatchCacheError(f"cache version {version}, expected {CACHE_VERSION}")
    if cursor.take(16) != cfg.config_hash():
        raise PatchCacheError("cache was built with a different preprocessing config")

    patch_size, partition_count = cursor.unpack('<II')
    partitions, patches = [], []
    for _ in range(partition_count):
        low, high, axis, count = cursor.unpack('<ddII')
        indices = cursor.array('<u4', count).astype(np.int64)
        partitions.append(Partition(indices, (low, high), axis))
        (patch_count,) = cursor.unpack('<I')
        partition_patches = []
        for _ in range(patch_count):
            (centroid,) = cursor.unpack('<i')
            geometry = cursor.array('<f4', patch_size * 3).astype(np.float64).reshape(patch_size, 3)
            color = cursor.array('<f4', patch_size * 3).astype(np.float64).reshape(patch_size, 3)
            members = cursor.array('<u4', patch_size).astype(np.int64)
            partition_patches.append(Patch(geometry, color, int(centroid), members))
        patches.append(partition_patches)
    if cursor.pos != len(data):
        raise PatchCacheError("corrupt cache file: trailing bytes")
    return PreprocessedCloud(name=name, partitions=partitions, patches=patches)


class PatchCache:
    """Manage storing and loading of preprocessed patch files."""

    def __init__(self, cache_dir: str = "data/patch_cache"):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def get_cache_path(self, cloud_name: str) -> Path:
        """Cache file path from the cloud name (hashed to stay filesystem-safe)."""
        name_hash = hashlib.md5(cloud_name.encode('utf-8')).hexdigest()
        return self.cache_dir / f"{name_hash}.patches"

    def load(self, cloud_name: str, cfg: PreprocessConfig) -> Optional[PreprocessedCloud]:
        """Cached patches, or None if missing. Stale or damaged files are removed."""
        cache_path = self.get_cache_path(cloud_name)
        if not cache_path.exists():
            return None
        try:
            return decode_patches(cache_path.read_bytes(), cloud_name, cfg)
        except (PatchCacheError, ValueError) as e:
            logger.warning("⚠ Dropping cache for %s: %s", cloud_name, e)
            cache_path.unlink(missing_ok=True)
            return None

    def _write(self, key: str, data: bytes) -> Path:
        """Write atomically (temp file, then rename)."""
        cache_path = self.get_cache_path(key)
        temp_path = cache_path.with_suffix('.tmp')
        try:
            temp_path.write_bytes(data)
            temp_path.replace(cache_path)
        except Exception:
            if temp_path.exists():
                temp_path.unlink()
            raise
        return cache_path

    def store(self, prepared: PreprocessedCloud, cfg: PreprocessConfig, key: Optional[str] = None) -> Path:
        """Store under `key`, defaulting to the cloud name."""
        return self._write(key or prepared.name, encode_patches(prepared, cfg))

    def get_patches(self, key: str, cfg: PreprocessConfig,
                    build: Callable[[], PreprocessedCloud]) -> PreprocessedCloud:
        """
        Cached patches for `key`, building and storing them on a miss.
        A miss returns the decoded copy so hits and misses see the same float32 values.
        """
        cached = self.load(key, cfg)
        if cached is not None:
            logger.debug("cache hit: %s", key)
            return cached
        data = encode_patches(build(), cfg)
        try:
            self._write(key, data)
        except OSError as e:
            logger.warning("⚠ Could not write cache for %s: %s", key, e)
        return decode_patches(data, key, cfg)

    def clear_cache(self):
        for file in self.cache_dir.glob("*.patches"):
            try:
                file.unlink()
            except OSError as e:
                logger.error("Error deleting %s: %s", file, e)

    def get_cache_size(self) -> int:
        """Total size of cache files in bytes."""
        total = 0
        for file in self.cache_dir.glob("*.patches"):
            try:
                total += file.stat().st_size
            except OSError:
                continue
        return total

    def validate_cache(self, cfg: PreprocessConfig) -> Dict[str, int]:
        """
        Check every cache file against `cfg`; unreadable or stale files are removed.
        Returns counts of total, valid, stale and removed files.
        """
        stats = {'total': 0, 'valid': 0, 'stale': 0, 'removed': 0}
        for file in self.cache_dir.glob("*.patches"):
            stats['total'] += 1
            try:
                decode_patches(file.read_bytes(), file.stem, cfg)
                stats['valid'] += 1
            except (PatchCacheError, ValueError, OSError):
                stats['stale'] += 1
                try:
                    file.unlink()
                    stats['removed'] += 1
                except OSError:
                    pass
        return stats
