"""
Read and write colored point clouds in PLY format (ASCII and binary little-endian).
"""
import io
import logging
from pathlib import Path
from typing import Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError, PlyListProperty

from src.models.point_cloud import PointCloud

logger = logging.getLogger(__name__)

COORDINATES = ('x', 'y', 'z')
COLORS = ('red', 'green', 'blue')


class PlyFormatError(ValueError):
    """Raised for any PLY file this reader refuses to ingest."""


def _body_offset(data: bytes) -> int:
    marker = data.find(b'end_header')
    newline = data.find(b'\n', marker) if marker >= 0 else -1
    if newline < 0:
        raise PlyFormatError("malformed header: missing 'end_header'")
    return newline + 1


def _read_plydata(data: bytes) -> PlyData:
    stream = io.BytesIO(data)
    try:
        ply = PlyData.read(stream, mmap=False)
    except PlyHeaderParseError as e:
        raise PlyFormatError(f"malformed header: {e}")
    except UnicodeDecodeError:
        raise PlyFormatError("malformed header: non-ASCII bytes")
    except (PlyElementParseError, StopIteration, ValueError) as e:
        raise PlyFormatError(f"declared count mismatch: {e}")

    if not ply.text and ply.byte_order == '>':
        raise PlyFormatError("unsupported format tag: binary_big_endian")

    body = data[_body_offset(data):]
    if ply.text:
        rows = sum(1 for line in body.splitlines() if line.strip())
        declared = sum(element.count for element in ply.elements)
        if rows != declared:
            raise PlyFormatError(f"declared count mismatch: header declares {declared} rows, found {rows}")
    elif stream.tell() != len(data):
        raise PlyFormatError(
            f"declared count mismatch: {len(data) - stream.tell()} bytes after the declared elements"
        )
    return ply


def _check_vertex(ply: PlyData):
    if not ply.elements or ply.elements[0].name != 'vertex':
        raise PlyFormatError("malformed header: 'vertex' must be the first element")
    vertex = ply.elements[0]
    properties = {prop.name: prop for prop in vertex.properties}
    if any(isinstance(prop, PlyListProperty) for prop in vertex.properties):
        raise PlyFormatError("list properties are not supported on vertices")
    for required in COORDINATES + COLORS:
        if required not in properties:
            raise PlyFormatError(f"missing required property: {required}")
    for name in COLORS:
        if np.dtype(properties[name].val_dtype) != np.uint8:
            raise PlyFormatError(f"color property {name} must be uchar")
    if vertex.count < 1:
        raise PlyFormatError("declared count mismatch: vertex element is empty")


def parse_ply(data: bytes, name: str = "") -> PointCloud:
    """
    Parse PLY bytes into a PointCloud.
    Colors are divided by 255; extra vertex properties are skipped.
    """
    ply = _read_plydata(data)
    _check_vertex(ply)
    table = ply['vertex'].data
    positions = np.stack([table[c].astype(np.float64) for c in COORDINATES], axis=1)
    raw_colors = np.stack([table[c].astype(np.float64) for c in COLORS], axis=1)

    if not np.isfinite(positions).all():
        raise PlyFormatError("non-finite coordinate in vertex data")
    return PointCloud(positions=positions, colors=raw_colors / 255.0, name=name)


def read_ply_file(path: Union[str, Path]) -> PointCloud:
    """Load a PLY file from disk; the cloud is named after the file stem."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"PLY file not found: {path}")
    cloud = parse_ply(path.read_bytes(), name=path.stem)
    logger.debug("Loaded %s: %d points", path, len(cloud))
    return cloud


def write_ply(cloud: PointCloud, binary: bool = True) -> bytes:
    """Serialize with float x/y/z and uchar red/green/blue."""
    table = np.empty(len(cloud), dtype=[('x', 'f4'), ('y', 'f4'), ('z', 'f4'),
                                        ('red', 'u1'), ('green', 'u1'), ('blue', 'u1')])
    rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    for i, axis in enumerate(COORDINATES):
        table[axis] = cloud.positions[:, i]
    for i, channel in enumerate(COLORS):
        table[channel] = rgb[:, i]

    buf = io.BytesIO()
    PlyData([PlyElement.describe(table, 'vertex')], text=not binary, byte_order='<').write(buf)
    return buf.getvalue()
