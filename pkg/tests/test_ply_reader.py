import struct
import sys

import numpy as np
import pytest
sys.path.insert(0, '.')

from src.data.ply_reader import PlyFormatError, parse_ply, read_ply_file, write_ply
from src.models.point_cloud import PointCloud

STRUCT_CODES = {'float': 'f', 'double': 'd', 'uchar': 'B'}


def packed_ply(n=5, text=False, coord_type='float', extra=None, byte_order='<', seed=0):
    """PLY bytes packed row by row with struct, independent of the reader."""
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-10, 10, size=(n, 3))
    if coord_type == 'float':
        positions = positions.astype(np.float32).astype(np.float64)
    colors = rng.integers(0, 256, size=(n, 3))
    properties = [(coord_type, axis) for axis in 'xyz'] + [('uchar', c) for c in ('red', 'green', 'blue')]
    if extra:
        properties.append(('float', extra))

    fmt = 'ascii' if text else ('binary_little_endian' if byte_order == '<' else 'binary_big_endian')
    header = f"ply\nformat {fmt} 1.0\nelement vertex {n}\n"
    header += "".join(f"property {kind} {name}\n" for kind, name in properties) + "end_header\n"

    codes = byte_order + "".join(STRUCT_CODES[kind] for kind, _ in properties)
    rows = []
    for p, c in zip(positions, colors):
        values = [float(v) for v in p] + [int(v) for v in c] + ([1.5] if extra else [])
        if text:
            rows.append((" ".join(repr(v) for v in values) + "\n").encode('ascii'))
        else:
            rows.append(struct.pack(codes, *values))
    return header.encode('ascii') + b"".join(rows), positions, colors


def unpack_vertices(data, n):
    """(x, y, z, r, g, b) rows of a binary little-endian float/uchar PLY."""
    body = data[data.index(b"end_header\n") + len(b"end_header\n"):]
    assert len(body) == n * struct.calcsize('<fffBBB')
    return list(struct.iter_unpack('<fffBBB', body))


def ascii_ply(rows, count=None, fmt='ascii', color_type='uchar'):
    count = len(rows) if count is None else count
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {count}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"property {color_type} red\nproperty {color_type} green\nproperty {color_type} blue\n"
        "end_header\n"
    )
    return (header + "".join(r + "\n" for r in rows)).encode('ascii')


def test_binary_matches_packed_rows():
    data, positions, colors = packed_ply(n=50)
    cloud = parse_ply(data)
    assert len(cloud) == 50
    np.testing.assert_array_equal(cloud.positions, positions)
    np.testing.assert_array_equal(cloud.colors, colors / 255.0)


def test_ascii_matches_packed_rows():
    data, positions, colors = packed_ply(n=20, text=True)
    cloud = parse_ply(data)
    np.testing.assert_allclose(cloud.positions, positions, rtol=1e-6)
    np.testing.assert_array_equal(cloud.colors, colors / 255.0)


def test_double_coordinates_and_extra_properties_are_accepted():
    data, positions, _ = packed_ply(n=8, coord_type='double', extra='nx')
    cloud = parse_ply(data)
    np.testing.assert_array_equal(cloud.positions, positions)


def test_single_white_point():
    cloud = parse_ply(ascii_ply(["0 0 0 255 255 255"]))
    assert len(cloud) == 1
    np.testing.assert_array_equal(cloud.colors, [[1.0, 1.0, 1.0]])


def test_missing_color_property_is_rejected():
    data = (b"ply\nformat ascii 1.0\nelement vertex 1\n"
            b"property float x\nproperty float y\nproperty float z\n"
            b"property uchar red\nproperty uchar green\nend_header\n0 0 0 1 2\n")
    with pytest.raises(PlyFormatError, match="missing required property: blue"):
        parse_ply(data)


def test_big_endian_is_rejected():
    data, _, _ = packed_ply(n=4, byte_order='>')
    with pytest.raises(PlyFormatError, match="unsupported format tag"):
        parse_ply(data)


def test_count_mismatch_is_rejected():
    with pytest.raises(PlyFormatError, match="declared count mismatch"):
        parse_ply(ascii_ply(["0 0 0 1 2 3", "1 1 1 4 5 6"], count=3))


def test_extra_ascii_rows_are_rejected():
    with pytest.raises(PlyFormatError, match="declared count mismatch"):
        parse_ply(ascii_ply(["0 0 0 1 2 3", "1 1 1 4 5 6"], count=1))


def test_truncated_binary_is_rejected():
    data, _, _ = packed_ply(n=10)
    with pytest.raises(PlyFormatError, match="declared count mismatch"):
        parse_ply(data[:-4])


def test_trailing_binary_bytes_are_rejected():
    data, _, _ = packed_ply(n=10)
    with pytest.raises(PlyFormatError, match="declared count mismatch"):
        parse_ply(data + struct.pack('<fffBBB', 0.0, 0.0, 0.0, 1, 2, 3))


def test_missing_end_header_is_rejected():
    with pytest.raises(PlyFormatError):
        parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\n")


def test_non_uchar_colors_are_rejected():
    with pytest.raises(PlyFormatError, match="must be uchar"):
        parse_ply(ascii_ply(["0 0 0 0.1 0.2 0.3"], color_type='float'))


def test_nan_coordinate_is_rejected():
    with pytest.raises(PlyFormatError, match="non-finite"):
        parse_ply(ascii_ply(["nan 0 0 1 2 3"]))


def test_write_ply_unpacks_to_the_cloud(tmp_path):
    rng = np.random.default_rng(3)
    cloud = PointCloud(rng.normal(size=(30, 3)), rng.integers(0, 256, size=(30, 3)) / 255.0, "c")
    rows = unpack_vertices(write_ply(cloud, binary=True), 30)
    np.testing.assert_array_equal([r[:3] for r in rows], cloud.positions.astype(np.float32))
    np.testing.assert_array_equal([r[3:] for r in rows], np.round(cloud.colors * 255))

    for binary in (True, False):
        path = tmp_path / f"c_{binary}.ply"
        path.write_bytes(write_ply(cloud, binary=binary))
        again = read_ply_file(path)
        assert again.name == f"c_{binary}"
        np.testing.assert_allclose(again.positions, cloud.positions, rtol=1e-6, atol=1e-6)
        np.testing.assert_array_equal(again.colors, cloud.colors)


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_ply_file(tmp_path / "absent.ply")
