"""
Versioned binary container for network weights.

Layout (little-endian):
    magic      8 bytes  b"PCQAWGT\\n"
    version    uint32
    config     uint32 length + UTF-8 JSON of ModelConfig
    count      uint32
    per tensor uint16 name length, name, uint8 ndim, uint32 dims..., float64 values
"""
import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from src.ai.network import ModelParams, param_shapes
from src.models.config import ModelConfig

MAGIC = b"PCQAWGT\n"
FORMAT_VERSION = 1


class WeightsFormatError(ValueError):
    """The byte stream is not a weights file this version can read."""


class WeightsTruncatedError(WeightsFormatError):
    pass


class WeightsVersionError(WeightsFormatError):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsTruncatedError(
                f"truncated weights payload: need {n} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def save_weights(params: ModelParams) -> bytes:
    config = json.dumps(params.config.to_dict(), sort_keys=True).encode('utf-8')
    parts = [MAGIC, struct.pack('<I', FORMAT_VERSION),
             struct.pack('<I', len(config)), config,
             struct.pack('<I', len(params.tensors))]
    for name, value in params.tensors.items():
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<B', value.ndim))
        parts.append(struct.pack(f'<{value.ndim}I', *value.shape))
        parts.append(np.ascontiguousarray(value, dtype='<f8').tobytes())
    return b''.join(parts)


def load_weights(data: bytes) -> ModelParams:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise WeightsFormatError("corrupt magic: not a weights file")
    (version,) = reader.unpack('<I')
    if version != FORMAT_VERSION:
        raise WeightsVersionError(f"version mismatch: file has {version}, expected {FORMAT_VERSION}")

    (config_len,) = reader.unpack('<I')
    config_bytes = reader.take(config_len)
    try:
        config = ModelConfig.from_dict(json.loads(config_bytes.decode('utf-8')))
    except (ValueError, TypeError) as e:
        raise WeightsFormatError(f"corrupt config block: {e}")
    expected = param_shapes(config)

    (count,) = reader.unpack('<I')
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8', errors='replace')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}I')
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(reader.take(8 * size), dtype='<f8').astype(np.float64).reshape(shape)
        if name not in expected:
            raise WeightsFormatError(f"unknown tensor {name!r} for the embedded config")
        if tuple(shape) != expected[name]:
            raise WeightsFormatError(
                f"shape mismatch for {name}: file {tuple(shape)}, config {expected[name]}"
            )
        tensors[name] = values

    missing = [name for name in expected if name not in tensors]
    if missing:
        raise WeightsFormatError(f"missing tensors: {', '.join(missing[:5])}")
    if reader.pos != len(data):
        raise WeightsFormatError(f"{len(data) - reader.pos} trailing bytes after the last tensor")
    return ModelParams(config, {name: tensors[name] for name in expected})


def write_weights_file(params: ModelParams, path: Union[str, Path]) -> Path:
    """Write atomically: temp file, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + '.tmp')
    temp_path.write_bytes(save_weights(params))
    temp_path.replace(path)
    return path


def read_weights_file(path: Union[str, Path]) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Weights file not found: {path}")
    return load_weights(path.read_bytes())
