"""
Binary checkpoint format (little-endian):

    b"SKPT" | u32 version (=1)
    u32 config length | UTF-8 JSON with every ModelConfig field
    u32 tensor count
    per tensor: u32 name length | UTF-8 name | u32 ndims | ndims x u64 dims
                | u8 dtype tag (0 = f32) | product(dims) x 4 payload bytes

Tensor names follow model.tensor_shapes(); rotary pairs are interleaved
(2i, 2i+1), so wq/wk columns are stored in that layout.
"""
import json
import logging
import os
import struct
import tempfile
from typing import BinaryIO, Tuple, Union

import numpy as np

from .errors import (BadMagicError, CheckpointStructureError, ConfigError, ShapeError,
                     TruncatedCheckpointError, VersionMismatchError)
from .model import ModelWeights, tensor_shapes
from .schemas import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"SKPT"
VERSION = 1
DTYPE_F32 = 0

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

PathLike = Union[str, os.PathLike]


def save_checkpoint(weights: ModelWeights, config: ModelConfig, path: PathLike) -> None:
    """Write weights atomically (temp file in the target directory, then rename)."""
    if config != weights.config:
        raise ConfigError("config does not match the config the weights were built for")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    blob = json.dumps(config.model_dump(), sort_keys=True).encode("utf-8")
    tensors = weights.named_tensors()

    fd, tmp_name = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as out:
            out.write(MAGIC)
            out.write(_U32.pack(VERSION))
            out.write(_U32.pack(len(blob)))
            out.write(blob)
            out.write(_U32.pack(len(tensors)))
            for name, array in tensors.items():
                encoded = name.encode("utf-8")
                out.write(_U32.pack(len(encoded)))
                out.write(encoded)
                out.write(_U32.pack(array.ndim))
                for dim in array.shape:
                    out.write(_U64.pack(dim))
                out.write(_U8.pack(DTYPE_F32))
                out.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    logger.info(f"Saved {len(tensors)} tensors ({weights.n_parameters} parameters) to {path}")


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    remaining = os.fstat(f.fileno()).st_size - f.tell()
    if n > remaining:
        raise TruncatedCheckpointError(f"file ended while reading {what}: wanted {n} bytes, {remaining} left")
    data = f.read(n)
    if len(data) != n:
        raise TruncatedCheckpointError(f"file ended while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def _read_u32(f: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(f, _U32.size, what))[0]


def load_checkpoint(path: PathLike) -> Tuple[ModelConfig, ModelWeights]:
    """Read a checkpoint; each failure mode raises its own CheckpointError subclass."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r} in {path}, expected {MAGIC!r}")
        version = _read_u32(f, "version")
        if version != VERSION:
            raise VersionMismatchError(f"checkpoint version {version}, this reader supports {VERSION}", version=version)

        blob = _read_exact(f, _read_u32(f, "config length"), "config JSON")
        try:
            config = ModelConfig.create(**json.loads(blob.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ConfigError) as e:
            raise CheckpointStructureError(f"unreadable config in {path}: {e}") from e

        count = _read_u32(f, "tensor count")
        expected = tensor_shapes(config)
        tensors = {}
        for index in range(count):
            name = _read_exact(f, _read_u32(f, f"name length of tensor {index}"), f"name of tensor {index}")
            name = name.decode("utf-8", errors="replace")
            if name in tensors:
                raise CheckpointStructureError(f"tensor {name} appears twice")
            ndims = _read_u32(f, f"ndims of {name}")
            dims = tuple(_U64.unpack(_read_exact(f, _U64.size, f"dims of {name}"))[0] for _ in range(ndims))
            if name not in expected:
                raise CheckpointStructureError(f"unexpected tensor {name} for a {config.n_layers}-layer config")
            if dims != expected[name]:
                raise CheckpointStructureError(f"tensor {name} has dims {dims}, its config implies {expected[name]}")
            tag = _U8.unpack(_read_exact(f, _U8.size, f"dtype of {name}"))[0]
            if tag != DTYPE_F32:
                raise CheckpointStructureError(f"tensor {name} has unsupported dtype tag {tag}")
            n_values = int(np.prod(dims, dtype=np.int64)) if dims else 1
            payload = _read_exact(f, n_values * 4, f"payload of {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)

        if f.read(1):
            raise CheckpointStructureError(f"trailing bytes after {count} tensors in {path}")

    try:
        weights = ModelWeights.from_named_tensors(config, tensors)
    except ShapeError as e:
        raise CheckpointStructureError(f"checkpoint does not match its config (L={config.n_layers}): {e}") from e
    logger.info(f"Loaded {count} tensors from {path}")
    return config, weights
