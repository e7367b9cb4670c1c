"""
Binary checkpoint files.

Layout (little-endian):

    magic      8 bytes  b"FAMAMBA\\0"
    version    u32
    config     u64 length + UTF-8 text (ModelConfig.to_text)
    step       u64 training-step counter
    count      u32 number of parameter records
    records    name (u32 length + UTF-8), rank u32, extents u64 each, float32 data
    checksum   8-byte BLAKE2b digest of every preceding byte

Weights are stored as float32 whatever the model precision.
"""

import hashlib
import logging
import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from models.restoration import ModelConfig
from services.network import FAMambaNet, build
from utils.errors import CheckpointError, ChecksumError, ConfigError, ImageIOError
from utils.helpers import FileUtils

logger = logging.getLogger(__name__)

MAGIC = b"FAMAMBA\0"
VERSION = 1
CHECKSUM_SIZE = 8


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_SIZE).digest()


def encode_checkpoint(model: FAMambaNet, step: Optional[int] = None) -> bytes:
    step = model.trained_steps if step is None else step
    config_text = model.config.to_text().encode('utf-8')
    named = model.named_parameters()

    parts = [MAGIC, struct.pack('<I', VERSION), struct.pack('<Q', len(config_text)), config_text,
             struct.pack('<Q', step), struct.pack('<I', len(named))]
    for name, param in named:
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<I', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<I', param.ndim))
        parts.append(struct.pack(f'<{param.ndim}Q', *param.shape))
        parts.append(np.ascontiguousarray(param.data, dtype='<f4').tobytes())
    payload = b''.join(parts)
    return payload + _checksum(payload)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError("checkpoint record runs past the end of the file")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Tuple[ModelConfig, int, Dict[str, np.ndarray]]:
    """Verify and parse checkpoint bytes into (config, step, parameters)."""
    if len(data) < len(MAGIC) + 4 + CHECKSUM_SIZE:
        raise ChecksumError("checkpoint is truncated")
    payload, stored = data[:-CHECKSUM_SIZE], data[-CHECKSUM_SIZE:]
    if _checksum(payload) != stored:
        raise ChecksumError("checkpoint checksum mismatch (file corrupted or truncated)")

    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")

    (text_length,) = reader.unpack('<Q')
    try:
        config = ModelConfig.from_text(reader.take(text_length).decode('utf-8'))
    except (UnicodeDecodeError, ConfigError) as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}") from e

    (step,) = reader.unpack('<Q')
    (count,) = reader.unpack('<I')
    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack('<I')
        name = reader.take(name_length).decode('utf-8', errors='replace')
        if name in params:
            raise CheckpointError(f"parameter '{name}' appears twice")
        (rank,) = reader.unpack('<I')
        shape = reader.unpack(f'<{rank}Q') if rank else ()
        size = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(reader.take(4 * size), dtype='<f4').reshape(shape).copy()
    if reader.offset != len(payload):
        raise CheckpointError(f"{len(payload) - reader.offset} unexpected trailing bytes")
    return config, step, params


def save_checkpoint(model: FAMambaNet, path: str, step: Optional[int] = None) -> int:
    """Write the model to ``path``; returns the byte size."""
    data = encode_checkpoint(model, step)
    try:
        FileUtils.ensure_directory_exists(path)
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise ImageIOError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint {path} ({len(data):,} bytes, {len(model.named_parameters())} tensors)")
    return len(data)


def load_checkpoint(path: str, model: Optional[FAMambaNet] = None) -> FAMambaNet:
    """Read a checkpoint into a freshly built model, or into ``model`` if given.

    Nothing is modified unless the whole file verifies and every
    parameter name and shape matches.
    """
    if not os.path.isfile(path):
        raise ImageIOError(f"checkpoint not found: {path}")
    with open(path, 'rb') as f:
        data = f.read()

    config, step, params = decode_checkpoint(data)
    target = model if model is not None else build(config)
    target.load_state_dict(params)
    target.trained_steps = step
    logger.info(f"Loaded checkpoint {path} (step {step})")
    return target
