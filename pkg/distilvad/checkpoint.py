"""
DistilVAD - CKPT checkpoint files

Layout (all integers little-endian):
    b"CKPT", u32 tensor count, then per tensor
    u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, f32 row-major data
"""
import logging
import os
import struct

import numpy as np

from distilvad.exceptions import CheckpointError, CheckpointMagicError, CheckpointTruncatedError

# Configure logger
logger = logging.getLogger(__name__)

MAGIC = b"CKPT"


def encode_checkpoint(tensors):
    """
    Serialize a name -> array mapping, preserving insertion order.

    Args:
        tensors (dict): name -> np.ndarray

    Returns:
        bytes: CKPT payload
    """
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        if array.ndim > 0xFF:
            raise CheckpointError(f"{name}: too many dimensions ({array.ndim})")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, count, what):
        end = self.offset + count
        if end > len(self.payload):
            raise CheckpointTruncatedError(
                f"checkpoint truncated while reading {what} at byte {self.offset}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(payload):
    """
    Parse a CKPT payload.

    Args:
        payload (bytes): file contents

    Returns:
        dict: name -> float32 array, in file order

    Raises:
        CheckpointMagicError: the payload does not start with b"CKPT"
        CheckpointTruncatedError: the payload ends early
    """
    if payload[:4] != MAGIC:
        raise CheckpointMagicError(f"bad checkpoint magic {payload[:4]!r}")
    reader = _Reader(payload)
    reader.offset = 4
    (count,) = reader.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "name").decode("utf-8")
        (ndim,) = reader.unpack("<B", f"{name} rank")
        dims = reader.unpack(f"<{ndim}I", f"{name} dims")
        size = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(reader.take(4 * size, f"{name} data"), dtype="<f4")
        tensors[name] = data.reshape(dims).astype(np.float32)
    if reader.offset != len(payload):
        logger.warning(f"{len(payload) - reader.offset} trailing bytes after checkpoint payload")
    return tensors


def save_checkpoint(path, tensors):
    """Write a CKPT file, creating parent directories."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    payload = encode_checkpoint(tensors)
    with open(path, "wb") as f:
        f.write(payload)
    logger.info(f"Saved checkpoint {path} ({len(tensors)} tensors, {len(payload)} bytes)")


def load_checkpoint(path):
    """
    Read a CKPT file.

    Raises:
        CheckpointError: when the file is missing or malformed
    """
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except FileNotFoundError as e:
        logger.error(f"Checkpoint not found: {path}")
        raise CheckpointError(f"checkpoint not found: {path}") from e
    try:
        return decode_checkpoint(payload)
    except CheckpointError as e:
        logger.error(f"Failed to read checkpoint {path}: {e}")
        raise


def save_modules(path, modules, extra=None):
    """
    Save several modules into one checkpoint.

    Args:
        path (str): output file
        modules (dict): prefix -> Module; names become ``<prefix>.<param>``
            (an empty prefix keeps the module's own names)
        extra (dict, optional): additional name -> array entries (optimizer
            moments, epoch counter)
    """
    tensors = {}
    for prefix, module in modules.items():
        for name, value in module.state_dict().items():
            tensors[f"{prefix}.{name}" if prefix else name] = value
    if extra:
        tensors.update(extra)
    save_checkpoint(path, tensors)


def load_modules(path, modules, strict=True):
    """
    Restore modules saved by ``save_modules``.

    Returns:
        dict: every entry of the file (so callers can pick up extras)
    """
    tensors = load_checkpoint(path)
    for prefix, module in modules.items():
        if prefix:
            head = f"{prefix}."
            state = {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}
        else:
            state = tensors
        module.load_state_dict(state, strict=strict)
    return tensors
