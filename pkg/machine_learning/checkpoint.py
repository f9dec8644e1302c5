"""
Checkpoint container shared by the base language model, the trained adapters
and mapping networks, and the audio-frame sidecars of a dataset.

Layout (all integers little-endian):

    magic            8 bytes   b"DDSDCKPT"
    version          4 bytes   unsigned
    config length    8 bytes   unsigned, followed by the UTF-8 JSON record
    tensor count     8 bytes   unsigned
    per tensor:
        name length  8 bytes   unsigned, followed by the UTF-8 name
        rank         8 bytes   unsigned
        extents      8 bytes each
        payload      8 bytes per element, IEEE-754 float64, row-major
    checksum         8 bytes   BLAKE2b-64 of every preceding byte
"""
import hashlib
import json
import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DDSDCKPT"
VERSION = 1
CHECKSUM_BYTES = 8


class CheckpointError(IOError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size = CHECKSUM_BYTES).digest()


def encode_config(config: dict) -> bytes:
    return json.dumps(
        config, sort_keys = True, separators = (",", ":"), ensure_ascii = False,
    ).encode("utf-8")


def header_size(config: dict) -> int:
    return len(MAGIC) + 4 + 8 + len(encode_config(config)) + 8


def entry_size(name: str, shape) -> int:
    return (
        16 + len(name.encode("utf-8")) + 8 * len(shape)
        + 8 * int(np.prod(shape, dtype = np.int64))
    )


def expected_size(config: dict, tensors: dict) -> int:
    return header_size(config) + sum(
        entry_size(name, np.shape(value)) for name, value in tensors.items()
    ) + CHECKSUM_BYTES


def to_bytes(config: dict, tensors: dict) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    record = encode_config(config)
    chunks.append(struct.pack("<Q", len(record)))
    chunks.append(record)
    chunks.append(struct.pack("<Q", len(tensors)))
    for name, value in tensors.items():
        value = np.ascontiguousarray(value, dtype = "<f8")
        encoded_name = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<Q", value.ndim))
        chunks.append(struct.pack("<{}Q".format(value.ndim), *value.shape))
        chunks.append(value.tobytes(order = "C"))
    payload = b"".join(chunks)
    return payload + _checksum(payload)


def from_bytes(data: bytes, source = "<bytes>"):
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointMagicError("{}: bad magic".format(source))
    offset = len(MAGIC)
    if len(data) < offset + 4 + CHECKSUM_BYTES:
        raise CheckpointChecksumError("{}: truncated".format(source))
    (version,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if version != VERSION:
        raise CheckpointVersionError(
            "{}: format version {}, expected {}".format(
                source, version, VERSION,
            )
        )
    payload, checksum = data[:-CHECKSUM_BYTES], data[-CHECKSUM_BYTES:]
    if _checksum(payload) != checksum:
        raise CheckpointChecksumError("{}: checksum mismatch".format(source))

    (length,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    config = json.loads(data[offset:offset + length].decode("utf-8"))
    offset += length

    (count,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    tensors = OrderedDict()
    for _ in range(count):
        (length,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        name = data[offset:offset + length].decode("utf-8")
        offset += length
        (rank,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        shape = struct.unpack_from("<{}Q".format(rank), data, offset)
        offset += 8 * rank
        n = int(np.prod(shape, dtype = np.int64))
        tensors[name] = np.frombuffer(
            data, dtype = "<f8", count = n, offset = offset,
        ).reshape(shape).astype(np.float64)
        offset += 8 * n
    if offset != len(payload):
        raise CheckpointError(
            "{}: {} trailing bytes".format(source, len(payload) - offset)
        )
    return config, tensors


def save_checkpoint(path, config: dict, tensors: dict):
    with open(path, "wb") as f:
        f.write(to_bytes(config, tensors))


def load_checkpoint(path):
    """ Returns `(config, tensors)`; `tensors` keeps the saved order. """
    with open(path, "rb") as f:
        data = f.read()
    return from_bytes(data, source = str(path))
