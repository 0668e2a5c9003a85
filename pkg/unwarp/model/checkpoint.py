'''
Checkpoint container (".uwck").

    magic "UWCK" | u32 version | u32 config length | config (canonical JSON)
    u64 step | u64 optimizer step | u32 blob count
    per blob: u16 name length | name (UTF-8) | u8 ndim | u32 dims... |
              little-endian float32 data
    sha256 of everything above (32 bytes)

Optimizer moments are stored as extra blobs named "adam.m/<param>" and
"adam.v/<param>".
'''
import hashlib
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from unwarp.core.autodiff import default_dtype
from unwarp.core.optim import AdamWState
from unwarp.model.config import ModelConfig
from unwarp.model.params import Params, parameter_shapes
from unwarp.utils.files import atomic_write_bytes

LOG = logging.getLogger(__name__)

MAGIC = b"UWCK"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")
_COUNTERS = struct.Struct("<QQI")
_BLOB_DTYPE = np.dtype("<f4")
_DIGEST_SIZE = hashlib.sha256().digest_size

MOMENT_PREFIXES = ("adam.m/", "adam.v/")


class CheckpointError(ValueError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    config: ModelConfig
    params: Params
    step: int = 0
    optimizer: AdamWState | None = None
    version: int = FORMAT_VERSION


def validate_params(config: ModelConfig, params: Params) -> None:
    '''Every architecture parameter present exactly once, with its shape.'''
    expected = parameter_shapes(config)
    missing = sorted(set(expected) - set(params))
    unexpected = sorted(set(params) - set(expected))
    if missing or unexpected:
        raise CheckpointMismatchError(
            f"Parameter names do not match the architecture: missing "
            f"{missing[:5]}, unexpected {unexpected[:5]}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise CheckpointMismatchError(
                f"Parameter {name} has shape {tuple(params[name].shape)}, "
                f"the config expects {shape}")


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    validate_params(checkpoint.config, checkpoint.params)
    blobs = dict(checkpoint.params)
    optimizer_step = 0
    if checkpoint.optimizer is not None:
        optimizer_step = checkpoint.optimizer.step
        for name in checkpoint.params:
            blobs[MOMENT_PREFIXES[0] + name] = checkpoint.optimizer.m[name]
            blobs[MOMENT_PREFIXES[1] + name] = checkpoint.optimizer.v[name]

    config_json = checkpoint.config.to_canonical_json().encode("utf-8")
    parts = [
        _PREAMBLE.pack(MAGIC, checkpoint.version, len(config_json)),
        config_json,
        _COUNTERS.pack(checkpoint.step, optimizer_step, len(blobs)),
    ]
    for name, value in blobs.items():
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype=_BLOB_DTYPE).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(payload: bytes) -> Checkpoint:
    if len(payload) < _PREAMBLE.size + _DIGEST_SIZE:
        raise CheckpointError(f"Truncated checkpoint ({len(payload)} bytes)")
    magic, version, config_size = _PREAMBLE.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointError(f"Not a checkpoint: magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}, "
                              f"this build reads version {FORMAT_VERSION}")
    body, digest = payload[:-_DIGEST_SIZE], payload[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(
            f"Checkpoint (version {version}) failed its checksum")

    reader = _Reader(body, _PREAMBLE.size)
    config = ModelConfig.from_dict(
        json.loads(reader.take(config_size).decode("utf-8")))
    step, optimizer_step, count = reader.unpack(_COUNTERS)

    dtype = default_dtype()
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_size,) = reader.unpack(struct.Struct("<H"))
        name = reader.take(name_size).decode("utf-8")
        (ndim,) = reader.unpack(struct.Struct("<B"))
        shape = reader.unpack(struct.Struct(f"<{ndim}I"))
        size = int(np.prod(shape, dtype=np.int64)) * _BLOB_DTYPE.itemsize
        data = np.frombuffer(reader.take(size), dtype=_BLOB_DTYPE)
        if name in blobs:
            raise CheckpointError(f"Parameter {name} appears twice")
        blobs[name] = data.reshape(shape).astype(dtype)
    if reader.offset != len(body):
        raise CheckpointError(
            f"{len(body) - reader.offset} trailing bytes after the last blob")

    params = {
        name: value
        for name, value in blobs.items()
        if not name.startswith(MOMENT_PREFIXES)
    }
    validate_params(config, params)
    optimizer = None
    if any(name.startswith(MOMENT_PREFIXES) for name in blobs):
        optimizer = AdamWState(
            m={name: blobs[MOMENT_PREFIXES[0] + name] for name in params},
            v={name: blobs[MOMENT_PREFIXES[1] + name] for name in params},
            step=optimizer_step)
    return Checkpoint(config, params, step, optimizer, version)


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    atomic_write_bytes(path, encode_checkpoint(checkpoint))
    LOG.info("Saved checkpoint at step %d to %s", checkpoint.step, path)


def load_checkpoint(path: str,
                    expected: ModelConfig | None = None) -> Checkpoint:
    '''
    Reads a checkpoint. With `expected`, the stored parameters must also fit
    that config's architecture.
    '''
    with open(path, "rb") as f:
        checkpoint = decode_checkpoint(f.read())
    if expected is not None:
        validate_params(expected, checkpoint.params)
    return checkpoint


#
# Private helpers.
#


class _Reader:

    def __init__(self, payload: bytes, offset: int) -> None:
        self.payload = payload
        self.offset = offset

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError(
                f"Checkpoint ends early: need {size} bytes at offset "
                f"{self.offset}, have {len(self.payload) - self.offset}")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct) -> tuple[int, ...]:
        return layout.unpack(self.take(layout.size))
