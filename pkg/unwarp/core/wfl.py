'''
The ".wfl" flow file format: a 16-byte header (magic "WFL1", then height,
width and flags as little-endian u32) followed by the row-major u plane and
then the v plane, both as little-endian float32.
'''
import struct

import numpy as np

from unwarp.core.flow import WarpFlow
from unwarp.utils.files import atomic_write_bytes

MAGIC = b"WFL1"
HEADER = struct.Struct("<4sIII")
_PLANE_DTYPE = np.dtype("<f4")


class FlowFormatError(ValueError):
    pass


def encode_flow(flow: WarpFlow, flags: int = 0) -> bytes:
    header = HEADER.pack(MAGIC, flow.height, flow.width, flags)
    u_plane = np.ascontiguousarray(flow.u, dtype=_PLANE_DTYPE).tobytes()
    v_plane = np.ascontiguousarray(flow.v, dtype=_PLANE_DTYPE).tobytes()
    return header + u_plane + v_plane


def decode_flow(payload: bytes) -> tuple[WarpFlow, int]:
    '''Returns the flow (as float64 maps) and the header flags.'''
    if len(payload) < HEADER.size:
        raise FlowFormatError(
            f"Truncated header: {len(payload)} < {HEADER.size} bytes")
    magic, height, width, flags = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise FlowFormatError(f"Bad magic {magic!r}, expected {MAGIC!r}")

    plane_bytes = height * width * _PLANE_DTYPE.itemsize
    expected = HEADER.size + 2 * plane_bytes
    if len(payload) != expected:
        raise FlowFormatError(f"Expected {expected} bytes for a "
                              f"{height}×{width} flow, got {len(payload)}")

    planes = np.frombuffer(payload, dtype=_PLANE_DTYPE, offset=HEADER.size)
    u = planes[:height * width].reshape(height, width).astype(np.float64)
    v = planes[height * width:].reshape(height, width).astype(np.float64)
    return WarpFlow(u, v), int(flags)


def save_flow(path: str, flow: WarpFlow, flags: int = 0) -> None:
    atomic_write_bytes(path, encode_flow(flow, flags))


def load_flow(path: str) -> WarpFlow:
    with open(path, "rb") as f:
        flow, _ = decode_flow(f.read())
    return flow
