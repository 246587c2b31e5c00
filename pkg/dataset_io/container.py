"""
Binary container for per-video matrices.

Layout (all little-endian)::

    magic   uint32  'VSFC'
    version uint32
    rows    uint32  (T)
    cols    uint32  (D)
    payload rows*cols float32
    crc32   uint32  over header + payload
"""
import zlib

import numpy as np

from core.exceptions import ChecksumError

MAGIC = int.from_bytes(b'VSFC', 'little')
VERSION = 1
HEADER_BYTES = 16
TRAILER_BYTES = 4

_HEADER = np.dtype('<u4')
_PAYLOAD = np.dtype('<f4')


def encode_matrix(matrix) -> bytes:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f'container holds 2-d matrices, got shape {matrix.shape}')
    rows, cols = matrix.shape
    header = np.array([MAGIC, VERSION, rows, cols], dtype=_HEADER).tobytes()
    payload = np.ascontiguousarray(matrix, dtype=_PAYLOAD).tobytes()
    crc = zlib.crc32(header + payload) & 0xFFFFFFFF
    return header + payload + np.array([crc], dtype=_HEADER).tobytes()


def decode_matrix(blob: bytes) -> np.ndarray:
    if len(blob) < HEADER_BYTES + TRAILER_BYTES:
        raise ChecksumError(f'container truncated ({len(blob)} bytes)')
    magic, version, rows, cols = (int(v) for v in np.frombuffer(blob[:HEADER_BYTES], dtype=_HEADER))
    if magic != MAGIC:
        raise ChecksumError('bad container magic')
    if version != VERSION:
        raise ChecksumError(f'unsupported container version {version}')
    payload_end = HEADER_BYTES + rows * cols * _PAYLOAD.itemsize
    if len(blob) != payload_end + TRAILER_BYTES:
        raise ChecksumError(f'container size {len(blob)} does not match header {rows}x{cols}')
    stored_crc = int(np.frombuffer(blob[payload_end:], dtype=_HEADER)[0])
    if zlib.crc32(blob[:payload_end]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError('container checksum mismatch')
    payload = np.frombuffer(blob[HEADER_BYTES:payload_end], dtype=_PAYLOAD)
    return payload.reshape(rows, cols).astype(np.float32)
