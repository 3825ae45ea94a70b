"""Binary file formats for frames (NSF1), masks (NSM1) and probability maps (NSP1).

All three share one header layout: 4 magic bytes, then height and width as
little-endian uint32, then the row-major payload.
"""
import struct

import numpy as np

from .errors import FormatError, StorageError

_HEADER = struct.Struct("<4sII")

FRAME_MAGIC = b"NSF1"
MASK_MAGIC = b"NSM1"
PROB_MAGIC = b"NSP1"

_PAYLOAD = {
    FRAME_MAGIC: np.dtype("<f4"),
    MASK_MAGIC: np.dtype("u1"),
    PROB_MAGIC: np.dtype("<f4"),
}


def encode_grid(magic, grid):
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {grid.shape}")
    h, w = grid.shape
    payload = np.ascontiguousarray(grid, dtype=_PAYLOAD[magic]).tobytes()
    return _HEADER.pack(magic, h, w) + payload


def decode_grid(magic, data, name="<bytes>"):
    if len(data) < _HEADER.size:
        raise FormatError(f"{name}: truncated header", offset=len(data))
    found, h, w = _HEADER.unpack_from(data, 0)
    if found != magic:
        raise FormatError(f"{name}: bad magic {found!r}, expected {magic!r}", offset=0)
    dtype = _PAYLOAD[magic]
    need = _HEADER.size + h * w * dtype.itemsize
    if len(data) != need:
        raise FormatError(
            f"{name}: payload size mismatch ({len(data)} bytes, expected {need})",
            offset=min(len(data), need),
        )
    grid = np.frombuffer(data, dtype=dtype, offset=_HEADER.size).reshape(h, w)
    return grid.astype(dtype.newbyteorder("="))


def _write(path, magic, grid):
    try:
        with open(path, "wb") as fh:
            fh.write(encode_grid(magic, grid))
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _read(path, magic):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return decode_grid(magic, data, name=str(path))


def write_frame(path, frame):
    _write(path, FRAME_MAGIC, frame)


def read_frame(path):
    return _read(path, FRAME_MAGIC)


def write_mask(path, mask):
    _write(path, MASK_MAGIC, mask)


def read_mask(path):
    return _read(path, MASK_MAGIC)


def write_probmap(path, probs):
    _write(path, PROB_MAGIC, probs)


def read_probmap(path):
    return _read(path, PROB_MAGIC)
