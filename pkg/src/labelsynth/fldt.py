"""Flat little-endian tensor files, the pipeline's on-disk interchange format.

Layout: bytes 0-3 magic ``FLDT``; byte 4 format version (1); byte 5 dtype
code (0 = f32, 1 = u8, 2 = i32); byte 6 ndim; byte 7 reserved zero; then
ndim little-endian u32 dimensions; then the row-major little-endian payload.
"""

import struct

import numpy as np

MAGIC = b"FLDT"
VERSION = 1

_CODE_TO_DTYPE = {
    0: np.dtype("<f4"),
    1: np.dtype("u1"),
    2: np.dtype("<i4"),
}
_KIND_TO_CODE = {"f": 0, "u": 1, "i": 2}


class FldtError(ValueError):
    """Base error for malformed tensor files."""


class BadMagicError(FldtError):
    pass


class UnknownDtypeError(FldtError):
    pass


class TruncatedPayloadError(FldtError):
    pass


def _dtype_code(array: np.ndarray) -> int:
    code = _KIND_TO_CODE.get(array.dtype.kind)
    if code is None:
        raise FldtError(f"unsupported array dtype {array.dtype}")
    return code


def write_tensor(path, array: np.ndarray) -> None:
    """Serialize ``array`` (float -> f32, uint -> u8, int -> i32).

    Writes are byte-reproducible: the same array always produces the
    same file.
    """
    array = np.asarray(array)
    if array.ndim < 1:
        raise FldtError("zero-dimensional tensors are not supported")
    code = _dtype_code(array)
    dtype = _CODE_TO_DTYPE[code]
    if array.dtype.kind == "u" and array.max(initial=0) > 255:
        raise FldtError("u8 tensor values exceed 255")
    if any(d > 0xFFFFFFFF for d in array.shape):
        raise FldtError("dimension exceeds u32 range")
    data = np.ascontiguousarray(array, dtype=dtype)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BBBB", VERSION, code, array.ndim, 0))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(data.tobytes())


def read_tensor(path) -> np.ndarray:
    """Exact inverse of write_tensor; returns a native-order array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a FLDT tensor (bad magic)")
    if len(raw) < 8:
        raise TruncatedPayloadError(f"{path}: truncated header")
    version, code, ndim, _reserved = struct.unpack_from("<BBBB", raw, 4)
    if version != VERSION:
        raise FldtError(f"{path}: unsupported format version {version}")
    if code not in _CODE_TO_DTYPE:
        raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
    dims_end = 8 + 4 * ndim
    if len(raw) < dims_end:
        raise TruncatedPayloadError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    dtype = _CODE_TO_DTYPE[code]
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + count * dtype.itemsize
    if len(raw) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {(len(raw) - dims_end) // dtype.itemsize}"
            f" of {count} elements")
    if len(raw) > expected:
        raise FldtError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    array = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return array.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
