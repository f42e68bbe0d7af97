"""Binary PGM/PPM readers and writers (maxval 255) for guides and renders."""

import numpy as np


class ImageFormatError(ValueError):
    pass


def _write_netpbm(path, magic: bytes, array: np.ndarray) -> None:
    h, w = array.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(array, dtype=np.uint8).tobytes())


def write_pgm(path, plane: np.ndarray) -> None:
    """Write a (H, W) uint8 plane as binary P5."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ImageFormatError(f"PGM plane must be 2-D, got shape {plane.shape}")
    _write_netpbm(path, b"P5", plane)


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write a (H, W, 3) uint8 image as binary P6."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ImageFormatError(f"PPM image must be (H, W, 3), got shape {pixels.shape}")
    _write_netpbm(path, b"P6", pixels)


def _read_netpbm(path, expect_magic: bytes):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != expect_magic:
        raise ImageFormatError(f"{path}: expected {expect_magic.decode()} file")
    # header = magic + width + height + maxval, whitespace separated
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric header field") from None
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    return raw[pos:], height, width


def read_pgm(path) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P5")
    if len(data) != h * w:
        raise ImageFormatError(f"{path}: expected {h * w} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def read_ppm(path) -> np.ndarray:
    data, h, w = _read_netpbm(path, b"P6")
    if len(data) != h * w * 3:
        raise ImageFormatError(f"{path}: expected {h * w * 3} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()
