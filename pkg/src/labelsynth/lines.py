"""Integer line rasterization between pixel pairs, and boundary affinity.

The pixel set of a line is direction independent: endpoints are put in
lexicographic (y, x) order before stepping, so querying (i, j) and
(j, i) yields the identical sequence. Stepping walks the major axis one
pixel at a time; the minor coordinate is the exact rational midpoint
rounded half up, computed in integer arithmetic.
"""

import functools

import numpy as np

from .core import GridShape


def _canonical(a: tuple[int, int], b: tuple[int, int]):
    return (a, b) if a <= b else (b, a)


def line_pixels(i: int, j: int, shape: GridShape) -> np.ndarray:
    """All pixels on the discrete segment between flat indices i and j,
    endpoints included, as an (L, 2) array of (y, x) rows."""
    yi, xi = (int(v) for v in shape.coords(int(i)))
    yj, xj = (int(v) for v in shape.coords(int(j)))
    (y0, x0), (y1, x1) = _canonical((yi, xi), (yj, xj))
    dy, dx = y1 - y0, x1 - x0
    steps = max(abs(dy), abs(dx))
    if steps == 0:
        return np.array([[y0, x0]], dtype=np.int64)
    s = np.arange(steps + 1, dtype=np.int64)
    if abs(dy) >= abs(dx):
        # y-major; dy >= 1 after canonical ordering
        ys = y0 + s
        xs = x0 + (2 * dx * s + dy) // (2 * dy)
    else:
        # x-major; the minor value is dy*s/|dx| whichever way x steps
        adx = abs(dx)
        xs = x0 + (1 if dx > 0 else -1) * s
        ys = y0 + (2 * dy * s + adx) // (2 * adx)
    return np.stack([ys, xs], axis=1)


@functools.lru_cache(maxsize=None)
def line_flat_offsets(dy: int, dx: int, width: int) -> np.ndarray:
    """Flat-index offsets of the line from (0, 0) to (dy, dx) relative to
    its canonical start pixel. Valid for any base pixel whose pair stays
    in bounds, since midpoint lines are translation invariant."""
    if dy < 0 or (dy == 0 and dx <= 0):
        raise ValueError("offset must point at a larger flat index")
    # embed far from borders so flat arithmetic cannot wrap
    shape = GridShape(dy + 1, width)
    base_x = -dx if dx < 0 else 0
    pix = line_pixels(shape.flat_index(0, base_x), shape.flat_index(dy, base_x + dx), shape)
    flat = pix[:, 0] * width + pix[:, 1]
    return flat - (0 * width + base_x)


def pair_affinity(boundary: np.ndarray, i: int, j: int, shape: GridShape) -> float:
    """1 minus the strongest boundary value on the segment between i and j."""
    pix = line_pixels(i, j, shape)
    return float(1.0 - boundary[pix[:, 0], pix[:, 1]].max())
