"""Mining of confidently labeled pixel pairs inside a search radius.

Pairs are unordered and stored with the smaller flat index first. The
partition rules: both endpoints share a non-background class (fg_pos),
both are background (bg_pos), or the labels differ (neg). Pixels with a
neutral label never participate.
"""

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BACKGROUND, NEUTRAL, GridShape
from .seeding import ClassSeedMap


@dataclass
class PairSet:
    """Flat-index pair lists, one array of shape (N, 2) per partition."""

    shape: GridShape
    radius: float
    fg_pos: np.ndarray
    bg_pos: np.ndarray
    neg: np.ndarray
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("fg_pos", "bg_pos", "neg"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            setattr(self, name, arr)
            if arr.size and not (arr[:, 0] < arr[:, 1]).all():
                raise ValueError(f"{name} pairs must be ordered i < j")
            if arr.size and (arr.min() < 0 or arr.max() >= self.shape.size):
                raise ValueError(f"{name} pair indices out of range")

    @property
    def total(self) -> int:
        return len(self.fg_pos) + len(self.bg_pos) + len(self.neg)


@functools.lru_cache(maxsize=None)
def half_offsets(radius: float) -> tuple[tuple[int, int], ...]:
    """Offsets (dy, dx) with 0 < hypot < radius pointing at larger flat
    indices (dy > 0, or dy == 0 and dx > 0), sorted lexicographically."""
    r = int(math.ceil(radius))
    out = []
    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx <= 0:
                continue
            if 0 < math.hypot(dy, dx) < radius:
                out.append((dy, dx))
    return tuple(out)


def pair_displacement(i, j, shape: GridShape) -> np.ndarray:
    """Geometric offset coords(j) - coords(i) as (dy, dx); array friendly."""
    yi, xi = shape.coords(i)
    yj, xj = shape.coords(j)
    return np.stack([np.asarray(yj - yi), np.asarray(xj - xi)], axis=-1)


def _subsample(pairs: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if len(pairs) <= cap:
        return pairs
    keep = rng.choice(len(pairs), size=cap, replace=False)
    keep.sort()
    return pairs[keep]


def mine_pairs(seeds: ClassSeedMap, gamma: float, max_pairs: int | None = None,
               seed: int = 0) -> PairSet:
    """Enumerate all eligible pairs strictly closer than ``gamma``.

    Enumeration is exhaustive and deterministic (row-major base pixel, a
    fixed offset table). ``max_pairs`` caps each partition with a seeded
    uniform subsample; surviving pairs keep their canonical order.
    """
    if gamma < 1.0:
        raise ValueError("gamma must be >= 1")
    labels = seeds.labels
    h, w = seeds.shape.height, seeds.shape.width
    flat = np.arange(h * w, dtype=np.int64).reshape(h, w)

    parts = {"fg": [], "bg": [], "neg": []}
    for dy, dx in half_offsets(float(gamma)):
        ys0, ys1 = 0, h - dy
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        if ys0 >= ys1 or xs0 >= xs1:
            continue
        li = labels[ys0:ys1, xs0:xs1]
        lj = labels[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
        ii = flat[ys0:ys1, xs0:xs1]
        jj = flat[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
        ok = (li != NEUTRAL) & (lj != NEUTRAL)
        fg = ok & (li == lj) & (li != BACKGROUND)
        bg = ok & (li == BACKGROUND) & (lj == BACKGROUND)
        ng = ok & (li != lj)
        for key, mask in (("fg", fg), ("bg", bg), ("neg", ng)):
            if mask.any():
                parts[key].append(np.stack([ii[mask], jj[mask]], axis=1))

    out = {}
    for idx, key in enumerate(("fg", "bg", "neg")):
        if parts[key]:
            arr = np.concatenate(parts[key], axis=0)
            order = np.lexsort((arr[:, 1], arr[:, 0]))
            arr = arr[order]
        else:
            arr = np.empty((0, 2), dtype=np.int64)
        if max_pairs is not None and len(arr) > max_pairs:
            rng = np.random.Generator(np.random.PCG64([seed, idx]))
            arr = _subsample(arr, max_pairs, rng)
        out[key] = arr
    return PairSet(seeds.shape, float(gamma), out["fg"], out["bg"], out["neg"])
