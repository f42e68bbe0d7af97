"""From a displacement field to an instance map.

The chain: recenter the field against the confident seeds, iterate the
self-composition refinement until targets stop moving, collect pixels
whose refined vector is short into 8-connected centroid components, and
assign every pixel the component its refined target lands in (with a
bounded nearest-candidate rescue for near misses).
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BACKGROUND, NEUTRAL, DisplacementField, GridShape
from .seeding import ClassSeedMap


@dataclass
class CentroidSet:
    """8-connected components of centroid candidate pixels.

    component_id_plane holds 0 for non-candidates and 1..K otherwise;
    ids are ordered by each component's smallest flat pixel index.
    """

    shape: GridShape
    component_id_plane: np.ndarray  # (H, W) int32

    def __post_init__(self):
        self.component_id_plane = np.asarray(self.component_id_plane, dtype=np.int32)
        if self.component_id_plane.shape != (self.shape.height, self.shape.width):
            raise ValueError("component plane shape mismatch")
        if (self.component_id_plane < 0).any():
            raise ValueError("component ids must be non-negative")

    @property
    def num_components(self) -> int:
        return int(self.component_id_plane.max(initial=0))

    def components(self) -> list[np.ndarray]:
        """Flat pixel indices per component, index 0 holding component 1."""
        flat = self.component_id_plane.ravel()
        return [np.flatnonzero(flat == k) for k in range(1, self.num_components + 1)]


@dataclass
class InstanceMap:
    """Per-pixel instance component id, 0 where unassigned."""

    shape: GridShape
    ids: np.ndarray  # (H, W) int32

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32)
        if self.ids.shape != (self.shape.height, self.shape.width):
            raise ValueError("instance map shape mismatch")
        if (self.ids < 0).any():
            raise ValueError("instance ids must be non-negative")


def center_displacement(disp: DisplacementField, seeds: ClassSeedMap) -> DisplacementField:
    """Subtract the mean vector over class-labeled seed pixels, making the
    field's anchors observable as near-zero vectors. Falls back to the
    global mean when no pixel carries a class seed."""
    if disp.shape != seeds.shape:
        raise ValueError("field and seeds disagree on grid shape")
    mask = (seeds.labels != BACKGROUND) & (seeds.labels != NEUTRAL)
    if mask.any():
        mean = disp.vectors[mask].mean(axis=0)
    else:
        mean = disp.vectors.reshape(-1, 2).mean(axis=0)
    return DisplacementField(disp.shape, disp.vectors - mean)


def _round_half_up(a: np.ndarray) -> np.ndarray:
    return np.floor(a + 0.5).astype(np.int64)


def refine_displacement(disp: DisplacementField, iters: int = 100) -> DisplacementField:
    """Compose the field with itself: each pixel's target repeatedly takes
    one more hop through the ORIGINAL field, looked up at the rounded,
    border-clamped target. Stops early once no target moves by 0.5 px or
    more; accumulated targets are kept inside the grid box so the result
    stays a valid field."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    h, w = disp.shape.height, disp.shape.width
    base = disp.vectors
    cur = base.copy()
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(iters):
        ty = ys + cur[..., 0]
        tx = xs + cur[..., 1]
        ry = np.clip(_round_half_up(ty), 0, h - 1)
        rx = np.clip(_round_half_up(tx), 0, w - 1)
        upd = base[ry, rx]
        cur = cur + upd
        np.clip(ys + cur[..., 0], 0.0, h - 1.0, out=cur[..., 0])
        np.clip(xs + cur[..., 1], 0.0, w - 1.0, out=cur[..., 1])
        cur[..., 0] -= ys
        cur[..., 1] -= xs
        if np.hypot(upd[..., 0], upd[..., 1]).max() < 0.5:
            break
    return DisplacementField(disp.shape, cur)


def detect_centroids(disp: DisplacementField, threshold: float = 2.5) -> CentroidSet:
    """Pixels with vector magnitude strictly below ``threshold`` are
    centroid candidates; 8-connected candidate components are numbered
    1..K by their smallest contained flat index."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    cand = disp.magnitudes() < threshold
    labeled, n = ndimage.label(cand, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return CentroidSet(disp.shape, np.zeros_like(labeled, dtype=np.int32))
    flat_ids = np.arange(disp.shape.size).reshape(labeled.shape)
    first = ndimage.minimum(flat_ids, labels=labeled, index=np.arange(1, n + 1))
    order = np.argsort(first, kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    return CentroidSet(disp.shape, remap[labeled])


def _snap_offsets(radius: float):
    """Offsets within ``radius`` grouped by distance, nearest group first,
    excluding (0, 0)."""
    r = int(np.floor(radius))
    groups: dict[int, list[tuple[int, int]]] = {}
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            d2 = dy * dy + dx * dx
            if d2 == 0 or d2 > radius * radius:
                continue
            groups.setdefault(d2, []).append((dy, dx))
    return [groups[d2] for d2 in sorted(groups)]


def build_instance_map(disp: DisplacementField, centroids: CentroidSet,
                       snap_radius: float = 5.0) -> InstanceMap:
    """Assign each pixel the component its (rounded, clamped) displacement
    target falls in. Targets that miss every component snap to the
    component of the nearest candidate pixel within ``snap_radius``
    (distance ties pick the lowest component id); pixels still unresolved
    get 0."""
    if disp.shape != centroids.shape:
        raise ValueError("field and centroid set disagree on grid shape")
    h, w = disp.shape.height, disp.shape.width
    comp = centroids.component_id_plane
    ys, xs = np.mgrid[0:h, 0:w]
    ry = np.clip(_round_half_up(ys + disp.vectors[..., 0]), 0, h - 1)
    rx = np.clip(_round_half_up(xs + disp.vectors[..., 1]), 0, w - 1)
    ids = comp[ry, rx].astype(np.int32)
    if centroids.num_components == 0:
        return InstanceMap(disp.shape, np.zeros((h, w), dtype=np.int32))
    unresolved = ids == 0
    for group in _snap_offsets(snap_radius):
        if not unresolved.any():
            break
        uy, ux = ry[unresolved], rx[unresolved]
        best = np.full(len(uy), np.iinfo(np.int32).max, dtype=np.int64)
        for dy, dx in group:
            ny, nx = uy + dy, ux + dx
            ok = (0 <= ny) & (ny < h) & (0 <= nx) & (nx < w)
            hit = np.where(ok, comp[np.clip(ny, 0, h - 1), np.clip(nx, 0, w - 1)], 0)
            hit = np.where(hit > 0, hit, np.iinfo(np.int32).max)
            best = np.minimum(best, hit)
        found = best < np.iinfo(np.int32).max
        if found.any():
            target = ids[unresolved]
            target[found] = best[found].astype(np.int32)
            ids[unresolved] = target
            unresolved = ids == 0
    return InstanceMap(disp.shape, ids)
