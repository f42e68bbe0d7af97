"""Random-walk score propagation and label synthesis.

Scores are damped by the boundary map, pushed ``t`` steps through the
row-stochastic transition operator, and finally converted to labels by
a per-pixel argmax with a background cutoff. Channels are independent,
so they may be propagated in parallel without changing the result.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import BoundaryMap, GridShape, LabelImage, ScoreStack
from .affinity import TransitionMatrix
from .instancing import InstanceMap


@dataclass
class InstanceScoreStack:
    """Score planes keyed by (class id, instance id), keys sorted."""

    shape: GridShape
    keys: tuple[tuple[int, int], ...]
    planes: np.ndarray  # (N, H, W) float in [0, 1]

    def __post_init__(self):
        self.keys = tuple((int(c), int(k)) for c, k in self.keys)
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.shape != (len(self.keys), self.shape.height, self.shape.width):
            raise ValueError("instance score planes disagree with key count or grid")
        if list(self.keys) != sorted(set(self.keys)):
            raise ValueError("keys must be unique and sorted")
        if not np.isfinite(self.planes).all() or (self.planes < 0).any():
            raise ValueError("instance scores must be finite and non-negative")
        # row normalization of the walk operator carries ~1e-15 rounding per
        # step, so "bounded by 1" leaves room for accumulated float error
        if self.planes.size and self.planes.max() > 1.0 + 1e-9:
            raise ValueError("instance scores must not exceed 1")

    def channel(self, class_id: int, instance_id: int) -> np.ndarray:
        try:
            idx = self.keys.index((class_id, instance_id))
        except ValueError:
            raise KeyError(f"no channel for class {class_id}, instance {instance_id}") from None
        return self.planes[idx]


def instance_cams(cams: ScoreStack, inst: InstanceMap) -> InstanceScoreStack:
    """Split each class plane along the instance map; channels that would
    be identically zero are dropped."""
    if cams.shape != inst.shape:
        raise ValueError("scores and instance map disagree on grid shape")
    keys, planes = [], []
    inst_ids = np.unique(inst.ids)
    inst_ids = inst_ids[inst_ids > 0]
    for c in range(1, cams.num_classes + 1):
        plane = cams.planes[c - 1]
        for k in inst_ids:
            masked = np.where(inst.ids == k, plane, 0.0)
            if masked.any():
                keys.append((c, int(k)))
                planes.append(masked)
    if not keys:
        return InstanceScoreStack(cams.shape, (), np.empty((0, cams.shape.height, cams.shape.width)))
    return InstanceScoreStack(cams.shape, tuple(keys), np.stack(planes))


def _walk(matrix, planes: np.ndarray, t: int, threads: int) -> np.ndarray:
    """Apply the operator t times to each plane (columns of one dense
    matrix). Channel blocks are independent, so the thread count cannot
    change the numbers, only the wall time."""
    n_ch = planes.shape[0]
    cols = planes.reshape(n_ch, -1).T.copy()  # (n, N)

    def run(block: np.ndarray) -> np.ndarray:
        out = block
        for _ in range(t):
            out = matrix @ out
        return out

    if threads <= 1 or n_ch <= 1:
        result = run(cols)
    else:
        chunks = np.array_split(np.arange(n_ch), min(threads, n_ch))
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda ix: run(cols[:, ix]), chunks))
        result = np.concatenate(parts, axis=1)
    return result.T.reshape(planes.shape)


def propagate(stack: InstanceScoreStack, trans: TransitionMatrix,
              boundary: BoundaryMap, t: int = 256, threads: int = 1) -> InstanceScoreStack:
    """Damp every channel by (1 - boundary) and take t walk steps."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if stack.shape != trans.shape or stack.shape != boundary.shape:
        raise ValueError("stack, transition matrix, and boundary disagree on grid shape")
    if not stack.keys:
        return InstanceScoreStack(stack.shape, (), stack.planes.copy())
    damped = stack.planes * (1.0 - boundary.values)[None]
    return InstanceScoreStack(stack.shape, stack.keys,
                              _walk(trans.matrix, damped, t, threads))


def propagate_semantic(cams: ScoreStack, trans: TransitionMatrix,
                       boundary: BoundaryMap, t: int = 256, threads: int = 1) -> np.ndarray:
    """Damp and walk the raw class planes directly; returns (C, H, W)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if cams.shape != trans.shape or cams.shape != boundary.shape:
        raise ValueError("scores, transition matrix, and boundary disagree on grid shape")
    if cams.num_classes == 0:
        return cams.planes.copy()
    damped = cams.planes * (1.0 - boundary.values)[None]
    return _walk(trans.matrix, damped, t, threads)


def _background_cutoff(best: np.ndarray, bg_percentile: float, mode: str) -> np.ndarray:
    if not 0.0 <= bg_percentile < 1.0:
        raise ValueError("bg_percentile must lie in [0, 1)")
    if mode == "quantile":
        q = float(np.quantile(best, bg_percentile))
    elif mode == "absolute":
        q = float(bg_percentile)
    else:
        raise ValueError(f"unknown background mode {mode!r}")
    # zero max means no channel spoke for the pixel at all
    return (best < q) | (best == 0.0)


def synthesize_instance_labels(stack: InstanceScoreStack, bg_percentile: float = 0.25,
                               mode: str = "quantile") -> LabelImage:
    """Per-pixel argmax over (class, instance) channels, ties taking the
    lowest key; pixels whose best score falls below the background cutoff
    (a quantile of the best-score population, or an absolute score) are
    background. An empty stack synthesizes all background, with a warning."""
    h, w = stack.shape.height, stack.shape.width
    if not stack.keys:
        warnings.warn("no score channels; synthesizing all-background labels",
                      RuntimeWarning, stacklevel=2)
        zero = np.zeros((h, w), dtype=np.int32)
        return LabelImage(stack.shape, zero, zero.copy())
    best = stack.planes.max(axis=0)
    winner = stack.planes.argmax(axis=0)
    bg = _background_cutoff(best, bg_percentile, mode)
    key_arr = np.asarray(stack.keys, dtype=np.int32)
    class_plane = key_arr[winner, 0]
    inst_plane = key_arr[winner, 1]
    class_plane[bg] = 0
    inst_plane[bg] = 0
    # the winning label is really the (class, instance) pair: one component
    # id can win under two classes, and those are distinct instances, so
    # every conflicting pair after the lowest class gets a fresh id
    fg = ~bg
    win_pairs = sorted(set(zip(class_plane[fg].tolist(), inst_plane[fg].tolist())))
    by_k: dict[int, list[int]] = {}
    for c, k in win_pairs:
        by_k.setdefault(k, []).append(c)
    next_id = max((k for _, k in win_pairs), default=0)
    for k in sorted(by_k):
        for c in by_k[k][1:]:
            next_id += 1
            inst_plane[(class_plane == c) & (inst_plane == k)] = next_id
    return LabelImage(stack.shape, class_plane, inst_plane)


def class_plane_labels(shape: GridShape, planes: np.ndarray, bg_percentile: float = 0.25,
                       mode: str = "quantile") -> LabelImage:
    """Per-pixel argmax over (C, H, W) class planes (ties to the lowest
    class id) with the background cutoff; the instance plane is set equal
    to the class plane."""
    planes = np.asarray(planes, dtype=np.float64)
    if planes.shape[0] == 0:
        warnings.warn("no class planes; synthesizing all-background labels",
                      RuntimeWarning, stacklevel=2)
        zero = np.zeros((shape.height, shape.width), dtype=np.int32)
        return LabelImage(shape, zero, zero.copy())
    best = planes.max(axis=0)
    winner = planes.argmax(axis=0).astype(np.int32) + 1
    bg = _background_cutoff(best, bg_percentile, mode)
    winner[bg] = 0
    return LabelImage(shape, winner, winner.copy())


def synthesize_semantic_labels(cams: ScoreStack, trans: TransitionMatrix,
                               boundary: BoundaryMap, t: int = 256,
                               bg_percentile: float = 0.25, mode: str = "quantile",
                               threads: int = 1) -> LabelImage:
    """Damp and walk the class planes directly, then label them per
    class_plane_labels (semantic mode marker: instance plane = class plane)."""
    planes = propagate_semantic(cams, trans, boundary, t, threads)
    return class_plane_labels(cams.shape, planes, bg_percentile, mode)
