"""Seed labels from attention maps: normalization, thresholding, refinement.

The refinement step is a windowed mean-field smoother guided by an RGB
image: unary potentials come from the attention scores (plus a derived
background score), pairwise messages are weighted by a truncated
Gaussian spatial kernel times a Gaussian appearance kernel, and the
smoothed class probabilities are re-thresholded with the same
foreground/background rules as the initial extraction.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .core import BACKGROUND, NEUTRAL, GridShape, RawScoreStack, ScoreStack

# Mean-field internals. The coupling weight scales the (normalized)
# neighborhood message inside the exponent; the unary floor keeps a
# zero-score label recoverable.
PAIRWISE_WEIGHT = 3.0
UNARY_FLOOR = 1e-3


@dataclass
class ClassSeedMap:
    """Per-pixel confident labels: 0 background, 1..C class, 255 neutral."""

    shape: GridShape
    labels: np.ndarray  # (H, W) uint8
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != (self.shape.height, self.shape.width):
            raise ValueError(
                f"seed map must be ({self.shape.height}, {self.shape.width}), got {self.labels.shape}")
        if not 0 <= self.num_classes <= NEUTRAL - 1:
            raise ValueError(f"num_classes out of range: {self.num_classes}")
        bad = (self.labels > self.num_classes) & (self.labels != NEUTRAL)
        if bad.any():
            raise ValueError("seed map contains labels outside 0..C and neutral")

    def class_mask(self, class_id: int) -> np.ndarray:
        if not 1 <= class_id <= self.num_classes:
            raise ValueError(f"class id {class_id} outside 1..{self.num_classes}")
        return self.labels == class_id


def normalize_cam(raw: RawScoreStack) -> ScoreStack:
    """Scale each present class plane by its spatial maximum.

    A present class whose plane is identically zero is degenerate; it is
    left zero and reported with a warning.
    """
    planes = raw.planes.copy()
    for k in sorted(raw.present_classes):
        peak = planes[k - 1].max()
        if peak == 0.0:
            warnings.warn(f"present class {k} has an all-zero score plane", RuntimeWarning)
            continue
        planes[k - 1] /= peak
    return ScoreStack(raw.shape, planes, raw.present_classes)


def extract_seeds(cams: ScoreStack, theta_fg: float = 0.3, theta_bg: float = 0.05) -> ClassSeedMap:
    """Threshold normalized scores into confident seeds.

    A pixel whose best class score exceeds ``theta_fg`` is labeled with
    that class (ties take the lowest class id); one whose best score is
    below ``theta_bg`` is background; everything between is neutral.
    """
    if not 0.0 < theta_bg < theta_fg < 1.0:
        raise ValueError("need 0 < theta_bg < theta_fg < 1")
    labels = np.full((cams.shape.height, cams.shape.width), NEUTRAL, dtype=np.uint8)
    if cams.num_classes == 0:
        labels[:] = BACKGROUND
        return ClassSeedMap(cams.shape, labels, 0)
    best = cams.planes.max(axis=0)
    winner = cams.planes.argmax(axis=0).astype(np.uint8) + 1
    labels[best > theta_fg] = winner[best > theta_fg]
    labels[best < theta_bg] = BACKGROUND
    return ClassSeedMap(cams.shape, labels, cams.num_classes)


def _unaries(cams: ScoreStack) -> np.ndarray:
    """(C+1, H, W) per-pixel label scores: channel 0 background, then classes."""
    bg = 1.0 - cams.planes.max(axis=0)
    u = np.concatenate([bg[None], cams.planes], axis=0)
    u = np.clip(u, UNARY_FLOOR, 1.0)
    return u / u.sum(axis=0, keepdims=True)


def _window_offsets(radius: int):
    offs = [(dy, dx)
            for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1)
            if (dy, dx) != (0, 0)]
    return offs


def refine_seeds(seeds: ClassSeedMap, cams: ScoreStack, guide: np.ndarray,
                 window_radius: int = 5, iters: int = 5,
                 sigma_spatial: float = 3.0, sigma_appearance: float = 13.0,
                 theta_fg: float = 0.3, theta_bg: float = 0.05) -> ClassSeedMap:
    """Mean-field smooth the score field against ``guide`` and re-threshold.

    guide: (H, W, 3) uint8 RGB. With ``iters=0`` the input seed map is
    returned unchanged. Updates are double buffered, so the result does
    not depend on pixel visiting order.
    """
    if not 0.0 < theta_bg < theta_fg < 1.0:
        raise ValueError("need 0 < theta_bg < theta_fg < 1")
    if cams.shape != seeds.shape:
        raise ValueError("seeds and scores disagree on grid shape")
    guide = np.asarray(guide)
    if guide.shape != (seeds.shape.height, seeds.shape.width, 3):
        raise ValueError(f"guide must be ({seeds.shape.height}, {seeds.shape.width}, 3)")
    if iters == 0:
        return ClassSeedMap(seeds.shape, seeds.labels.copy(), seeds.num_classes)
    if cams.num_classes == 0:
        return ClassSeedMap(seeds.shape, seeds.labels.copy(), seeds.num_classes)

    h, w = seeds.shape.height, seeds.shape.width
    g = guide.astype(np.float64)
    q = _unaries(cams)
    unary = q.copy()

    for _ in range(iters):
        msg = np.zeros_like(q)
        weight = np.zeros((h, w))
        for dy, dx in _window_offsets(window_radius):
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            if ys0 >= ys1 or xs0 >= xs1:
                continue
            dst = (slice(ys0, ys1), slice(xs0, xs1))
            src = (slice(ys0 + dy, ys1 + dy), slice(xs0 + dx, xs1 + dx))
            k_s = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma_spatial ** 2))
            diff = g[dst] - g[src]
            k = k_s * np.exp(-(diff * diff).sum(axis=2) / (2.0 * sigma_appearance ** 2))
            msg[(slice(None),) + dst] += k * q[(slice(None),) + src]
            weight[dst] += k
        np.maximum(weight, 1e-12, out=weight)
        q = unary * np.exp(PAIRWISE_WEIGHT * msg / weight)
        q /= q.sum(axis=0, keepdims=True)

    class_best = q[1:].max(axis=0)
    class_winner = q[1:].argmax(axis=0).astype(np.uint8) + 1
    labels = np.full((h, w), NEUTRAL, dtype=np.uint8)
    labels[class_best > theta_fg] = class_winner[class_best > theta_fg]
    labels[class_best < theta_bg] = BACKGROUND
    return ClassSeedMap(seeds.shape, labels, cams.num_classes)
