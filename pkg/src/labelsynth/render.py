"""Overlay rendering of synthesized labels onto the guide image."""

import numpy as np

from .core import LabelImage


def _mix64(v: int) -> int:
    # splitmix64 finalizer; stable across platforms
    v = (v + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return v ^ (v >> 31)


def label_color(class_id: int, instance_id: int) -> np.ndarray:
    """Deterministic bright color for a (class, instance) pair."""
    h = _mix64((class_id << 32) | (instance_id & 0xFFFFFFFF))
    rgb = np.array([(h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF], dtype=np.float64)
    return 64.0 + rgb * (191.0 / 255.0)  # keep colors readable on dark guides


def render_overlay(guide: np.ndarray, labels: LabelImage) -> np.ndarray:
    """Blend each instance's color over the guide at 0.5 alpha and draw a
    1-px contour (pixels with a 4-neighbor outside the instance) at full
    opacity. Returns (H, W, 3) uint8."""
    guide = np.asarray(guide)
    if guide.shape != (labels.shape.height, labels.shape.width, 3):
        raise ValueError("guide and labels disagree on grid shape")
    out = guide.astype(np.float64).copy()
    inst = labels.instance_plane
    for k in np.unique(inst):
        if k == 0:
            continue
        mask = inst == k
        c = int(labels.class_plane[mask][0])
        color = label_color(c, int(k))
        out[mask] = 0.5 * out[mask] + 0.5 * color
        edge = mask.copy()
        inner = mask.copy()
        inner[:-1, :] &= mask[1:, :]
        inner[1:, :] &= mask[:-1, :]
        inner[:, :-1] &= mask[:, 1:]
        inner[:, 1:] &= mask[:, :-1]
        edge &= ~inner
        out[edge] = color
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
