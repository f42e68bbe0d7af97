"""Grid geometry, field containers, and the shared pipeline configuration.

Conventions used by every stage:

* pixel coordinates are (y, x), row-major, flat index ``i = y * width + x``
* displacement vectors are stored as (dy, dx) in pixel units
* class ids run 1..C; 0 is background; plane ``c - 1`` of a score stack
  holds class ``c``
"""

from dataclasses import dataclass, field
import math

import numpy as np

# Seed-map code for "no confident label". Class ids are therefore <= 254.
NEUTRAL = 255
BACKGROUND = 0


@dataclass(frozen=True)
class GridShape:
    """Integer raster dimensions plus flat-index helpers."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.height}x{self.width}")

    @property
    def size(self) -> int:
        return self.height * self.width

    @property
    def diagonal(self) -> float:
        return math.hypot(self.height, self.width)

    def flat_index(self, y, x):
        """Row-major flat index; accepts scalars or arrays."""
        return np.asarray(y) * self.width + np.asarray(x)

    def coords(self, i):
        """Inverse of flat_index: returns (y, x)."""
        i = np.asarray(i)
        return i // self.width, i % self.width

    def in_bounds(self, y, x):
        return (0 <= np.asarray(y)) & (np.asarray(y) < self.height) \
            & (0 <= np.asarray(x)) & (np.asarray(x) < self.width)


def _check_plane_stack(planes: np.ndarray, shape: GridShape, what: str) -> None:
    if planes.ndim != 3 or planes.shape[1:] != (shape.height, shape.width):
        raise ValueError(f"{what} planes must be (C, {shape.height}, {shape.width}), got {planes.shape}")
    if not np.isfinite(planes).all():
        raise ValueError(f"{what} planes contain non-finite values")


@dataclass
class RawScoreStack:
    """Unnormalized per-class score planes straight from an upstream scorer."""

    shape: GridShape
    planes: np.ndarray  # (C, H, W) float, >= 0
    present_classes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        _check_plane_stack(self.planes, self.shape, "raw score")
        if (self.planes < 0).any():
            raise ValueError("raw score planes must be non-negative")
        c = self.planes.shape[0]
        if c > NEUTRAL - 1:
            raise ValueError(f"at most {NEUTRAL - 1} classes supported, got {c}")
        bad = [k for k in self.present_classes if not 1 <= k <= c]
        if bad:
            raise ValueError(f"present classes {bad} outside 1..{c}")
        for k in range(1, c + 1):
            if k not in self.present_classes and self.planes[k - 1].any():
                raise ValueError(f"class {k} is absent but its plane is nonzero")

    @property
    def num_classes(self) -> int:
        return self.planes.shape[0]


@dataclass
class ScoreStack:
    """Per-class attention maps, each nonzero plane scaled to peak exactly 1."""

    shape: GridShape
    planes: np.ndarray  # (C, H, W) float in [0, 1]
    present_classes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        _check_plane_stack(self.planes, self.shape, "score")
        if (self.planes < 0).any() or (self.planes > 1).any():
            raise ValueError("score planes must lie in [0, 1]")
        for k in range(1, self.planes.shape[0] + 1):
            plane = self.planes[k - 1]
            if plane.any() and plane.max() != 1.0:
                raise ValueError(f"nonzero plane for class {k} must peak at exactly 1")

    @property
    def num_classes(self) -> int:
        return self.planes.shape[0]


@dataclass
class DisplacementField:
    """Per-pixel (dy, dx) vectors pointing toward an instance anchor."""

    shape: GridShape
    vectors: np.ndarray  # (H, W, 2) float

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (self.shape.height, self.shape.width, 2):
            raise ValueError(
                f"displacement vectors must be ({self.shape.height}, {self.shape.width}, 2),"
                f" got {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise ValueError("displacement field contains non-finite values")
        mag = np.hypot(self.vectors[..., 0], self.vectors[..., 1])
        if mag.max(initial=0.0) > self.shape.diagonal:
            raise ValueError("displacement magnitude exceeds the grid diagonal")

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.vectors[..., 0], self.vectors[..., 1])


@dataclass
class BoundaryMap:
    """Per-pixel class-boundary probability in [0, 1]."""

    shape: GridShape
    values: np.ndarray  # (H, W) float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.shape.height, self.shape.width):
            raise ValueError(
                f"boundary map must be ({self.shape.height}, {self.shape.width}), got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("boundary map contains non-finite values")
        if (self.values < 0).any() or (self.values > 1).any():
            raise ValueError("boundary values must lie in [0, 1]")


@dataclass
class LabelImage:
    """Paired class and instance id planes; 0 means background in both."""

    shape: GridShape
    class_plane: np.ndarray     # (H, W) int32, 0 = background
    instance_plane: np.ndarray  # (H, W) int32, 0 = background

    def __post_init__(self):
        self.class_plane = np.asarray(self.class_plane, dtype=np.int32)
        self.instance_plane = np.asarray(self.instance_plane, dtype=np.int32)
        hw = (self.shape.height, self.shape.width)
        if self.class_plane.shape != hw or self.instance_plane.shape != hw:
            raise ValueError(f"label planes must be {hw}")
        if (self.class_plane < 0).any() or (self.instance_plane < 0).any():
            raise ValueError("label ids must be non-negative")
        if ((self.class_plane == 0) != (self.instance_plane == 0)).any():
            raise ValueError("background must agree between class and instance planes")
        # every instance id carries exactly one class
        inst = self.instance_plane.ravel()
        cls = self.class_plane.ravel()
        fg = inst > 0
        if fg.any():
            order = np.argsort(inst[fg], kind="stable")
            ids, cs = inst[fg][order], cls[fg][order]
            starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
            for s, e in zip(starts, np.r_[starts[1:], len(ids)]):
                if (cs[s:e] != cs[s]).any():
                    raise ValueError(f"instance id {ids[s]} spans multiple classes")

    def instance_ids(self) -> np.ndarray:
        ids = np.unique(self.instance_plane)
        return ids[ids > 0]


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs shared across stages, with the stock defaults."""

    theta_fg: float = 0.3        # seed confidence floor for a class label
    theta_bg: float = 0.05       # seed ceiling for a background label
    gamma_train: float = 10.0    # pair-mining radius while fitting fields
    gamma_infer: float = 5.0     # pair radius for the affinity graph
    beta: float = 10.0           # affinity sharpening exponent
    walk_iters: int = 256        # random-walk propagation steps
    refine_iters: int = 100      # displacement refinement iterations
    centroid_threshold: float = 2.5   # |D| below this marks a centroid candidate
    bg_percentile: float = 0.25  # background cutoff for synthesized labels
    eps_clamp: float = 1e-5      # affinity clamp inside the boundary loss
    snap_radius: float = 5.0     # instance-map rescue radius in pixels

    def __post_init__(self):
        if not 0.0 < self.theta_bg < self.theta_fg < 1.0:
            raise ValueError("need 0 < theta_bg < theta_fg < 1")
        if self.gamma_train < 1.0 or self.gamma_infer < 1.0:
            raise ValueError("pair radii must be >= 1")
        if self.beta < 1.0:
            raise ValueError("beta must be >= 1")
        if self.walk_iters < 1:
            raise ValueError("walk_iters must be >= 1")
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be >= 0")
        if self.centroid_threshold <= 0:
            raise ValueError("centroid_threshold must be positive")
        if not 0.0 <= self.bg_percentile <= 1.0:
            raise ValueError("bg_percentile must lie in [0, 1]")
        if not 0.0 < self.eps_clamp < 0.5:
            raise ValueError("eps_clamp must lie in (0, 0.5)")
        if self.snap_radius < 0:
            raise ValueError("snap_radius must be non-negative")
