"""Seeded synthetic scenes with exact ground truth.

Scenes rasterize declared instances in order (later declarations
occlude earlier ones) and come with an RGB guide, simulated partial
attention maps, and analytically derived oracle displacement/boundary
fields for closed-loop testing.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import DisplacementField, BoundaryMap, GridShape, LabelImage, ScoreStack

KINDS = ("ellipse", "rectangle", "blob")

# distinct, stable base colors: golden-angle hue stepping
_BG_COLOR = np.array([40.0, 40.0, 40.0])


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceSpec:
    """One shape declaration.

    params by kind: ellipse (cy, cx, ry, rx); rectangle (y0, x0, y1, x1)
    with inclusive corners; blob (cy, cx, r) with seeded radial wobble.
    """

    class_id: int
    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GenerationError(f"unknown instance kind {self.kind!r}")
        need = {"ellipse": 4, "rectangle": 4, "blob": 3}[self.kind]
        if len(self.params) != need:
            raise GenerationError(f"{self.kind} takes {need} params, got {len(self.params)}")
        if self.class_id < 1:
            raise GenerationError("class ids start at 1")


@dataclass(frozen=True)
class CamParams:
    """Knobs for the simulated attention maps."""

    max_parts: int = 3       # parts drawn per instance: 1..max_parts
    part_sigma: float = 2.0  # Gaussian width floor in pixels
    coverage: float = 0.5    # width scale relative to the instance radius
    noise_amp: float = 0.04  # uniform background noise ceiling
    dilate: int = 2          # support dilation radius in pixels

    def __post_init__(self):
        if self.max_parts < 1:
            raise GenerationError("max_parts must be >= 1")
        if self.part_sigma <= 0 or self.coverage < 0:
            raise GenerationError("part_sigma must be positive, coverage non-negative")
        if not 0.0 <= self.noise_amp < 1.0:
            raise GenerationError("noise_amp must lie in [0, 1)")


@dataclass(frozen=True)
class SceneSpec:
    shape: GridShape
    num_classes: int
    instances: tuple[InstanceSpec, ...]
    seed: int = 0
    guide_noise: float = 8.0
    cam: CamParams = field(default_factory=CamParams)

    def __post_init__(self):
        if self.num_classes < 1:
            raise GenerationError("need at least one class")
        if not self.instances:
            raise GenerationError("need at least one instance")
        for idx, ins in enumerate(self.instances):
            if ins.class_id > self.num_classes:
                raise GenerationError(f"instance {idx + 1} uses class {ins.class_id} > {self.num_classes}")


@dataclass
class GroundTruth:
    labels: LabelImage
    guide: np.ndarray  # (H, W, 3) uint8
    num_classes: int


def instance_color(n: int) -> np.ndarray:
    """Stable bright RGB for instance index n (1-based)."""
    hue = (n * 0.6180339887498949) % 1.0
    i = int(hue * 6.0)
    f = hue * 6.0 - i
    v, p, q, t = 230.0, 60.0, 230.0 - 170.0 * f, 60.0 + 170.0 * f
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i % 6]
    return np.array(rgb)


def _raster_mask(ins: InstanceSpec, shape: GridShape, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:shape.height, 0:shape.width]
    if ins.kind == "ellipse":
        cy, cx, ry, rx = ins.params
        if ry <= 0 or rx <= 0:
            raise GenerationError("ellipse radii must be positive")
        return ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    if ins.kind == "rectangle":
        y0, x0, y1, x1 = (int(v) for v in ins.params)
        if y1 < y0 or x1 < x0:
            raise GenerationError("rectangle corners must be ordered")
        return (ys >= y0) & (ys <= y1) & (xs >= x0) & (xs <= x1)
    # blob: circle with two seeded radial harmonics
    cy, cx, r = ins.params
    if r <= 0:
        raise GenerationError("blob radius must be positive")
    ph1, ph2 = rng.uniform(0.0, 2.0 * math.pi, size=2)
    theta = np.arctan2(ys - cy, xs - cx)
    wobble = 1.0 + 0.25 * np.sin(3 * theta + ph1) + 0.15 * np.sin(5 * theta + ph2)
    return np.hypot(ys - cy, xs - cx) <= r * wobble


def gen_scene(spec: SceneSpec) -> GroundTruth:
    """Rasterize the declared instances and build the guide image.

    Later declarations occlude earlier ones; an instance left without a
    single visible pixel is an error naming its (1-based) index.
    """
    h, w = spec.shape.height, spec.shape.width
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    inst_plane = np.zeros((h, w), dtype=np.int32)
    class_plane = np.zeros((h, w), dtype=np.int32)
    for idx, ins in enumerate(spec.instances, start=1):
        mask = _raster_mask(ins, spec.shape, rng)
        inst_plane[mask] = idx
        class_plane[mask] = ins.class_id
    for idx in range(1, len(spec.instances) + 1):
        if not (inst_plane == idx).any():
            raise GenerationError(f"instance {idx} has no visible pixels after occlusion")

    guide = np.tile(_BG_COLOR, (h, w, 1))
    for idx in range(1, len(spec.instances) + 1):
        guide[inst_plane == idx] = instance_color(idx)
    if spec.guide_noise > 0:
        guide = guide + rng.uniform(-spec.guide_noise, spec.guide_noise, size=(h, w, 3))
    guide = np.clip(guide, 0, 255).astype(np.uint8)
    labels = LabelImage(spec.shape, class_plane, inst_plane)
    return GroundTruth(labels, guide, spec.num_classes)


def simulate_cams(gt: GroundTruth, cam: CamParams = CamParams(), seed: int = 0) -> ScoreStack:
    """Partial attention maps: per instance, 1..max_parts Gaussians centered
    on its pixels, clipped to [0, 1], zeroed outside the dilated class
    support, plus bounded uniform noise, then peak-normalized per class."""
    h, w = gt.labels.shape.height, gt.labels.shape.width
    rng = np.random.Generator(np.random.PCG64(seed))
    ys, xs = np.mgrid[0:h, 0:w]
    planes = np.zeros((gt.num_classes, h, w))
    support = np.zeros((gt.num_classes, h, w), dtype=bool)
    struct = ndimage.generate_binary_structure(2, 1)
    present = set()
    for k in sorted(np.unique(gt.labels.instance_plane[gt.labels.instance_plane > 0])):
        mask = gt.labels.instance_plane == k
        c = int(gt.labels.class_plane[mask][0])
        present.add(c)
        area = int(mask.sum())
        sigma = max(cam.part_sigma, cam.coverage * math.sqrt(area / math.pi))
        my, mx = np.nonzero(mask)
        n_parts = int(rng.integers(1, cam.max_parts + 1))
        centers = rng.choice(len(my), size=min(n_parts, len(my)), replace=False)
        for ci in centers:
            d2 = (ys - my[ci]) ** 2.0 + (xs - mx[ci]) ** 2.0
            planes[c - 1] += np.exp(-d2 / (2.0 * sigma * sigma))
        support[c - 1] |= ndimage.binary_dilation(mask, structure=struct,
                                                  iterations=cam.dilate)
    planes = np.clip(planes, 0.0, 1.0)
    planes[~support] = 0.0
    if cam.noise_amp > 0:
        planes = np.clip(planes + cam.noise_amp * rng.uniform(0.0, 1.0, planes.shape), 0.0, 1.0)
    for c in range(1, gt.num_classes + 1):
        if c not in present:
            planes[c - 1] = 0.0  # absent classes never fire
            continue
        peak = planes[c - 1].max()
        if peak > 0:
            planes[c - 1] /= peak
    return ScoreStack(gt.labels.shape, planes, frozenset(present))


def oracle_fields(gt: GroundTruth) -> tuple[DisplacementField, BoundaryMap]:
    """Exact supervision targets: displacement points from each instance
    pixel to its instance's grid-snapped centroid (background pixels get
    the zero vector); the boundary is 1 exactly where a 4-neighbor holds
    a different class, background counting as a class."""
    h, w = gt.labels.shape.height, gt.labels.shape.width
    vectors = np.zeros((h, w, 2))
    for k in np.unique(gt.labels.instance_plane):
        if k == 0:
            continue
        my, mx = np.nonzero(gt.labels.instance_plane == k)
        cy = math.floor(my.mean() + 0.5)
        cx = math.floor(mx.mean() + 0.5)
        vectors[my, mx, 0] = cy - my
        vectors[my, mx, 1] = cx - mx

    cls = gt.labels.class_plane
    edge = np.zeros((h, w), dtype=bool)
    edge[:-1, :] |= cls[:-1, :] != cls[1:, :]
    edge[1:, :] |= cls[1:, :] != cls[:-1, :]
    edge[:, :-1] |= cls[:, :-1] != cls[:, 1:]
    edge[:, 1:] |= cls[:, 1:] != cls[:, :-1]
    return (DisplacementField(gt.labels.shape, vectors),
            BoundaryMap(gt.labels.shape, edge.astype(np.float64)))


def perturb_fields(disp: DisplacementField, boundary: BoundaryMap,
                   sigma_d: float, sigma_b: float, seed: int = 0
                   ) -> tuple[DisplacementField, BoundaryMap]:
    """Add seeded Gaussian noise; boundary values are re-clipped to [0, 1]."""
    if sigma_d < 0 or sigma_b < 0:
        raise ValueError("noise scales must be non-negative")
    rng = np.random.Generator(np.random.PCG64(seed))
    vectors = disp.vectors + rng.normal(0.0, sigma_d, disp.vectors.shape) if sigma_d > 0 \
        else disp.vectors.copy()
    values = np.clip(boundary.values + rng.normal(0.0, sigma_b, boundary.values.shape), 0.0, 1.0) \
        if sigma_b > 0 else boundary.values.copy()
    return DisplacementField(disp.shape, vectors), BoundaryMap(boundary.shape, values)
