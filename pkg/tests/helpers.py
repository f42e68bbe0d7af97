"""Shared scene builders and in-memory pipeline runners for the test suite.

Everything here mirrors the file-level stages exactly, minus the FLDT
roundtrip, so tests can sweep many scenes cheaply.
"""
from __future__ import annotations

import numpy as np

from labelsynth.affinity import build_affinity_graph, transition_matrix
from labelsynth.core import BoundaryMap, DisplacementField, GridShape, LabelImage
from labelsynth.evaluate import ap_r, instances_from_labels, score_instances
from labelsynth.instancing import (
    build_instance_map,
    center_displacement,
    detect_centroids,
    refine_displacement,
)
from labelsynth.propagation import (
    class_plane_labels,
    instance_cams,
    propagate,
    propagate_semantic,
    synthesize_instance_labels,
)
from labelsynth.seeding import ClassSeedMap, ScoreStack, extract_seeds
from labelsynth.synthgen import CamParams, GroundTruth, InstanceSpec, SceneSpec, gen_scene

NEAR_IDEAL_CAMS = CamParams(max_parts=1, coverage=2.0, noise_amp=0.0, dilate=1)


def random_separated_spec(seed: int, shape: GridShape = GridShape(64, 64),
                          count_range: tuple[int, int] = (2, 4),
                          num_classes: int = 2,
                          radii: tuple[int, int] = (8, 11)) -> SceneSpec:
    """Scene with 2..4 ellipses whose bounding circles keep a clear margin.

    The saturated oracle boundary walls off each instance's 1-px border
    ring, so the radius floor keeps interior/full IoU above 0.7.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(rng.integers(count_range[0], count_range[1] + 1))
    while True:
        placed: list[tuple[float, float, float]] = []
        instances = []
        for _ in range(200):
            ry = float(rng.integers(radii[0], radii[1] + 1))
            rx = float(rng.integers(radii[0], radii[1] + 1))
            r = max(ry, rx)
            cy = float(rng.integers(int(r) + 2, shape.height - int(r) - 2))
            cx = float(rng.integers(int(r) + 2, shape.width - int(r) - 2))
            if any((cy - py) ** 2 + (cx - px) ** 2 < (r + pr + 4.0) ** 2
                   for py, px, pr in placed):
                continue
            placed.append((cy, cx, r))
            cls = int(rng.integers(1, num_classes + 1))
            instances.append(InstanceSpec(cls, "ellipse", (cy, cx, ry, rx)))
            if len(instances) == n:
                return SceneSpec(shape, num_classes, tuple(instances), seed=seed)
        n = max(count_range[0], n - 1)  # crowded draw: retry, allowing fewer


def touching_pair_spec(seed: int, shape: GridShape = GridShape(48, 48)) -> SceneSpec:
    """A same-class ellipse pair sharing a border (the case plain CAM
    thresholding cannot split) plus two well-separated instances.

    Pair instances are kept wide relative to the pair-mining radius so
    cross-seam pairs stay a minority, as in the regime the losses were
    designed for. The small lone instances are where propagation earns
    its keep: their raw activation covers roughly half the mask, and the
    boundary-damped walk fills out the rest."""
    rng = np.random.Generator(np.random.PCG64(seed))
    ry = float(rng.integers(9, 13))
    rx = float(rng.integers(8, 11))
    cy = float(rng.integers(int(ry) + 2, min(19, shape.height - int(ry) - 2)))
    overlap = float(rng.integers(1, 3))
    half_span = rx - overlap / 2.0
    cx1 = shape.width / 2.0 - half_span + float(rng.integers(-2, 3))
    cx2 = cx1 + 2.0 * half_span
    inst = [
        InstanceSpec(1, "ellipse", (cy, cx1, ry, rx)),
        InstanceSpec(1, "ellipse", (cy, cx2, ry, rx)),
    ]
    # lone instances placed as clear of everything already placed as the
    # grid allows (farthest of 60 uniform candidates)
    placed = [(cy, cx1, max(ry, rx)), (cy, cx2, max(ry, rx))]
    for _ in range(2):
        lr = float(rng.integers(5, 8))
        best, best_d = None, -np.inf
        for _ in range(60):
            ly = float(rng.integers(int(lr) + 2, shape.height - int(lr) - 2))
            lx = float(rng.integers(int(lr) + 2, shape.width - int(lr) - 2))
            d = min((ly - py) ** 2 + (lx - px) ** 2 for py, px, _ in placed)
            if d > best_d:
                best, best_d = (ly, lx), d
        placed.append((best[0], best[1], lr))
        inst.append(InstanceSpec(1, "ellipse", (best[0], best[1], lr, lr)))
    return SceneSpec(shape, 1, tuple(inst), seed=seed)


def run_instance_pipeline(cams: ScoreStack, disp: DisplacementField,
                          boundary: BoundaryMap, *, t: int = 64,
                          theta_fg: float = 0.3, theta_bg: float = 0.05,
                          refine_iters: int = 100, centroid_threshold: float = 2.5,
                          snap_radius: float = 5.0, gamma_infer: float = 5.0,
                          beta: float = 10.0, bg_percentile: float = 0.25,
                          bg_mode: str = "absolute", threads: int = 1,
                          ) -> tuple[LabelImage, object]:
    """seeds -> instancing -> propagation -> labels; returns (labels, stack)."""
    seeds = extract_seeds(cams, theta_fg, theta_bg)
    refined = refine_displacement(center_displacement(disp, seeds), refine_iters)
    centroids = detect_centroids(refined, centroid_threshold)
    imap = build_instance_map(refined, centroids, snap_radius)
    trans = transition_matrix(build_affinity_graph(boundary, gamma_infer), beta)
    stack = propagate(instance_cams(cams, imap), trans, boundary, t, threads)
    labels = synthesize_instance_labels(stack, bg_percentile, mode=bg_mode)
    return labels, stack


def run_semantic_pipeline(cams: ScoreStack, boundary: BoundaryMap, *, t: int = 64,
                          gamma_infer: float = 5.0, beta: float = 10.0,
                          bg_percentile: float = 0.25, bg_mode: str = "absolute",
                          threads: int = 1) -> LabelImage:
    trans = transition_matrix(build_affinity_graph(boundary, gamma_infer), beta)
    planes = propagate_semantic(cams, trans, boundary, t, threads)
    return class_plane_labels(cams.shape, planes, bg_percentile, mode=bg_mode)


def cam_threshold_labels(cams: ScoreStack, *, bg_percentile: float = 0.25,
                         bg_mode: str = "absolute") -> LabelImage:
    """Labels straight from thresholded score planes, no propagation."""
    return class_plane_labels(cams.shape, cams.planes, bg_percentile, mode=bg_mode)


def gt_instances(gt: GroundTruth) -> list[tuple[int, np.ndarray]]:
    return [(c, mask) for c, _, mask in instances_from_labels(gt.labels)]


def scene_ap(labels: LabelImage, stack, gt: GroundTruth,
             thresholds: tuple[float, ...] = (0.5,)) -> dict[float, float]:
    """AP of predicted instances (peak-score ranked) against the scene's gt."""
    preds = score_instances(labels, stack)
    report = ap_r(preds, gt_instances(gt), thresholds)
    return dict(report.ap)


def constant_score_ap(labels: LabelImage, gt: GroundTruth,
                      thresholds: tuple[float, ...] = (0.5,)) -> dict[float, float]:
    """AP with uniform confidence, for modes that produce no instance scores."""
    from labelsynth.evaluate import ScoredInstance

    preds = [ScoredInstance(c, mask, 1.0) for c, _, mask in instances_from_labels(labels)]
    report = ap_r(preds, gt_instances(gt), thresholds)
    return dict(report.ap)
