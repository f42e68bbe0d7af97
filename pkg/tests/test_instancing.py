from __future__ import annotations

import numpy as np
import pytest

from labelsynth.core import DisplacementField, GridShape, NEUTRAL
from labelsynth.instancing import (
    CentroidSet,
    InstanceMap,
    build_instance_map,
    center_displacement,
    detect_centroids,
    refine_displacement,
)
from labelsynth.seeding import ClassSeedMap


def _flood_components(cand: np.ndarray) -> np.ndarray:
    """Plain stack-based 8-connected flood fill; components numbered in
    raster discovery order, which is the smallest-flat-index order."""
    h, w = cand.shape
    plane = np.zeros((h, w), dtype=np.int32)
    next_id = 1
    for start in range(h * w):
        y, x = divmod(start, w)
        if not cand[y, x] or plane[y, x]:
            continue
        plane[y, x] = next_id
        stack = [(y, x)]
        while stack:
            cy, cx = stack.pop()
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and cand[ny, nx] and not plane[ny, nx]:
                        plane[ny, nx] = next_id
                        stack.append((ny, nx))
        next_id += 1
    return plane


def _two_block_field(h: int = 20, w: int = 20):
    """Two 7x7 blocks whose pixels point at their (integer) centroids;
    everything else points nowhere."""
    vectors = np.zeros((h, w, 2))
    blocks = [((2, 9), (2, 9), (5, 5)), ((11, 18), (11, 18), (14, 14))]
    for (y0, y1), (x0, x1), (cy, cx) in blocks:
        ys, xs = np.mgrid[y0:y1, x0:x1]
        vectors[y0:y1, x0:x1, 0] = cy - ys
        vectors[y0:y1, x0:x1, 1] = cx - xs
    return DisplacementField(GridShape(h, w), vectors), blocks


def test_center_displacement_subtracts_seed_mean() -> None:
    shape = GridShape(2, 2)
    labels = np.array([[1, 1], [0, NEUTRAL]], dtype=np.uint8)
    seeds = ClassSeedMap(shape, labels, 1)
    vectors = np.zeros((2, 2, 2))
    vectors[0, 0] = (2.0, 1.0)
    vectors[0, 1] = (0.0, 1.0)
    vectors[1, 0] = (1.0, 2.0)  # background pixel, must not affect the mean
    out = center_displacement(DisplacementField(shape, vectors), seeds)
    np.testing.assert_allclose(out.vectors[0, 0], (1.0, 0.0))
    np.testing.assert_allclose(out.vectors[0, 1], (-1.0, 0.0))
    np.testing.assert_allclose(out.vectors[1, 0], (0.0, 1.0))


def test_center_displacement_falls_back_to_global_mean() -> None:
    shape = GridShape(1, 2)
    seeds = ClassSeedMap(shape, np.array([[0, NEUTRAL]], dtype=np.uint8), 1)
    vectors = np.array([[[1.0, 0.0], [2.0, 1.0]]])
    out = center_displacement(DisplacementField(shape, vectors), seeds)
    np.testing.assert_allclose(out.vectors[0, 0], (-0.5, -0.5))
    np.testing.assert_allclose(out.vectors[0, 1], (0.5, 0.5))


def test_center_displacement_shape_mismatch() -> None:
    seeds = ClassSeedMap(GridShape(2, 2), np.zeros((2, 2), dtype=np.uint8), 1)
    disp = DisplacementField(GridShape(3, 3), np.zeros((3, 3, 2)))
    with pytest.raises(ValueError):
        center_displacement(disp, seeds)


def test_refine_is_idempotent_on_exact_field() -> None:
    disp, _ = _two_block_field()
    refined = refine_displacement(disp)
    np.testing.assert_array_equal(refined.vectors, disp.vectors)


def test_refine_follows_chains_to_the_anchor() -> None:
    # each pixel hops one step right until the last column absorbs it
    vectors = np.zeros((1, 5, 2))
    vectors[0, :4, 1] = 1.0
    disp = DisplacementField(GridShape(1, 5), vectors)
    refined = refine_displacement(disp)
    np.testing.assert_allclose(refined.vectors[0, :, 1], [4, 3, 2, 1, 0])
    np.testing.assert_allclose(refined.vectors[0, :, 0], 0)


def test_refine_zero_iters_is_identity() -> None:
    rng = np.random.Generator(np.random.PCG64(3))
    vectors = rng.normal(0, 1, (6, 6, 2))
    disp = DisplacementField(GridShape(6, 6), vectors)
    out = refine_displacement(disp, iters=0)
    np.testing.assert_array_equal(out.vectors, vectors)
    with pytest.raises(ValueError):
        refine_displacement(disp, iters=-1)


def test_refine_keeps_targets_inside_the_grid() -> None:
    # a field that pushes everything toward the border must stay in bounds
    vectors = np.full((4, 4, 2), 3.0)
    disp = DisplacementField(GridShape(4, 4), vectors)
    refined = refine_displacement(disp)
    ys, xs = np.mgrid[0:4, 0:4]
    assert (ys + refined.vectors[..., 0] <= 3.0).all()
    assert (xs + refined.vectors[..., 1] <= 3.0).all()
    assert (ys + refined.vectors[..., 0] >= 0.0).all()


def test_detect_centroids_threshold_is_strict() -> None:
    vectors = np.zeros((1, 3, 2))
    vectors[0, 0] = (0.0, 2.5)     # exactly at threshold: excluded
    vectors[0, 1] = (0.0, 2.4999)  # just below: included
    vectors[0, 2] = (0.0, 3.0)
    cs = detect_centroids(DisplacementField(GridShape(1, 3), vectors), threshold=2.5)
    assert cs.component_id_plane.tolist() == [[0, 1, 0]]
    with pytest.raises(ValueError):
        detect_centroids(DisplacementField(GridShape(1, 3), vectors), threshold=0.0)


def test_detect_centroids_matches_flood_fill_oracle() -> None:
    rng = np.random.Generator(np.random.PCG64(31))
    for _ in range(15):
        h, w = int(rng.integers(3, 14)), int(rng.integers(3, 14))
        mags = rng.uniform(0, 5, (h, w))
        angles = rng.uniform(0, 2 * np.pi, (h, w))
        vectors = np.stack([mags * np.sin(angles), mags * np.cos(angles)], axis=-1)
        disp = DisplacementField(GridShape(h, w), vectors)
        cs = detect_centroids(disp, threshold=2.5)
        expect = _flood_components(disp.magnitudes() < 2.5)
        np.testing.assert_array_equal(cs.component_id_plane, expect)
        assert cs.num_components == expect.max(initial=0)


def test_components_listing_matches_plane() -> None:
    plane = np.array([[1, 0, 2], [1, 0, 2]], dtype=np.int32)
    cs = CentroidSet(GridShape(2, 3), plane)
    comps = cs.components()
    assert [c.tolist() for c in comps] == [[0, 3], [2, 5]]


def test_instance_map_direct_hits() -> None:
    disp, blocks = _two_block_field()
    centroids = detect_centroids(disp)
    # background points at itself, so it forms candidate components too;
    # the block interiors form their own disks around each centroid
    imap = build_instance_map(disp, centroids)
    bg_id = imap.ids[0, 0]
    a_id = imap.ids[2, 2]
    b_id = imap.ids[11, 11]
    assert len({bg_id, a_id, b_id}) == 3
    assert (imap.ids[2:9, 2:9] == a_id).all()
    assert (imap.ids[11:18, 11:18] == b_id).all()
    assert (imap.ids[0, :] == bg_id).all()
    # ids follow smallest-flat-index order: background owns pixel 0
    assert bg_id == 1 and a_id == 2 and b_id == 3


def test_instance_map_snaps_near_misses() -> None:
    shape = GridShape(9, 9)
    comp = np.zeros((9, 9), dtype=np.int32)
    comp[4, 4] = 1
    centroids = CentroidSet(shape, comp)
    vectors = np.zeros((9, 9, 2))
    vectors[0, 0] = (4.0, 4.0)    # exact hit
    vectors[0, 1] = (2.0, 1.0)    # target (2, 2), snaps from 2.83 away
    vectors[8, 8] = (-2.0, -2.0)  # target (6, 6), snaps as well
    vectors[0, 8] = (0.0, 0.0)    # target (0, 8), 5.66 away: unresolved
    disp = DisplacementField(shape, vectors)
    imap = build_instance_map(disp, centroids, snap_radius=5.0)
    assert imap.ids[0, 0] == 1
    assert imap.ids[0, 1] == 1
    assert imap.ids[8, 8] == 1
    assert imap.ids[0, 8] == 0


def test_instance_map_snap_tie_takes_lower_id() -> None:
    shape = GridShape(5, 5)
    comp = np.zeros((5, 5), dtype=np.int32)
    comp[0, 2] = 2
    comp[2, 0] = 1
    centroids = CentroidSet(shape, comp)
    vectors = np.zeros((5, 5, 2))
    vectors[4, 4] = (-3.0, -3.0)  # target (1, 1): both candidates at sqrt(2)
    disp = DisplacementField(shape, vectors)
    imap = build_instance_map(disp, centroids, snap_radius=5.0)
    assert imap.ids[4, 4] == 1
    # nearer candidate beats lower id: (1, 2) is 1 away from component 2
    vectors[4, 4] = (-3.0, -2.0)
    imap2 = build_instance_map(DisplacementField(shape, vectors), centroids,
                               snap_radius=5.0)
    assert imap2.ids[4, 4] == 2


def test_instance_map_rounds_targets_half_up() -> None:
    shape = GridShape(4, 4)
    comp = np.zeros((4, 4), dtype=np.int32)
    comp[2, 2] = 1
    centroids = CentroidSet(shape, comp)
    vectors = np.zeros((4, 4, 2))
    vectors[0, 0] = (1.5, 1.5)  # target (1.5, 1.5) rounds to (2, 2)
    imap = build_instance_map(DisplacementField(shape, vectors), centroids,
                              snap_radius=0.999)
    assert imap.ids[0, 0] == 1


def test_instance_map_no_components_is_all_zero() -> None:
    shape = GridShape(3, 3)
    centroids = CentroidSet(shape, np.zeros((3, 3), dtype=np.int32))
    disp = DisplacementField(shape, np.zeros((3, 3, 2)))
    imap = build_instance_map(disp, centroids)
    assert (imap.ids == 0).all()


def test_construction_validation() -> None:
    with pytest.raises(ValueError):
        CentroidSet(GridShape(2, 2), np.array([[-1, 0], [0, 0]]))
    with pytest.raises(ValueError):
        InstanceMap(GridShape(2, 2), np.zeros((3, 3), dtype=np.int32))
    with pytest.raises(ValueError):
        build_instance_map(
            DisplacementField(GridShape(2, 2), np.zeros((2, 2, 2))),
            CentroidSet(GridShape(3, 3), np.zeros((3, 3), dtype=np.int32)))
