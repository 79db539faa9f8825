"""Map metric checks against hand counts and the brute-force transform."""
from __future__ import annotations

import numpy as np
import pytest

from ralc.evaluation import (
    AlignedMapPair,
    align,
    distance_transform,
    dte,
    iou,
    map_scores,
    mean_dte,
    mean_iou,
)
from ralc.sim import FREE, OCCUPIED, UNKNOWN, OccupancyMap

from oracles import brute_force_edt

RES = 0.05


def grid(rows):
    return np.array(rows, dtype=np.int8)


def pair(test, reference):
    return AlignedMapPair(grid(test), grid(reference), RES)


def random_map(rng, h, w, p_unknown=0.2):
    g = rng.choice([UNKNOWN, FREE, OCCUPIED], size=(h, w),
                   p=[p_unknown, (1 - p_unknown) * 0.6, (1 - p_unknown) * 0.4])
    return g.astype(np.int8)


def test_iou_identity_and_disjoint():
    g = [[OCCUPIED, FREE], [FREE, OCCUPIED]]
    p = pair(g, g)
    for cls in (OCCUPIED, FREE, UNKNOWN):
        assert iou(p, cls) == 1.0
    disjoint = pair([[OCCUPIED, FREE], [FREE, FREE]],
                    [[FREE, OCCUPIED], [FREE, FREE]])
    assert iou(disjoint, OCCUPIED) == 0.0


def test_iou_hand_counted():
    # 3 occupied each, overlapping in 2 cells: union 4, intersection 2.
    test = [[OCCUPIED, OCCUPIED, OCCUPIED, FREE],
            [FREE, FREE, FREE, FREE],
            [FREE, FREE, FREE, FREE],
            [FREE, FREE, FREE, FREE]]
    ref = [[FREE, OCCUPIED, OCCUPIED, OCCUPIED],
           [FREE, FREE, FREE, FREE],
           [FREE, FREE, FREE, FREE],
           [FREE, FREE, FREE, FREE]]
    assert iou(pair(test, ref), OCCUPIED) == 0.5


def test_iou_ignores_cells_unknown_in_reference():
    test = [[OCCUPIED, OCCUPIED], [FREE, FREE]]
    ref = [[OCCUPIED, UNKNOWN], [FREE, UNKNOWN]]
    # The right column is outside the domain: both classes match perfectly.
    p = pair(test, ref)
    assert iou(p, OCCUPIED) == 1.0
    assert iou(p, FREE) == 1.0
    assert mean_iou(p) == 1.0


def test_iou_empty_union_counts_as_one():
    p = pair([[FREE, FREE]], [[FREE, FREE]])
    assert iou(p, OCCUPIED) == 1.0


def test_iou_bounds_and_content_symmetry():
    rng = np.random.RandomState(3)
    for _ in range(20):
        a = random_map(rng, 12, 15, p_unknown=0.0)
        b = random_map(rng, 12, 15, p_unknown=0.0)
        for cls in (OCCUPIED, FREE):
            ab = iou(AlignedMapPair(a, b, RES), cls)
            ba = iou(AlignedMapPair(b, a, RES), cls)
            assert 0.0 <= ab <= 1.0
            # With no unknown cells the domain is everything: symmetric.
            assert ab == pytest.approx(ba)


def test_mean_iou_is_arithmetic_mean():
    test = [[OCCUPIED, OCCUPIED, FREE, FREE]]
    ref = [[OCCUPIED, FREE, FREE, FREE]]
    p = pair(test, ref)
    # occupied: 1/2, free: 2/3.
    assert iou(p, OCCUPIED) == 0.5
    assert iou(p, FREE) == pytest.approx(2 / 3)
    assert mean_iou(p) == pytest.approx((0.5 + 2 / 3) / 2)
    rng = np.random.RandomState(11)
    a, b = random_map(rng, 20, 20), random_map(rng, 20, 20)
    q = AlignedMapPair(a, b, RES)
    assert mean_iou(q) == pytest.approx((iou(q, OCCUPIED) + iou(q, FREE)) / 2)


def test_distance_transform_basics():
    g = np.full((8, 8), FREE, dtype=np.int8)
    g[0, 0] = OCCUPIED
    t = distance_transform(g, OCCUPIED, RES)
    assert t[0, 0] == 0.0
    assert t[3, 4] == pytest.approx(5 * RES)   # 3-4-5 triangle
    assert t[0, 7] == pytest.approx(7 * RES)


def test_distance_transform_absent_class_is_infinite():
    g = np.full((4, 4), FREE, dtype=np.int8)
    t = distance_transform(g, OCCUPIED, RES)
    assert np.isinf(t).all()


def test_distance_transform_matches_brute_force():
    rng = np.random.RandomState(7)
    for trial in range(12):
        h = int(rng.randint(4, 65))
        w = int(rng.randint(4, 65))
        g = random_map(rng, h, w)
        for cls in (OCCUPIED, FREE):
            if not (g == cls).any():
                continue
            mine = distance_transform(g, cls, RES)
            brute = brute_force_edt(g == cls, resolution=RES)
            assert np.allclose(mine, brute, atol=1e-12), trial


def test_dte_identity_zero():
    rng = np.random.RandomState(5)
    g = random_map(rng, 16, 16)
    p = AlignedMapPair(g, g.copy(), RES)
    assert dte(p, OCCUPIED) == 0.0
    assert dte(p, FREE) == 0.0
    assert mean_dte(p) == 0.0


def test_dte_single_cell_shift_bounded_by_cell_size():
    rng = np.random.RandomState(9)
    base = random_map(rng, 24, 24, p_unknown=0.0)
    shifted = np.roll(base, 1, axis=1)
    # Interior columns only, so the wraparound column drops out.
    p = AlignedMapPair(base[:, 1:-1], shifted[:, 1:-1], RES)
    assert dte(p, OCCUPIED) <= RES + 1e-12
    assert dte(p, FREE) <= RES + 1e-12


def test_dte_matches_brute_force_composition():
    rng = np.random.RandomState(21)
    a, b = random_map(rng, 18, 14), random_map(rng, 18, 14)
    p = AlignedMapPair(a, b, RES)
    domain = b != UNKNOWN
    expect = np.abs(brute_force_edt(a == OCCUPIED, RES)
                    - brute_force_edt(b == OCCUPIED, RES))[domain].mean()
    assert dte(p, OCCUPIED) == pytest.approx(float(expect))
    assert mean_dte(p) == pytest.approx((dte(p, OCCUPIED) + dte(p, FREE)) / 2)


def test_dte_error_when_class_absent():
    p = pair([[FREE, FREE]], [[FREE, OCCUPIED]])
    with pytest.raises(ValueError, match="undefined transform"):
        dte(p, OCCUPIED)


def test_align_same_origin_crops_to_overlap():
    a = OccupancyMap(np.full((6, 8), FREE, dtype=np.int8), (0.0, 0.0), RES)
    b = OccupancyMap(np.full((4, 5), FREE, dtype=np.int8), (0.0, 0.0), RES)
    p = align(a, b)
    assert p.test.shape == (4, 5)
    assert iou(p, FREE) == 1.0


def test_align_applies_origin_offset():
    base = np.full((6, 6), FREE, dtype=np.int8)
    base[2, 3] = OCCUPIED
    # Same content, origin moved one cell right and two up.
    shifted = np.full((6, 6), UNKNOWN, dtype=np.int8)
    shifted[0:4, 0:5] = base[2:6, 1:6]
    a = OccupancyMap(base, (0.0, 0.0), RES)
    b = OccupancyMap(shifted, (RES, 2 * RES), RES)
    p = align(b, a)
    assert iou(p, OCCUPIED) == 1.0
    assert p.test.shape == (4, 5)


def test_align_rejects_disjoint_and_fractional():
    a = OccupancyMap(np.full((4, 4), FREE, dtype=np.int8), (0.0, 0.0), RES)
    b = OccupancyMap(np.full((4, 4), FREE, dtype=np.int8), (10.0, 0.0), RES)
    with pytest.raises(ValueError, match="overlap"):
        align(a, b)
    c = OccupancyMap(np.full((4, 4), FREE, dtype=np.int8), (0.013, 0.0), RES)
    with pytest.raises(ValueError, match="whole cell"):
        align(a, c)
    d = OccupancyMap(np.full((4, 4), FREE, dtype=np.int8), (0.0, 0.0), 0.1)
    with pytest.raises(ValueError, match="resolution"):
        align(a, d)


def test_misalignment_degrades_iou():
    rng = np.random.RandomState(17)
    base = random_map(rng, 30, 30, p_unknown=0.0)
    a = OccupancyMap(base, (0.0, 0.0), RES)
    # Correct metadata: content lines up exactly.
    good = OccupancyMap(base.copy(), (0.0, 0.0), RES)
    # Same grid, origin metadata wrong by 2 cells.
    bad = OccupancyMap(base.copy(), (2 * RES, 0.0), RES)
    assert iou(align(good, a), OCCUPIED) == 1.0
    assert iou(align(bad, a), OCCUPIED) < 1.0


def test_map_scores_shape():
    rng = np.random.RandomState(2)
    g = random_map(rng, 20, 20, p_unknown=0.1)
    a = OccupancyMap(g, (0.0, 0.0), RES)
    scores = map_scores(a, a)
    assert scores["miou"] == 1.0
    assert scores["mdte"] == 0.0
    assert scores["iou_per_class"] == {"occupied": 1.0, "free": 1.0}
    assert scores["dte_per_class"] == {"occupied": 0.0, "free": 0.0}
    assert scores["iou_unknown"] == 1.0
