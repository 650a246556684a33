from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provg import geometry as geo

from conftest import rng_for


def random_box(rng) -> geo.Box:
    w, h = rng.uniform(2.0, 8.0, 2)
    x1 = rng.uniform(0.0, 10.0 - w)
    y1 = rng.uniform(0.0, 10.0 - h)
    return geo.Box(x1, y1, x1 + w, y1 + h)


def monte_carlo_iou_giou(a: geo.Box, b: geo.Box, rng, m=512):
    """Stratified area-sampling estimate of (iou, giou): one jittered sample
    per cell of an m x m grid over the hull, independent of the closed form."""
    lo_x, hi_x = min(a.x1, b.x1), max(a.x2, b.x2)
    lo_y, hi_y = min(a.y1, b.y1), max(a.y2, b.y2)
    n = m * m
    gx = (np.tile(np.arange(m), m) + rng.random(n)) / m
    gy = (np.repeat(np.arange(m), m) + rng.random(n)) / m
    xs = lo_x + gx * (hi_x - lo_x)
    ys = lo_y + gy * (hi_y - lo_y)
    in_a = (xs >= a.x1) & (xs <= a.x2) & (ys >= a.y1) & (ys <= a.y2)
    in_b = (xs >= b.x1) & (xs <= b.x2) & (ys >= b.y1) & (ys <= b.y2)
    hull = (hi_x - lo_x) * (hi_y - lo_y)  # the sampling window is the hull
    inter = np.count_nonzero(in_a & in_b) / n * hull
    union = np.count_nonzero(in_a | in_b) / n * hull
    iou = inter / union if union > 0 else 0.0
    return iou, iou - (hull - union) / hull


# -- hand-derived cases -----------------------------------------------------

def test_identical_boxes():
    b = geo.Box(1, 2, 5, 7)
    assert geo.box_iou_giou(b, b) == (1.0, 1.0)


def test_disjoint_boxes_giou():
    iou, giou = geo.box_iou_giou(geo.Box(0, 0, 1, 1), geo.Box(2, 2, 3, 3))
    assert iou == 0.0
    assert giou == pytest.approx(-7.0 / 9.0)


def test_partial_overlap_giou():
    iou, giou = geo.box_iou_giou(geo.Box(0, 0, 2, 2), geo.Box(1, 1, 3, 3))
    assert iou == pytest.approx(1.0 / 7.0)
    assert giou == pytest.approx(1.0 / 7.0 - 2.0 / 9.0, abs=1e-12)


def test_monte_carlo_oracle_100_pairs():
    rng = rng_for(42)
    for _ in range(100):
        a, b = random_box(rng), random_box(rng)
        iou, giou = geo.box_iou_giou(a, b)
        mc_iou, mc_giou = monte_carlo_iou_giou(a, b, rng)
        assert abs(iou - mc_iou) <= 2e-3
        assert abs(giou - mc_giou) <= 2e-3


def test_nonfinite_coordinates_rejected():
    with pytest.raises(ValueError):
        geo.Box(0, 0, float("nan"), 1)


# -- mask_to_box --------------------------------------------------------------

def test_mask_to_box_two_pixels():
    mask = np.zeros((8, 8), dtype=bool)
    mask[2, 3] = True
    mask[5, 7] = True
    box = geo.mask_to_box(mask)
    assert (box.x1, box.y1, box.x2, box.y2) == (3, 2, 8, 6)


def test_mask_to_box_single_pixel_unit_cell():
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = True
    box = geo.mask_to_box(mask)
    assert (box.x1, box.y1, box.x2, box.y2) == (0, 0, 1, 1)


def test_mask_to_box_empty():
    assert geo.mask_to_box(np.zeros((4, 4), dtype=bool)) is geo.EMPTY


def test_mask_to_box_exhaustive_scan_1000_masks():
    rng = rng_for(7)
    for _ in range(1000):
        mask = rng.random((9, 11)) < 0.15
        box = geo.mask_to_box(mask)
        coords = [(r, c) for r in range(9) for c in range(11) if mask[r, c]]
        if not coords:
            assert box is geo.EMPTY
            continue
        rows = [r for r, _ in coords]
        cols = [c for _, c in coords]
        assert (box.x1, box.y1, box.x2, box.y2) == (
            min(cols), min(rows), max(cols) + 1, max(rows) + 1)


# -- mask IoU ----------------------------------------------------------------

def test_mask_iou_cases():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0, :2] = True
    b[3, :2] = True
    assert geo.mask_iou(a, a) == 1.0
    assert geo.mask_iou(a, b) == 0.0
    # |P ∩ G| = 2, |P ∪ G| = 6
    p = np.zeros((4, 4), dtype=bool)
    g = np.zeros((4, 4), dtype=bool)
    p[0, 0:4] = True
    g[0, 2:4] = True
    g[1, 0:2] = True
    assert geo.mask_iou(p, g) == pytest.approx(1.0 / 3.0)


def test_mask_iou_empty_conventions():
    z = np.zeros((4, 4), dtype=bool)
    nz = z.copy()
    nz[1, 1] = True
    assert geo.mask_iou(z, z) == 1.0
    assert geo.mask_iou(z, nz) == 0.0
    with pytest.raises(ValueError):
        geo.mask_iou(z, np.zeros((3, 3), dtype=bool))


# -- dataset metrics -----------------------------------------------------------

def test_dataset_metrics_direct_count():
    ious = [0.6, 0.4, 0.9]
    tm = geo.dataset_metrics(ious, [(1, 1)] * 3)
    assert tm.precision_at[0.5] == pytest.approx(2.0 / 3.0)


def test_dataset_metrics_all_perfect():
    tm = geo.dataset_metrics([1.0, 1.0], [(2, 2), (3, 3)])
    assert all(v == 1.0 for v in tm.precision_at.values())
    assert tm.miou == 1.0 and tm.oiou == 1.0


def test_dataset_metrics_oiou_vs_miou():
    tm = geo.dataset_metrics([0.5, 0.75], [(1, 2), (3, 4)])
    assert tm.oiou == pytest.approx(4.0 / 6.0)
    assert tm.miou == pytest.approx(0.625)


def test_dataset_metrics_empty_rejected():
    with pytest.raises(ValueError):
        geo.dataset_metrics([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_precision_monotone_nonincreasing(ious):
    tm = geo.dataset_metrics(ious, [(v, 1.0) for v in ious])
    row = [tm.precision_at[x] for x in geo.PR_THRESHOLDS]
    assert all(a >= b for a, b in zip(row, row[1:]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_giou_never_exceeds_iou_and_symmetry(seed):
    rng = rng_for(seed)
    a, b = random_box(rng), random_box(rng)
    iou, giou = geo.box_iou_giou(a, b)
    iou_r, giou_r = geo.box_iou_giou(b, a)
    assert giou <= iou + 1e-12
    assert -1.0 <= giou <= 1.0
    assert iou == pytest.approx(iou_r) and giou == pytest.approx(giou_r)


def test_giou_equals_iou_when_hull_is_union():
    # nested boxes: hull == outer box == union
    iou, giou = geo.box_iou_giou(geo.Box(0, 0, 4, 4), geo.Box(1, 1, 3, 3))
    assert giou == pytest.approx(iou)


def test_box_canonicalization_swaps_corners():
    b = geo.Box(5, 7, 3, 2)
    assert (b.x1, b.y1, b.x2, b.y2) == (3, 2, 5, 7)
    assert b.area == 2 * 5


def test_box_conversions_roundtrip():
    b = geo.Box(2, 3, 6, 9)
    cx, cy, w, h = b.to_cxcywh()
    assert (cx, cy, w, h) == (4, 6, 4, 6)
    b2 = geo.Box.from_cxcywh(cx, cy, w, h, unit="pixel")
    assert (b2.x1, b2.y1, b2.x2, b2.y2) == (2, 3, 6, 9)
