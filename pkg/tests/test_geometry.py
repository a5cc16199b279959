import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uotrack.geometry import (
    BinaryMask,
    Box,
    RleMask,
    box_giou,
    box_iou,
    box_iou_matrix,
    box_to_mask,
    mask_boundary,
    mask_iou,
    mask_to_box,
    rle_decode,
    rle_encode,
)


def raster_areas(a, b, lo, hi, step=0.01):
    """Count fine-grid sample points inside a, b, both, and the enclosing box."""
    xs = np.arange(lo, hi, step) + step / 2
    X, Y = np.meshgrid(xs, xs)
    in_a = (X >= a[0]) & (X < a[2]) & (Y >= a[1]) & (Y < a[3])
    in_b = (X >= b[0]) & (X < b[2]) & (Y >= b[1]) & (Y < b[3])
    ex1, ey1 = min(a[0], b[0]), min(a[1], b[1])
    ex2, ey2 = max(a[2], b[2]), max(a[3], b[3])
    in_c = (X >= ex1) & (X < ex2) & (Y >= ey1) & (Y < ey2)
    return (in_a & in_b).sum(), (in_a | in_b).sum(), in_c.sum()


@pytest.mark.parametrize(
    ("a", "b", "expected"),
    [
        ((0, 0, 2, 2), (0, 0, 2, 2), 1.0),
        ((0, 0, 1, 1), (5, 5, 6, 6), 0.0),
        ((0, 0, 2, 2), (1, 0, 3, 2), 1 / 3),
    ],
)
def test_box_iou_examples(a, b, expected):
    assert box_iou(Box(*a), Box(*b)) == pytest.approx(expected, abs=1e-12)


def test_box_iou_partial_overlap_matches_raster_oracle():
    inter, union, _ = raster_areas((0, 0, 2, 2), (1, 0, 3, 2), 0, 3)
    assert inter / union == pytest.approx(1 / 3, abs=1e-3)


def test_box_giou_examples():
    a = Box(0, 0, 1, 1)
    assert box_giou(a, a) == 1.0
    assert box_giou(a, Box(2, 0, 3, 1)) == pytest.approx(-1 / 3, abs=1e-12)
    inter, union, enclose = raster_areas((0, 0, 1, 1), (2, 0, 3, 1), 0, 3)
    assert inter / union - (enclose - union) / enclose == pytest.approx(-1 / 3, abs=1e-3)
    assert box_giou(a, Box(1000, 1000, 1001, 1001)) < -0.9


def test_degenerate_boxes():
    p = Box(1, 1, 1, 1)
    assert box_iou(p, p) == 0.0
    assert box_iou(p, Box(0, 0, 2, 2)) == 0.0


def test_box_validation():
    with pytest.raises(ValueError):
        Box(2, 0, 1, 1)
    with pytest.raises(ValueError):
        Box(0, 0, 1, 1, score=1.5)


coord = st.floats(0, 50, allow_nan=False)


@st.composite
def boxes(draw):
    x1, x2 = sorted((draw(coord), draw(coord)))
    y1, y2 = sorted((draw(coord), draw(coord)))
    return Box(x1, y1, x2 + 0.1, y2 + 0.1)


@given(boxes(), boxes())
def test_iou_giou_properties(a, b):
    iou = box_iou(a, b)
    giou = box_giou(a, b)
    assert iou == pytest.approx(box_iou(b, a))
    assert 0.0 <= iou <= 1.0
    assert -1.0 <= giou <= iou + 1e-12
    assert box_iou(a, a) == pytest.approx(1.0)


@given(st.lists(boxes(), min_size=1, max_size=5), st.lists(boxes(), min_size=1, max_size=5))
def test_iou_matrix_matches_scalar(a, b):
    mat = box_iou_matrix([x.as_xyxy() for x in a], [x.as_xyxy() for x in b])
    for i, bi in enumerate(a):
        for j, bj in enumerate(b):
            assert mat[i, j] == pytest.approx(box_iou(bi, bj), abs=1e-12)


def pixel_loop_iou(a, b):
    inter = union = 0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            inter += bool(a[r, c] and b[r, c])
            union += bool(a[r, c] or b[r, c])
    return 1.0 if union == 0 else inter / union


def test_mask_iou_examples():
    m = np.zeros((4, 4), bool)
    m[0, :4] = True
    sub = np.zeros((4, 4), bool)
    sub[0, :2] = True
    other = np.zeros((4, 4), bool)
    other[3, :] = True
    assert mask_iou(BinaryMask(m), BinaryMask(m)) == 1.0
    assert mask_iou(BinaryMask(m), BinaryMask(other)) == 0.0
    assert mask_iou(BinaryMask(m), BinaryMask(sub)) == 0.5
    assert mask_iou(BinaryMask.zeros(3, 3), BinaryMask.zeros(3, 3)) == 1.0
    with pytest.raises(ValueError):
        mask_iou(BinaryMask.zeros(3, 3), BinaryMask.zeros(3, 4))


def test_random_masks_iou_and_rle_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        h, w = rng.integers(1, 9, size=2)
        a = rng.random((h, w)) < rng.random()
        b = rng.random((h, w)) < rng.random()
        assert mask_iou(BinaryMask(a), BinaryMask(b)) == pytest.approx(pixel_loop_iou(a, b), abs=1e-12)
        m = BinaryMask(a)
        r = rle_encode(m)
        assert sum(r.counts) == h * w
        assert rle_decode(r) == m


def test_mask_to_box_examples():
    m = np.zeros((10, 10), bool)
    m[4, 3] = True
    assert mask_to_box(BinaryMask(m)).as_xyxy() == (3, 4, 4, 5)
    assert mask_to_box(BinaryMask(np.ones((6, 9), bool))).as_xyxy() == (0, 0, 9, 6)
    ell = np.zeros((8, 8), bool)
    ell[1:4, 2] = True
    ell[3, 2:6] = True
    assert mask_to_box(BinaryMask(ell)).as_xyxy() == (2, 1, 6, 4)
    with pytest.raises(ValueError):
        mask_to_box(BinaryMask.zeros(3, 3))


def test_mask_to_box_contains_every_pixel():
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = rng.random((7, 9)) < 0.2
        if not m.any():
            continue
        box = mask_to_box(BinaryMask(m))
        for r, c in zip(*np.nonzero(m)):
            assert box.x1 <= c and c + 1 <= box.x2 and box.y1 <= r and r + 1 <= box.y2


def test_rle_examples():
    assert rle_encode(BinaryMask.zeros(2, 2)).counts == (4,)
    assert rle_encode(BinaryMask(np.ones((2, 2), bool))).counts == (0, 4)
    checker = np.array([[1, 0], [0, 1]], bool)
    # column-major scan: (0,0)=1, (1,0)=0, (0,1)=0, (1,1)=1
    assert rle_encode(BinaryMask(checker)).counts == (0, 1, 2, 1)
    alt = np.array([[0, 1], [1, 0]], bool)
    assert rle_encode(BinaryMask(alt)).counts == (1, 2, 1)
    with pytest.raises(ValueError):
        rle_decode(RleMask(2, 2, (1, 2)))


def test_rle_string_roundtrip():
    r = RleMask(3, 2, (1, 4, 1))
    assert RleMask.from_string(r.to_string()) == r


def test_mask_boundary_examples():
    single = np.zeros((5, 5), bool)
    single[2, 2] = True
    assert mask_boundary(BinaryMask(single)) == BinaryMask(single)
    square = np.zeros((6, 6), bool)
    square[1:5, 1:5] = True
    ring = mask_boundary(BinaryMask(square))
    assert ring.area == 12
    assert not ring.data[2:4, 2:4].any()
    assert mask_boundary(BinaryMask.zeros(4, 4)).area == 0
    assert mask_boundary(BinaryMask(np.ones((3, 3), bool))).area == 8


def test_box_to_mask_shapes():
    rect = box_to_mask(Box(1, 2, 4, 5), 8, 8)
    assert mask_to_box(rect).as_xyxy() == (1, 2, 4, 5)
    ell = box_to_mask(Box(0, 0, 8, 8), 8, 8, "ellipse")
    assert 0 < ell.area < 64
