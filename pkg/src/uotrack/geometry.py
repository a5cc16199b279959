"""Box and mask primitives.

Boxes live in continuous pixel coordinates ``(x1, y1, x2, y2)``. Masks are
boolean rasters indexed ``[row, col]``; pixel ``(col, row)`` covers the
half-open square ``[col, col + 1) x [row, row + 1)``.

Run-length encoding scans the raster column-major and always starts with a
count of zeros, so an all-ones mask encodes as ``[0, W * H]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with a confidence and a category label."""

    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self) -> None:
        if not (self.x2 >= self.x1 and self.y2 >= self.y1):
            raise ValueError(f"invalid box corners: {self.as_xyxy()}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float, score: float = 1.0, class_id: int = 0) -> Box:
        return cls(x, y, x + w, y + h, score, class_id)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.width, self.height)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean raster of shape ``(height, width)``."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, height: int, width: int) -> BinaryMask:
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class RleMask:
    """Column-major run-length encoding; counts alternate zeros, ones, ..."""

    height: int
    width: int
    counts: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise ValueError("negative run length")

    def to_string(self) -> str:
        return " ".join(str(c) for c in (self.height, self.width, *self.counts))

    @classmethod
    def from_string(cls, text: str) -> RleMask:
        parts = [int(p) for p in text.split()]
        if len(parts) < 2:
            raise ValueError(f"malformed RLE string {text!r}")
        return cls(parts[0], parts[1], tuple(parts[2:]))


def box_iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def box_giou(a: Box, b: Box) -> float:
    """Generalized IoU: ``IoU - (C - U) / C`` with ``C`` the enclosing box area."""
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area + b.area - inter
    enclose = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    if enclose <= 0:
        return 0.0
    iou = inter / union if union > 0 else 0.0
    return iou - (enclose - union) / enclose


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(M, 4)`` and ``(N, 4)`` xyxy arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def boxes_to_array(boxes: list[Box]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([b.as_xyxy() for b in boxes], dtype=float)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mask shapes differ: {a.data.shape} vs {b.data.shape}")
    union = np.count_nonzero(a.data | b.data)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.data & b.data) / union


def mask_to_box(m: BinaryMask) -> Box:
    rows = np.flatnonzero(m.data.any(axis=1))
    cols = np.flatnonzero(m.data.any(axis=0))
    if rows.size == 0:
        raise ValueError("cannot compute the box of an empty mask")
    return Box(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def box_to_mask(box: Box, height: int, width: int, shape: str = "rectangle") -> BinaryMask:
    """Rasterize a box as a filled rectangle or inscribed ellipse.

    A pixel is set when its center lies inside the shape.
    """
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    if shape == "rectangle":
        inside_x = (cols >= box.x1) & (cols < box.x2)
        inside_y = (rows >= box.y1) & (rows < box.y2)
        return BinaryMask(inside_y[:, None] & inside_x[None, :])
    if shape == "ellipse":
        cx, cy = box.center
        rx, ry = 0.5 * box.width, 0.5 * box.height
        if rx <= 0 or ry <= 0:
            return BinaryMask.zeros(height, width)
        dx = (cols[None, :] - cx) / rx
        dy = (rows[:, None] - cy) / ry
        return BinaryMask(dx * dx + dy * dy <= 1.0)
    raise ValueError(f"unknown mask shape {shape!r}")


def rle_encode(m: BinaryMask) -> RleMask:
    flat = m.data.flatten(order="F").astype(np.int8)
    if flat.size == 0:
        return RleMask(m.height, m.width, ())
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return RleMask(m.height, m.width, tuple(runs))


def rle_decode(r: RleMask) -> BinaryMask:
    total = r.height * r.width
    if sum(r.counts) != total:
        raise ValueError(f"RLE counts sum to {sum(r.counts)}, expected {total}")
    values = np.arange(len(r.counts)) % 2 == 1
    flat = np.repeat(values, r.counts)
    return BinaryMask(flat.reshape((r.height, r.width), order="F"))


def mask_boundary(m: BinaryMask) -> BinaryMask:
    """Set pixels with a 4-neighbour outside the mask or off the raster."""
    padded = np.pad(m.data, 1, constant_values=False)
    interior = (
        padded[1:-1, 1:-1]
        & padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return BinaryMask(m.data & ~interior)
