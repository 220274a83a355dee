"""Axis-aligned box geometry: intersection, covering rectangle, exact union."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True, slots=True)
class BBox:
    """Box with top-left corner ``(x, y)`` and size ``(w, h)`` in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    def translate(self, dx: float, dy: float) -> BBox:
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def scale(self, factor: float) -> BBox:
        return BBox(self.x * factor, self.y * factor, self.w * factor, self.h * factor)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def cover_rect(boxes: Sequence[BBox]) -> BBox:
    """Smallest axis-aligned rectangle containing every box."""
    if not boxes:
        raise ValueError("cover_rect needs at least one box")
    x1 = min(b.x for b in boxes)
    y1 = min(b.y for b in boxes)
    x2 = max(b.x2 for b in boxes)
    y2 = max(b.y2 for b in boxes)
    return BBox(x1, y1, x2 - x1, y2 - y1)


def union_area(boxes: Sequence[BBox]) -> float:
    """Exact area of the union of ``boxes``.

    Uses coordinate compression, which is cubic in the number of boxes; the
    neighbour sets this is called on hold a handful of boxes.
    """
    if not boxes:
        raise ValueError("union_area needs at least one box")
    if len(boxes) == 1:
        return boxes[0].area
    if len(boxes) == 2:
        a, b = boxes
        return a.area + b.area - intersection_area(a, b)

    xs = sorted({v for b in boxes for v in (b.x, b.x2)})
    total = 0.0
    for x_lo, x_hi in zip(xs, xs[1:]):
        # merge the y-intervals of boxes spanning this vertical strip
        spans = sorted((b.y, b.y2) for b in boxes if b.x <= x_lo and b.x2 >= x_hi)
        if not spans:
            continue
        covered = 0.0
        cur_lo, cur_hi = spans[0]
        for lo, hi in spans[1:]:
            if lo > cur_hi:
                covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            elif hi > cur_hi:
                cur_hi = hi
        covered += cur_hi - cur_lo
        total += covered * (x_hi - x_lo)
    return total
