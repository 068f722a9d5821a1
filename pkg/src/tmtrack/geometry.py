"""Axis-aligned boxes and packed binary masks.

Boxes use half-open integer pixel ranges ``[x0, x1) x [y0, y1)``. Masks keep
their foreground as packed bit rows so that overlap counting reduces to a
byte-wise AND followed by a popcount over the rows both masks touch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)):
                raise TypeError(f"box coordinate {name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @classmethod
    def from_sequence(cls, values: Sequence[int]) -> "Box":
        if len(values) != 4:
            raise ValueError(f"a box needs 4 coordinates, got {len(values)}")
        return cls(*(int(v) for v in values))

    def as_tuple(self) -> tuple:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def intersection(self, other: "Box") -> Optional["Box"]:
        x0, y0 = max(self.x0, other.x0), max(self.y0, other.y0)
        x1, y1 = min(self.x1, other.x1), min(self.y1, other.y1)
        if x0 >= x1 or y0 >= y1:
            return None
        return Box(x0, y0, x1, y1)

    def contains(self, other: "Box") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)

    def within(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def slices(self) -> tuple:
        """Numpy ``(rows, cols)`` slices covering the box."""
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


class BitMask:
    """Immutable binary mask stored as packed bit rows.

    ``count`` and ``bbox`` (tight box of the foreground, ``None`` when empty)
    are computed once at construction.
    """

    __slots__ = ("width", "height", "_packed", "count", "bbox", "_array")

    def __init__(self, width: int, height: int, packed: np.ndarray, _array=None):
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        if packed.shape != (height, (width + 7) // 8):
            raise ValueError(
                f"packed rows have shape {packed.shape}, expected {(height, (width + 7) // 8)}")
        packed.setflags(write=False)
        self.width = int(width)
        self.height = int(height)
        self._packed = packed
        self._array = _array
        self.count = int(np.bitwise_count(packed).sum())
        self.bbox = _tight_box(self.to_array()) if self.count else None

    @classmethod
    def from_array(cls, array) -> "BitMask":
        array = np.asarray(array)
        if array.ndim != 2:
            raise ValueError(f"mask array must be 2-D, got shape {array.shape}")
        bits = array.astype(bool, copy=False)
        height, width = bits.shape
        unpacked = bits.copy()
        unpacked.setflags(write=False)
        return cls(width, height, np.packbits(bits, axis=1), _array=unpacked)

    @classmethod
    def from_box(cls, box: Box, width: int, height: int) -> "BitMask":
        if not box.within(width, height):
            raise ValueError(f"box {box.as_tuple()} outside {width}x{height} frame")
        array = np.zeros((height, width), dtype=bool)
        array[box.slices()] = True
        return cls.from_array(array)

    @classmethod
    def empty(cls, width: int, height: int) -> "BitMask":
        return cls.from_array(np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def to_array(self) -> np.ndarray:
        """Read-only boolean ``(height, width)`` view of the mask."""
        if self._array is None:
            array = np.unpackbits(self._packed, axis=1, count=self.width).astype(bool)
            array.setflags(write=False)
            self._array = array
        return self._array

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._packed, other._packed)

    def __hash__(self):
        return hash((self.width, self.height, self._packed.tobytes()))

    def __repr__(self):
        return f"BitMask({self.width}x{self.height}, count={self.count})"


def _tight_box(array: np.ndarray) -> Optional[Box]:
    rows = np.flatnonzero(array.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(array.any(axis=0))
    return Box(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def box_iou(a: Box, b: Box) -> float:
    inter = a.intersection(b)
    if inter is None:
        return 0.0
    overlap = inter.area
    return overlap / (a.area + b.area - overlap)


def mask_intersection(a: BitMask, b: BitMask) -> int:
    """Number of pixels in the foreground of both masks."""
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    if a.bbox is None or b.bbox is None:
        return 0
    inter = a.bbox.intersection(b.bbox)
    if inter is None:
        return 0
    rows = slice(inter.y0, inter.y1)
    cols = slice(inter.x0 // 8, (inter.x1 + 7) // 8)
    return int(np.bitwise_count(a.packed[rows, cols] & b.packed[rows, cols]).sum())


def mask_iou(a: BitMask, b: BitMask) -> float:
    """IOU of two equally sized masks; two empty masks agree perfectly (1.0)."""
    inter = mask_intersection(a, b)
    union = a.count + b.count - inter
    if union == 0:
        return 1.0
    return inter / union


def enclosing_box(boxes: Iterable[Box]) -> Box:
    boxes = list(boxes)
    if not boxes:
        raise ValueError("enclosing_box needs at least one box")
    return Box(min(b.x0 for b in boxes), min(b.y0 for b in boxes),
               max(b.x1 for b in boxes), max(b.y1 for b in boxes))


def expand_box(box: Box, ratio: float, width: int, height: int) -> Box:
    """Scale ``box`` about its center, rounding outward, clamped to the frame."""
    if not ratio >= 1.0:
        raise ValueError(f"expansion ratio must be >= 1, got {ratio}")
    cx, cy = box.center
    half_w = box.width * ratio / 2.0
    half_h = box.height * ratio / 2.0
    x0 = max(0, math.floor(cx - half_w))
    y0 = max(0, math.floor(cy - half_h))
    x1 = min(width, math.ceil(cx + half_w))
    y1 = min(height, math.ceil(cy + half_h))
    return Box(x0, y0, x1, y1)


def box_from_mask(mask: BitMask) -> Box:
    if mask.bbox is None:
        raise ValueError("cannot take the bounding box of an empty mask")
    return mask.bbox


def clip_mask(mask: BitMask, region: Box) -> BitMask:
    """Foreground of ``mask`` restricted to ``region``."""
    if mask.bbox is not None and region.contains(mask.bbox):
        return mask
    array = np.zeros(mask.shape, dtype=bool)
    array[region.slices()] = mask.to_array()[region.slices()]
    return BitMask.from_array(array)


def encode_rle(mask: BitMask) -> list:
    """Row-major run lengths alternating background/foreground, starting with background."""
    flat = mask.to_array().ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def decode_rle(runs: Sequence[int], width: int, height: int) -> BitMask:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError("negative run length")
    if sum(runs) != width * height:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {width * height}")
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    return BitMask.from_array(flat.reshape(height, width))
