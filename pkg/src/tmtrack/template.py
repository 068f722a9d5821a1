"""Target template, predicted result, and the keep/update decision.

The blackening compositors produce the two agent views: the template frame
with everything outside the template box set to black, and the prediction
frame with everything outside the predicted mask set to black.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import BitMask, Box


class Image:
    """Immutable 8-bit RGB image of shape ``(height, width, 3)``."""

    __slots__ = ("pixels", "_channel_sum")

    def __init__(self, pixels):
        pixels = np.asarray(pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) RGB array, got shape {pixels.shape}")
        if pixels.dtype != np.uint8:
            raise TypeError(f"expected uint8 pixels, got {pixels.dtype}")
        if pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise ValueError("image has zero area")
        pixels = np.array(pixels, copy=True, order="C")
        pixels.setflags(write=False)
        self.pixels = pixels
        self._channel_sum = None

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    def channel_sum(self) -> np.ndarray:
        """Per-pixel R+G+B as int32, cached."""
        if self._channel_sum is None:
            total = self.pixels.sum(axis=2, dtype=np.int32)
            total.setflags(write=False)
            self._channel_sum = total
        return self._channel_sum

    def crop(self, box: Box) -> "Image":
        return Image(self.pixels[box.slices()])

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash(self.pixels.tobytes())

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


class Action(enum.IntEnum):
    UPDATE = 0
    KEEP = 1


def _check_record(frame: Image, box: Box, mask: BitMask, what: str):
    if mask.shape != frame.shape:
        raise ValueError(f"{what} mask is {mask.width}x{mask.height}, frame is {frame.width}x{frame.height}")
    if not box.within(frame.width, frame.height):
        raise ValueError(f"{what} box {box.as_tuple()} lies outside the frame")
    if mask.count == 0:
        raise ValueError(f"{what} mask is empty")


@dataclass(frozen=True)
class TargetTemplate:
    frame: Image
    box: Box
    mask: BitMask

    def __post_init__(self):
        _check_record(self.frame, self.box, self.mask, "template")

    @property
    def box_crop(self) -> Image:
        return self.frame.crop(self.box)


@dataclass(frozen=True)
class PredictedResult:
    frame: Image
    box: Box
    mask: BitMask
    score: float = 0.0

    def __post_init__(self):
        _check_record(self.frame, self.box, self.mask, "prediction")

    @property
    def box_crop(self) -> Image:
        return self.frame.crop(self.box)


def init_template(frame: Image, box: Box) -> TargetTemplate:
    """Bootstrap a template from a first-frame box; the mask is the filled box."""
    if not box.within(frame.width, frame.height):
        raise ValueError(f"box {box.as_tuple()} lies outside the {frame.width}x{frame.height} frame")
    return TargetTemplate(frame, box, BitMask.from_box(box, frame.width, frame.height))


def apply_decision(template: TargetTemplate, prediction: PredictedResult, action: Action) -> TargetTemplate:
    if prediction.frame.shape != template.frame.shape:
        raise ValueError("prediction and template frames differ in size")
    action = Action(action)
    if action is Action.KEEP:
        return template
    return TargetTemplate(prediction.frame, prediction.box, prediction.mask)


def _blacken_outside(frame: Image, keep: np.ndarray) -> Image:
    out = np.zeros_like(frame.pixels)
    out[keep] = frame.pixels[keep]
    return Image(out)


def compose_template_view(template: TargetTemplate) -> Image:
    keep = np.zeros(template.frame.shape, dtype=bool)
    keep[template.box.slices()] = True
    return _blacken_outside(template.frame, keep)


def compose_prediction_view(prediction: PredictedResult) -> Image:
    return _blacken_outside(prediction.frame, prediction.mask.to_array())
