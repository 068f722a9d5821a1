"""Candidate detections: a scripted detector driven by ground truth and a
file-backed provider that replays precomputed proposals.

Both providers expose ``detect_region(frame, region, frame_index)`` and
``detect_full_frame(frame, frame_index)``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geometry import BitMask, Box, clip_mask, decode_rle, encode_rle, mask_iou
from .template import Image

PROPOSAL_FILE = "props_{:05d}.txt"
META_FILE = "meta.txt"
_CROSS = ndimage.generate_binary_structure(2, 1)


class ProposalFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Proposal:
    box: Box
    mask: BitMask
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.mask.count == 0:
            raise ValueError("proposal mask is empty")
        if not self.box.contains(self.mask.bbox):
            raise ValueError("proposal box does not cover its mask")

    @classmethod
    def from_mask(cls, mask: BitMask, confidence: float) -> "Proposal":
        return cls(mask.bbox, mask, float(confidence))


@dataclass(frozen=True)
class DetectorScript:
    """Perturbations the scripted detector applies to ground truth.

    ``swaps`` lists ``(frame_index, object_index)`` events on which the true
    object's detection is suppressed, so matching falls onto whatever else
    is nearby. ``swap_clone_offset``, when set, additionally emits a shifted
    clone of the suppressed object at that offset (in box sizes).
    """

    seed: int = 0
    jitter: float = 0.0
    morph_radius: int = 0
    dropout: float = 0.0
    object_dropout: Dict[int, float] = field(default_factory=dict)
    distractors: int = 0
    distractor_offset: float = 1.5
    swaps: Tuple[Tuple[int, int], ...] = ()
    swap_clone_offset: Optional[float] = None
    scene_distractors: bool = True
    cap: int = 20

    def __post_init__(self):
        probs = [self.dropout, *self.object_dropout.values()]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("dropout probabilities must lie in [0, 1]")
        if self.jitter < 0 or self.morph_radius < 0 or self.distractors < 0:
            raise ValueError("jitter, morph_radius and distractors must be non-negative")
        if self.cap < 1:
            raise ValueError("proposal cap must be at least 1")
        object.__setattr__(self, "swaps", tuple(tuple(int(v) for v in s) for s in self.swaps))

    def drop_probability(self, obj: int) -> float:
        return self.object_dropout.get(obj, self.dropout)


def shift_mask(array: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate a boolean array, filling vacated pixels with background."""
    out = np.zeros_like(array)
    h, w = array.shape
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[dst_y, dst_x] = array[src_y, src_x]
    return out


def _morph(array: np.ndarray, radius: int) -> np.ndarray:
    if radius > 0:
        return ndimage.binary_dilation(array, _CROSS, iterations=radius)
    if radius < 0:
        eroded = ndimage.binary_erosion(array, _CROSS, iterations=-radius)
        return eroded if eroded.any() else array
    return array


class ScriptedDetector:
    """Deterministic stand-in for an instance segmentation network.

    Proposals are derived from the sequence's ground truth (and its scene
    distractors) according to a :class:`DetectorScript`. Full-frame output
    depends only on ``(script, frame_index)``; region queries clip it.
    """

    def __init__(self, sequence, script: DetectorScript = DetectorScript()):
        self.sequence = sequence
        self.script = script
        self._full = lru_cache(maxsize=64)(self._generate)

    def _perturb(self, gt: np.ndarray, draws: np.ndarray) -> np.ndarray:
        rows = np.flatnonzero(gt.any(axis=1))
        cols = np.flatnonzero(gt.any(axis=0))
        w, h = cols[-1] - cols[0] + 1, rows[-1] - rows[0] + 1
        dx = int(round(draws[0] * self.script.jitter * w))
        dy = int(round(draws[1] * self.script.jitter * h))
        radius = int(round(draws[2] * self.script.morph_radius))
        return _morph(shift_mask(gt, dx, dy), radius)

    def _generate(self, frame_index: int) -> Tuple[Tuple[BitMask, BitMask, float], ...]:
        """Full-frame ``(mask, source_gt, confidence_scale)`` triples."""
        script, seq = self.script, self.sequence
        rng = np.random.default_rng([script.seed, frame_index])
        swapped = {obj for t, obj in script.swaps if t == frame_index}
        out = []
        present = []
        for k, track in enumerate(seq.objects):
            drop_draw = rng.random()
            draws = rng.uniform(-1.0, 1.0, size=3)
            gt = track[frame_index]
            if gt is None:
                continue
            present.append((k, gt))
            candidate = self._perturb(gt.to_array(), draws)
            if k in swapped:
                if script.swap_clone_offset is not None:
                    angle = rng.uniform(0.0, 2.0 * math.pi)
                    clone = self._clone(gt, angle, script.swap_clone_offset)
                    if clone is not None:
                        out.append((clone, gt, 0.5))
                continue
            if drop_draw < script.drop_probability(k):
                continue
            if candidate.any():
                out.append((BitMask.from_array(candidate), gt, 1.0))
        if script.scene_distractors:
            for track in getattr(seq, "distractors", ()):
                draws = rng.uniform(-1.0, 1.0, size=3)
                gt = track[frame_index]
                if gt is None:
                    continue
                candidate = self._perturb(gt.to_array(), draws)
                if candidate.any():
                    out.append((BitMask.from_array(candidate), gt, 0.5))
        for _ in range(script.distractors):
            if not present:
                break
            k, gt = present[int(rng.integers(len(present)))]
            angle = rng.uniform(0.0, 2.0 * math.pi)
            clone = self._clone(gt, angle, script.distractor_offset)
            if clone is not None:
                out.append((clone, gt, 0.5))
        return tuple(out)

    @staticmethod
    def _clone(gt: BitMask, angle: float, offset: float) -> Optional[BitMask]:
        box = gt.bbox
        dx = int(round(math.cos(angle) * offset * box.width))
        dy = int(round(math.sin(angle) * offset * box.height))
        shifted = shift_mask(gt.to_array(), dx, dy)
        return BitMask.from_array(shifted) if shifted.any() else None

    def detect_region(self, frame: Image, region: Box, frame_index: int) -> List[Proposal]:
        if not region.within(frame.width, frame.height):
            raise ValueError(f"region {region.as_tuple()} lies outside the frame")
        proposals = []
        for mask, source, scale in self._full(frame_index):
            clipped = clip_mask(mask, region)
            if clipped.count == 0:
                continue
            proposals.append(Proposal.from_mask(clipped, scale * mask_iou(clipped, source)))
            if len(proposals) == self.script.cap:
                break
        return proposals

    def detect_full_frame(self, frame: Image, frame_index: int) -> List[Proposal]:
        return self.detect_region(frame, Box(0, 0, frame.width, frame.height), frame_index)


def write_proposals(directory: str, frame_index: int, proposals: Sequence[Proposal], width: int, height: int):
    os.makedirs(directory, exist_ok=True)
    meta = os.path.join(directory, META_FILE)
    if not os.path.exists(meta):
        with open(meta, "w") as fh:
            fh.write(f"width={width}\nheight={height}\n")
    lines = []
    for p in proposals:
        if p.mask.shape != (height, width):
            raise ValueError("proposal mask does not match the declared frame size")
        rle = ",".join(str(r) for r in encode_rle(p.mask))
        lines.append(f"{p.confidence!r} {p.box.x0} {p.box.y0} {p.box.x1} {p.box.y1} {rle}\n")
    with open(os.path.join(directory, PROPOSAL_FILE.format(frame_index)), "w") as fh:
        fh.writelines(lines)


def read_meta(directory: str) -> Tuple[int, int]:
    path = os.path.join(directory, META_FILE)
    try:
        with open(path) as fh:
            items = dict(line.strip().split("=", 1) for line in fh if line.strip())
        return int(items["width"]), int(items["height"])
    except (OSError, KeyError, ValueError) as exc:
        raise ProposalFormatError(f"{path}: cannot read frame size ({exc})") from exc


def load_proposals(directory: str, frame_index: int) -> List[Proposal]:
    width, height = read_meta(directory)
    name = PROPOSAL_FILE.format(frame_index)
    path = os.path.join(directory, name)
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ProposalFormatError(f"frame {frame_index}: cannot read {path}: {exc}") from exc
    proposals = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        where = f"frame {frame_index} ({name} line {lineno})"
        parts = line.split()
        if len(parts) != 6:
            raise ProposalFormatError(f"{where}: expected 6 fields, found {len(parts)}")
        try:
            confidence = float(parts[0])
        except ValueError:
            raise ProposalFormatError(f"{where}: field 'confidence' is not a number: {parts[0]!r}") from None
        if not 0.0 <= confidence <= 1.0:
            raise ProposalFormatError(f"{where}: field 'confidence' = {parts[0]} outside [0, 1]")
        coords = []
        for field_name, raw in zip(("x0", "y0", "x1", "y1"), parts[1:5]):
            try:
                coords.append(int(raw))
            except ValueError:
                raise ProposalFormatError(f"{where}: field '{field_name}' is not an integer: {raw!r}") from None
        try:
            box = Box(*coords)
            mask = decode_rle([int(r) for r in parts[5].split(",")], width, height)
            proposals.append(Proposal(box, mask, confidence))
        except ValueError as exc:
            raise ProposalFormatError(f"{where}: field 'rle'/'box' invalid: {exc}") from None
    return proposals


class FileProposalProvider:
    """Replays proposals written by :func:`write_proposals`."""

    def __init__(self, directory: str):
        self.directory = directory
        self.width, self.height = read_meta(directory)

    def detect_full_frame(self, frame: Image, frame_index: int) -> List[Proposal]:
        return load_proposals(self.directory, frame_index)

    def detect_region(self, frame: Image, region: Box, frame_index: int) -> List[Proposal]:
        out = []
        for p in load_proposals(self.directory, frame_index):
            clipped = clip_mask(p.mask, region)
            if clipped.count:
                box = p.box.intersection(region)
                out.append(Proposal(box, clipped, p.confidence))
        return out
