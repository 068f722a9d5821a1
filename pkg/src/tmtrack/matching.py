"""Proposal scoring against a target template.

Two scorers: a weighted box/mask IOU used on every frame, and an
appearance similarity over crop embeddings used for re-detection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .geometry import box_iou, mask_iou
from .template import Image, TargetTemplate

HISTOGRAM_BINS = 8


class NoProposal(LookupError):
    """Raised when there is nothing to select from."""


@dataclass(frozen=True)
class MatchWeights:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"weights must be non-negative, got alpha={self.alpha}, beta={self.beta}")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")


FIRST_FRAME_WEIGHTS = MatchWeights(1.0, 0.0)


def score_iou(template: TargetTemplate, proposal, weights: MatchWeights) -> float:
    """Weighted IOU of boxes and masks. ``proposal`` needs ``box`` and ``mask``."""
    score = 0.0
    if weights.alpha:
        score += weights.alpha * box_iou(template.box, proposal.box)
    if weights.beta:
        score += weights.beta * mask_iou(template.mask, proposal.mask)
    return score


class Embedder(Protocol):
    def __call__(self, patch: Image) -> np.ndarray: ...


class HistogramEmbedder:
    """Joint RGB histogram with ``bins`` levels per channel, L1-normalised."""

    def __init__(self, bins: int = HISTOGRAM_BINS):
        if 256 % bins:
            raise ValueError("bins must divide 256")
        self.bins = bins

    @property
    def dim(self) -> int:
        return self.bins ** 3

    def __call__(self, patch: Image) -> np.ndarray:
        pixels = patch.pixels.reshape(-1, 3)
        if pixels.shape[0] == 0:
            raise ValueError("cannot embed a zero-area patch")
        q = (pixels // (256 // self.bins)).astype(np.int64)
        index = (q[:, 0] * self.bins + q[:, 1]) * self.bins + q[:, 2]
        hist = np.bincount(index, minlength=self.dim).astype(np.float64)
        return hist / pixels.shape[0]


_default_embedder = HistogramEmbedder()


def embed(patch: Image) -> np.ndarray:
    return _default_embedder(patch)


def similarity(distance: float) -> float:
    return 1.0 / (1.0 + distance)


def score_appearance(template: TargetTemplate, proposal, frame: Image, embedder: Embedder = embed,
                     template_embedding: np.ndarray = None) -> float:
    """``1 / (1 + L2 distance)`` between embeddings of the two box crops.

    The proposal's crop is taken from ``frame``. A precomputed template
    embedding may be passed to avoid recomputing it per proposal.
    """
    if template_embedding is None:
        template_embedding = embedder(template.box_crop)
    candidate = embedder(frame.crop(proposal.box))
    return similarity(float(np.linalg.norm(template_embedding - candidate)))


def select_best(proposals: Sequence, scores: Sequence[float]) -> int:
    """Index of the highest score; the lowest index wins ties."""
    if len(proposals) != len(scores):
        raise ValueError(f"{len(proposals)} proposals but {len(scores)} scores")
    if len(scores) == 0:
        raise NoProposal("no proposals to select from")
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))
