"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

from .datasets import SequenceData


def check_sequences(X, require_gt: bool = False):
    if isinstance(X, SequenceData):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("expected at least one sequence")
    for seq in X:
        if not isinstance(seq, SequenceData):
            raise TypeError(f"expected SequenceData, got {type(seq).__name__}")
        if not seq.frames:
            raise ValueError(f"sequence {seq.name!r} has no frames")
        if not seq.objects:
            raise ValueError(f"sequence {seq.name!r} has no objects to track")
        if require_gt and len(seq) < 2:
            raise ValueError(f"sequence {seq.name!r} needs at least two frames with ground truth")
    return X


def check_detectors(detectors, n: int):
    detectors = list(detectors)
    if len(detectors) != n:
        raise ValueError(f"got {len(detectors)} detectors for {n} sequences")
    for d in detectors:
        if not (hasattr(d, "detect_region") and hasattr(d, "detect_full_frame")):
            raise TypeError(f"{type(d).__name__} is not a proposal provider")
    return detectors
