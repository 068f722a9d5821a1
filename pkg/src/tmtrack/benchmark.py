"""Seeded drift benchmark: synthetic sequences with identity-swap events.

Each sequence has one dark look-alike distractor per target spawning beside
it. On the spawn frame the detector misses the true target, so plain IOU
matching jumps onto the distractor and, with unconditional template
updates, follows it from then on.

The training set comes from the same generator with different seeds,
short sequences and more distractors, so swap frames are frequent.
"""
from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from .datasets import SequenceData, SynthConfig, generate_synthetic
from .geometry import box_iou, mask_iou
from .pipeline import Tracker, TrackerConfig, run_sequence
from .proposals import DetectorScript, ScriptedDetector

BENCHMARK_SEED = 7
TRAINING_SEED = 11
# luminance-only state features cannot tell a same-brightness recolor from the target
DISTRACTOR_SHADE = 0.0


def swap_events(seq: SequenceData) -> Tuple[Tuple[int, int], ...]:
    """``(spawn_frame, nearest_target)`` for every scene distractor."""
    events = []
    for track in seq.distractors:
        present = [t for t, m in enumerate(track) if m is not None]
        if not present:
            continue
        t = present[0]
        box = track[t].bbox
        candidates = [(box_iou(box, seq.objects[k][t].bbox), -k, k)
                      for k in range(len(seq.objects)) if seq.objects[k][t] is not None]
        if candidates:
            events.append((t, max(candidates)[2]))
    return tuple(sorted(events))


def drift_scenario(seed: int, index: int, frames: int = 40, size: int = 256,
                   distractors_per_object: float = 1.0,
                   spawn_range: Tuple[float, float] = (0.25, 0.7)) -> Tuple[SequenceData, DetectorScript]:
    """One benchmark-style sequence and its detector script.

    A fractional ``distractors_per_object`` rounds up for each object with
    that probability.
    """
    rng = np.random.default_rng([seed, index])
    objects = int(rng.integers(1, 3))
    whole, frac = divmod(distractors_per_object, 1.0)
    distractors = sum(int(whole) + int(rng.random() < frac) for _ in range(objects))
    cfg = SynthConfig(name=f"drift{index:02d}", width=size, height=size, frames=frames, objects=objects,
                      distractors=distractors, distractor_shade=DISTRACTOR_SHADE, spawn_range=tuple(spawn_range),
                      seed=int(rng.integers(2 ** 31)))
    seq = generate_synthetic(cfg)
    script = DetectorScript(seed=int(rng.integers(2 ** 31)), jitter=0.03, morph_radius=1,
                            swaps=swap_events(seq))
    return seq, script


def drift_benchmark(seed: int = BENCHMARK_SEED, sequences: int = 10, frames: int = 40,
                    size: int = 256) -> List[Tuple[SequenceData, ScriptedDetector]]:
    out = []
    for i in range(sequences):
        seq, script = drift_scenario(seed, i, frames, size)
        out.append((seq, ScriptedDetector(seq, script)))
    return out


def drift_training_set(seed: int = TRAINING_SEED, sequences: int = 200, frames: int = 10,
                       size: int = 256) -> List[Tuple[SequenceData, ScriptedDetector]]:
    """Swap-dense training sequences: 1.5 distractors per object spawning anywhere in the clip."""
    out = []
    for i in range(sequences):
        seq, script = drift_scenario(seed, i, frames, size, distractors_per_object=1.5, spawn_range=(0.1, 0.9))
        out.append((seq, ScriptedDetector(seq, script)))
    return out


def mean_j(dataset, policy_factory: Callable[[], object], cfg: TrackerConfig = TrackerConfig()) -> float:
    """Mean region similarity over frames 2..T, objects and sequences."""
    per_sequence = []
    for seq, detector in dataset:
        tracker = Tracker(detector, policy_factory(), cfg)
        result = run_sequence(seq.frames, seq.first_boxes, tracker, gt=lambda k, t: seq.gt_mask(k, t))
        scores = [[mask_iou(result.masks[t][i], seq.gt_mask(k, t)) for t in range(1, len(seq))]
                  for i, k in enumerate(result.ids)]
        per_sequence.append(float(np.mean([np.mean(s) for s in scores])))
    return float(np.mean(per_sequence))
