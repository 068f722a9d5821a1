"""DAVIS-style sequence storage and a seeded synthetic sequence generator.

On disk a sequence is a directory holding ``frames/%05d.png`` (RGB) and
``masks/%05d.png`` (indexed: value k is object k, 0 is background).
Scene distractors, when present, are kept the same way under
``distractors/``. Object ids are the labels present in the first mask.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage

from . import config as cfgmod
from .geometry import BitMask, Box, box_from_mask
from .template import Image

FRAME_DIR, MASK_DIR, DISTRACTOR_DIR = "frames", "masks", "distractors"
FILE_PATTERN = "{:05d}.png"

MaskTrack = List[Optional[BitMask]]


class SequenceFormatError(ValueError):
    pass


def davis_palette() -> List[int]:
    palette = []
    for label in range(256):
        r = g = b = 0
        c = label
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette.extend((r, g, b))
    return palette


@dataclass
class SequenceData:
    name: str
    frames: List[Image]
    objects: List[MaskTrack]
    distractors: List[MaskTrack] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            return
        shape = self.frames[0].shape
        for t, frame in enumerate(self.frames):
            if frame.shape != shape:
                raise ValueError(f"frame {t} is {frame.width}x{frame.height}, expected {shape[1]}x{shape[0]}")
        for kind, tracks in (("object", self.objects), ("distractor", self.distractors)):
            for k, track in enumerate(tracks):
                if len(track) != len(self.frames):
                    raise ValueError(f"{kind} {k} has {len(track)} masks for {len(self.frames)} frames")
                for t, m in enumerate(track):
                    if m is not None and (m.shape != shape or m.count == 0):
                        raise ValueError(f"{kind} {k} mask at frame {t} is empty or mis-sized")
        for k, track in enumerate(self.objects):
            if track[0] is None:
                raise ValueError(f"object {k} is absent in the first frame")

    def __len__(self):
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def first_boxes(self) -> List[Box]:
        return [box_from_mask(track[0]) for track in self.objects]

    def gt_mask(self, obj: int, t: int) -> BitMask:
        """Ground truth of ``obj`` at frame ``t``; an empty mask when absent."""
        m = self.objects[obj][t]
        return m if m is not None else BitMask.empty(self.width, self.height)

    def __eq__(self, other):
        if not isinstance(other, SequenceData):
            return NotImplemented
        return (self.frames == other.frames and self.objects == other.objects
                and self.distractors == other.distractors)


def _label_map(tracks: Sequence[MaskTrack], t: int, width: int, height: int) -> np.ndarray:
    labels = np.zeros((height, width), dtype=np.uint8)
    for k, track in enumerate(tracks, 1):
        m = track[t]
        if m is None:
            continue
        fg = m.to_array()
        if np.any(labels[fg]):
            raise ValueError(f"masks overlap at frame {t}; indexed storage needs disjoint masks")
        labels[fg] = k
    return labels


def write_label_png(path: str, labels: np.ndarray):
    img = PILImage.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(davis_palette())
    img.save(path)


def read_label_png(path: str) -> np.ndarray:
    with PILImage.open(path) as img:
        if img.mode not in ("P", "L"):
            raise SequenceFormatError(f"{path}: expected an indexed PNG, got mode {img.mode}")
        return np.array(img)


def write_sequence(seq: SequenceData, directory: str, overwrite: bool = False):
    if not seq.frames:
        raise ValueError("cannot write an empty sequence")
    if os.path.isdir(directory) and os.listdir(directory) and not overwrite:
        raise FileExistsError(f"{directory} exists and is not empty (pass overwrite=True)")
    subdirs = [FRAME_DIR, MASK_DIR] + ([DISTRACTOR_DIR] if seq.distractors else [])
    for sub in subdirs:
        os.makedirs(os.path.join(directory, sub), exist_ok=True)
    for t, frame in enumerate(seq.frames):
        name = FILE_PATTERN.format(t)
        PILImage.fromarray(frame.pixels, mode="RGB").save(os.path.join(directory, FRAME_DIR, name))
        write_label_png(os.path.join(directory, MASK_DIR, name),
                        _label_map(seq.objects, t, seq.width, seq.height))
        if seq.distractors:
            write_label_png(os.path.join(directory, DISTRACTOR_DIR, name),
                            _label_map(seq.distractors, t, seq.width, seq.height))


def _split_labels(label_maps: List[np.ndarray], ids: Sequence[int]) -> List[MaskTrack]:
    tracks = []
    for k in ids:
        track = []
        for labels in label_maps:
            fg = labels == k
            track.append(BitMask.from_array(fg) if fg.any() else None)
        tracks.append(track)
    return tracks


def _frame_files(directory: str, sub: str) -> List[str]:
    path = os.path.join(directory, sub)
    if not os.path.isdir(path):
        raise SequenceFormatError(f"{path}: missing directory")
    names = sorted(n for n in os.listdir(path) if n.endswith(".png"))
    for t, n in enumerate(names):
        if n != FILE_PATTERN.format(t):
            raise SequenceFormatError(f"{os.path.join(path, FILE_PATTERN.format(t))}: missing frame")
    return [os.path.join(path, n) for n in names]


def load_masks(directory: str, sub: str = MASK_DIR) -> List[np.ndarray]:
    return [read_label_png(p) for p in _frame_files(directory, sub)]


def load_sequence(directory: str, require_gt: bool = True) -> SequenceData:
    """Read a sequence directory.

    With ``require_gt=False`` a lone first-frame mask is accepted; objects
    are then unannotated (absent) on every later frame.
    """
    frame_paths = _frame_files(directory, FRAME_DIR)
    if not frame_paths:
        raise SequenceFormatError(f"{directory}: no frames")
    frames = []
    for p in frame_paths:
        with PILImage.open(p) as img:
            frames.append(Image(np.array(img.convert("RGB"))))
    shape = frames[0].shape
    for p, f in zip(frame_paths, frames):
        if f.shape != shape:
            raise SequenceFormatError(f"{p}: size {f.width}x{f.height} differs from the first frame")
    mask_paths = _frame_files(directory, MASK_DIR)
    if not mask_paths:
        raise SequenceFormatError(f"{directory}: no first-frame mask")
    if len(mask_paths) != len(frames) and (require_gt or len(mask_paths) != 1):
        raise SequenceFormatError(f"{directory}: {len(frames)} frames but {len(mask_paths)} masks")
    labels = [read_label_png(p) for p in mask_paths]
    for p, m in zip(mask_paths, labels):
        if m.shape != shape:
            raise SequenceFormatError(f"{p}: mask size differs from the frames")
    ids = sorted(int(v) for v in np.unique(labels[0]) if v != 0)
    for p, m in zip(mask_paths, labels):
        unknown = set(np.unique(m).tolist()) - set(ids) - {0}
        if unknown:
            raise SequenceFormatError(f"{p}: unknown object index {sorted(unknown)[0]}")
    if ids != list(range(1, len(ids) + 1)):
        raise SequenceFormatError(f"{mask_paths[0]}: object indices must be 1..K, found {ids}")
    distractors = []
    if os.path.isdir(os.path.join(directory, DISTRACTOR_DIR)):
        dlabels = load_masks(directory, DISTRACTOR_DIR)
        count = max(int(m.max()) for m in dlabels) if dlabels else 0
        distractors = _split_labels(dlabels, range(1, count + 1))
    name = os.path.basename(os.path.normpath(directory))
    objects = _split_labels(labels, ids)
    for track in objects:
        track.extend([None] * (len(frames) - len(track)))
    return SequenceData(name, frames, objects, distractors)


def find_sequences(root: str) -> List[str]:
    """A sequence directory itself, or every sequence directory directly under ``root``."""
    if os.path.isdir(os.path.join(root, FRAME_DIR)) or os.path.isdir(os.path.join(root, MASK_DIR)):
        return [root]
    subs = sorted(os.path.join(root, d) for d in os.listdir(root))
    return [d for d in subs if os.path.isdir(os.path.join(d, MASK_DIR))]


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic sequence description.

    ``disappear`` holds ``(object, start, end)`` intervals (end exclusive);
    ``occluders`` holds ``(x0, y0, x1, y1, start, end)`` static gray bars.
    Distractors are recolored copies of a target that spawn next to it
    (``distractor_offset`` box sizes away) and then drift off on their own.
    """

    name: str = "synth"
    width: int = 256
    height: int = 256
    frames: int = 40
    objects: int = 2
    shape: str = "ellipse"
    min_size: int = 28
    max_size: int = 48
    waypoints: int = 3
    max_step: float = 3.0
    disappear: Tuple[Tuple[int, int, int], ...] = ()
    occluders: Tuple[Tuple[int, int, int, int, int, int], ...] = ()
    distractors: int = 0
    distractor_offset: float = 0.6
    distractor_speed: float = 3.0
    distractor_shade: float = 0.55
    spawn_range: Tuple[float, ...] = (0.25, 0.7)
    noise: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8 or self.frames < 1 or self.objects < 0:
            raise ValueError("frame size, frame count and object count must be positive")
        if self.shape not in ("ellipse", "rectangle"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not 2 <= self.min_size <= self.max_size < min(self.width, self.height):
            raise ValueError("object sizes must satisfy 2 <= min_size <= max_size < frame size")
        if self.waypoints < 1 or self.max_step < 0:
            raise ValueError("need at least one waypoint and a non-negative step")
        for obj, start, end in self.disappear:
            if not (0 <= obj < self.objects and 1 <= start < end <= self.frames):
                raise ValueError(f"disappearance interval {(obj, start, end)} outside the sequence")
        for x0, y0, x1, y1, start, end in self.occluders:
            if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height
                    and 1 <= start < end <= self.frames):
                raise ValueError(f"occluder {(x0, y0, x1, y1, start, end)} outside frame or sequence")
        if self.distractors and not self.objects:
            raise ValueError("distractors need at least one object to clone")
        if not 0.0 <= self.distractor_shade <= 1.0:
            raise ValueError("distractor_shade must lie in [0, 1]")
        if len(self.spawn_range) != 2 or not 0 <= self.spawn_range[0] <= self.spawn_range[1] <= 1:
            raise ValueError("spawn_range must be two fractions lo <= hi in [0, 1]")

    @classmethod
    def from_mapping(cls, values) -> "SynthConfig":
        return cfgmod.build(cls, values)


def _shape_mask(kind: str, cx: float, cy: float, w: int, h: int, width: int, height: int) -> np.ndarray:
    x0, y0 = int(math.floor(cx - w / 2)), int(math.floor(cy - h / 2))
    out = np.zeros((height, width), dtype=bool)
    ys, xs = np.ogrid[y0:y0 + h, x0:x0 + w]
    if kind == "rectangle":
        local = np.ones((h, w), dtype=bool)
    else:
        local = ((xs + 0.5 - (x0 + w / 2)) / (w / 2)) ** 2 + ((ys + 0.5 - (y0 + h / 2)) / (h / 2)) ** 2 <= 1.0
    sy0, sx0 = max(0, y0), max(0, x0)
    sy1, sx1 = min(height, y0 + h), min(width, x0 + w)
    if sy0 < sy1 and sx0 < sx1:
        out[sy0:sy1, sx0:sx1] = local[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0]
    return out


def _trajectory(rng, cfg: SynthConfig, w: int, h: int) -> np.ndarray:
    lo = np.array([w / 2 + 1, h / 2 + 1])
    hi = np.array([cfg.width - w / 2 - 1, cfg.height - h / 2 - 1])
    start = rng.uniform(lo, hi)
    if cfg.waypoints == 1 or cfg.frames == 1:
        return np.repeat(start[None], cfg.frames, axis=0)
    seg = (cfg.frames - 1) / (cfg.waypoints - 1)
    points = [start]
    for _ in range(cfg.waypoints - 1):
        angle = rng.uniform(0, 2 * math.pi)
        step = rng.uniform(0.3, 1.0) * cfg.max_step * seg
        nxt = points[-1] + step * np.array([math.cos(angle), math.sin(angle)])
        points.append(np.clip(nxt, lo, hi))
    times = np.linspace(0, cfg.frames - 1, cfg.waypoints)
    t = np.arange(cfg.frames)
    return np.stack([np.interp(t, times, [p[0] for p in points]),
                     np.interp(t, times, [p[1] for p in points])], axis=1)


def _object_color(rng) -> np.ndarray:
    hue = rng.uniform(0, 1)
    rgb = np.array([abs(hue * 6 - 3) - 1, 2 - abs(hue * 6 - 2), 2 - abs(hue * 6 - 4)])
    return (150 + 105 * np.clip(rgb, 0, 1)).astype(np.int16)


def generate_synthetic(cfg: SynthConfig) -> SequenceData:
    """Render a seeded sequence of moving shapes with exact ground truth."""
    rng = np.random.default_rng(cfg.seed)
    W, H, T = cfg.width, cfg.height, cfg.frames
    background = rng.integers(30, 90, size=3)
    texture = rng.integers(-cfg.noise, cfg.noise + 1, size=(H, W, 3)) if cfg.noise else np.zeros((H, W, 3), int)

    objs = []
    for _ in range(cfg.objects):
        w, h = (int(v) for v in rng.integers(cfg.min_size, cfg.max_size + 1, size=2))
        objs.append({"size": (w, h), "path": _trajectory(rng, cfg, w, h), "color": _object_color(rng)})

    distractors = []
    lo, hi = cfg.spawn_range
    for _ in range(cfg.distractors):
        parent = int(rng.integers(cfg.objects))
        spawn = int(round(rng.uniform(lo, hi) * (T - 1)))
        spawn = min(max(spawn, 1), T - 1) if T > 1 else 0
        angle = rng.uniform(0, 2 * math.pi)
        p = objs[parent]
        w, h = p["size"]
        direction = np.array([math.cos(angle), math.sin(angle)])
        origin = p["path"][spawn] + cfg.distractor_offset * np.array([w, h]) * direction
        path = np.full((T, 2), np.nan)
        steps = np.arange(T - spawn)[:, None]
        path[spawn:] = origin + cfg.distractor_speed * steps * direction + (p["path"][spawn:] - p["path"][spawn])
        color = (p["color"][[1, 2, 0]] * cfg.distractor_shade).astype(np.int16)
        distractors.append({"size": (w, h), "path": path, "color": color})

    hidden = [(obj, s, e) for obj, s, e in cfg.disappear]
    frames, obj_tracks = [], [[] for _ in objs]
    dis_tracks = [[] for _ in distractors]
    for t in range(T):
        canvas = np.clip(background + texture, 0, 255).astype(np.int16)
        layers = []
        for k, o in enumerate(objs):
            if any(obj == k and s <= t < e for obj, s, e in hidden):
                layers.append(None)
                continue
            cx, cy = o["path"][t]
            layers.append(_shape_mask(cfg.shape, cx, cy, *o["size"], W, H))
        dlayers = []
        for d in distractors:
            if np.isnan(d["path"][t, 0]):
                dlayers.append(None)
                continue
            cx, cy = d["path"][t]
            m = _shape_mask(cfg.shape, cx, cy, *d["size"], W, H)
            dlayers.append(m if m.any() else None)
        occ = np.zeros((H, W), dtype=bool)
        for x0, y0, x1, y1, s, e in cfg.occluders:
            if s <= t < e:
                occ[y0:y1, x0:x1] = True
        # paint order: targets by index, then distractors, then occluders
        visible = [None if m is None else m.copy() for m in layers]
        for k, m in enumerate(layers):
            if m is None:
                continue
            canvas[m] = objs[k]["color"]
            for j in range(k):
                if visible[j] is not None:
                    visible[j] &= ~m
        dvisible = [None if m is None else m.copy() for m in dlayers]
        for i, m in enumerate(dlayers):
            if m is None:
                continue
            canvas[m] = distractors[i]["color"]
            for v in visible:
                if v is not None:
                    v &= ~m
            for j in range(i):
                if dvisible[j] is not None:
                    dvisible[j] &= ~m
        canvas[occ] = 128
        for v in visible + dvisible:
            if v is not None:
                v &= ~occ
        frames.append(Image(canvas.astype(np.uint8)))
        for k, v in enumerate(visible):
            obj_tracks[k].append(BitMask.from_array(v) if v is not None and v.any() else None)
        for i, v in enumerate(dvisible):
            dis_tracks[i].append(BitMask.from_array(v) if v is not None and v.any() else None)
    for k, track in enumerate(obj_tracks):
        if track[0] is None:
            raise ValueError(f"object {k} is invisible in the first frame; adjust the config")
    return SequenceData(cfg.name, frames, obj_tracks, dis_tracks)
