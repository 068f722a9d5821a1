"""Per-frame tracking loop and episodic actor-critic training.

Each frame runs three steps per object: IOU matching of detections from a
shared search region, an accept/reject decision on the best match, and,
after ``n_keep`` consecutive rejections, one appearance-based re-detection
over the whole frame followed by a second decision.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import agent as ag
from .features import build_state, feature_dim
from .geometry import BitMask, Box, box_iou, enclosing_box, expand_box, mask_iou
from .matching import (FIRST_FRAME_WEIGHTS, MatchWeights, NoProposal, embed, score_appearance,
                       score_iou, select_best)
from .template import Action, Image, PredictedResult, TargetTemplate, apply_decision, init_template

PHASES = ("detection", "matching", "decision", "redetection")


@dataclass(frozen=True)
class TrackerConfig:
    alpha_first: float = 1.0
    beta_first: float = 0.0
    alpha: float = 0.5
    beta: float = 0.5
    n_keep: int = 3
    ratio_big: float = 2.0
    ratio_mid: float = 1.5
    ratio_small: float = 1.2
    displacement_threshold: float = 0.35
    proposal_cap: int = 20
    grid: int = 16
    keep_decay: float = 0.9

    def __post_init__(self):
        self.first_weights
        self.weights
        if min(self.ratio_big, self.ratio_mid, self.ratio_small) < 1.0:
            raise ValueError("expansion ratios must be >= 1")
        if self.n_keep < 1:
            raise ValueError("n_keep must be at least 1")
        if self.proposal_cap < 1 or self.grid < 1:
            raise ValueError("proposal_cap and grid must be positive")

    @property
    def first_weights(self) -> MatchWeights:
        return MatchWeights(self.alpha_first, self.beta_first)

    @property
    def weights(self) -> MatchWeights:
        return MatchWeights(self.alpha, self.beta)

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.grid)


@dataclass
class ObjectTrack:
    id: int
    template: TargetTemplate
    keep_streak: int = 0
    last_score: float = 1.0
    redetected_this_frame: bool = False
    prev_box: Optional[Box] = None
    bootstrap: bool = True


@dataclass
class Decision:
    """One accept/reject decision taken on a candidate."""

    state: np.ndarray
    action: Action
    prediction: PredictedResult
    route: str


@dataclass
class ObjectOutput:
    id: int
    mask: BitMask
    confidence: float
    action: Optional[Action]
    decisions: List[Decision]
    diagnostics: dict

    @property
    def final_decision(self) -> Optional[Decision]:
        return self.decisions[-1] if self.decisions else None


# -- policies ---------------------------------------------------------------

@dataclass
class DecisionContext:
    frame_index: int
    track: ObjectTrack
    prediction: PredictedResult
    route: str
    gt_mask: Optional[BitMask] = None


class AgentPolicy:
    def __init__(self, net: ag.AgentNet, mode: str = "greedy", rng: Optional[np.random.Generator] = None):
        self.net, self.mode, self.rng = net, mode, rng

    def __call__(self, state, ctx: DecisionContext) -> Action:
        return ag.sample_action(ag.actor_forward(self.net, state), self.mode, self.rng)


class ConstantPolicy:
    def __init__(self, action: Action):
        self.action = Action(action)

    def __call__(self, state, ctx: DecisionContext) -> Action:
        return self.action


class ScriptedPolicy:
    """Actions from ``fn(frame_index, object_id, route)``."""

    def __init__(self, fn: Callable[[int, int, str], Action]):
        self.fn = fn

    def __call__(self, state, ctx: DecisionContext) -> Action:
        return Action(self.fn(ctx.frame_index, ctx.track.id, ctx.route))


class OraclePolicy:
    """Greedy per-frame oracle: choose the action whose output mask best matches ground truth."""

    def __call__(self, state, ctx: DecisionContext) -> Action:
        if ctx.gt_mask is None:
            raise ValueError("the oracle policy needs ground-truth masks")
        keep = mask_iou(ctx.track.template.mask, ctx.gt_mask)
        update = mask_iou(ctx.prediction.mask, ctx.gt_mask)
        return Action.UPDATE if update >= keep else Action.KEEP


# -- search region ----------------------------------------------------------

def expansion_ratio(tracks: Sequence[ObjectTrack], cfg: TrackerConfig) -> float:
    for tr in tracks:
        if tr.prev_box is None:
            continue
        (px, py), (cx, cy) = tr.prev_box.center, tr.template.box.center
        if np.hypot(cx - px, cy - py) > cfg.displacement_threshold * tr.prev_box.diagonal:
            return cfg.ratio_big
    for a, b in combinations(tracks, 2):
        if box_iou(a.template.box, b.template.box) > 0:
            return cfg.ratio_small
    return cfg.ratio_mid


def search_region(tracks: Sequence[ObjectTrack], width: int, height: int, cfg: TrackerConfig) -> Box:
    """Expanded enclosing box of all current template boxes."""
    if not tracks:
        raise ValueError("search_region needs at least one track")
    merged = enclosing_box(tr.template.box for tr in tracks)
    return expand_box(merged, expansion_ratio(tracks, cfg), width, height)


# -- tracker ----------------------------------------------------------------

class Tracker:
    def __init__(self, detector, policy, cfg: TrackerConfig = TrackerConfig(), embedder=embed):
        self.detector = detector
        self.policy = policy
        self.cfg = cfg
        self.embedder = embedder

    def init(self, frame: Image, boxes: Sequence[Box], ids: Optional[Sequence[int]] = None) -> List[ObjectTrack]:
        ids = list(range(len(boxes))) if ids is None else list(ids)
        return [ObjectTrack(i, init_template(frame, b)) for i, b in zip(ids, boxes)]

    def _decide(self, track, prediction, route, frame_index, gt_mask, timings) -> Decision:
        t0 = time.perf_counter()
        state = build_state(track.template, prediction, self.cfg.grid)
        ctx = DecisionContext(frame_index, track, prediction, route, gt_mask)
        action = Action(self.policy(state, ctx))
        timings["decision"] += time.perf_counter() - t0
        return Decision(state, action, prediction, route)

    def _apply(self, track: ObjectTrack, decision: Decision):
        if decision.action is Action.UPDATE:
            track.prev_box = track.template.box
            track.template = apply_decision(track.template, decision.prediction, Action.UPDATE)
            track.keep_streak = 0
            track.last_score = decision.prediction.score
            track.bootstrap = False
        else:
            track.keep_streak += 1
            track.last_score *= self.cfg.keep_decay

    def _forced_keep(self, track: ObjectTrack):
        track.keep_streak += 1
        track.last_score *= self.cfg.keep_decay

    def step(self, frame: Image, frame_index: int, tracks: List[ObjectTrack],
             gt_masks: Optional[Dict[int, BitMask]] = None) -> List[ObjectOutput]:
        """Process one frame, updating ``tracks`` in place."""
        timings = dict.fromkeys(PHASES, 0.0)
        t0 = time.perf_counter()
        region = search_region(tracks, frame.width, frame.height, self.cfg)
        proposals = self.detector.detect_region(frame, region, frame_index)[:self.cfg.proposal_cap]
        timings["detection"] += time.perf_counter() - t0
        outputs = []
        for track in tracks:
            gt = None if gt_masks is None else gt_masks.get(track.id)
            track.redetected_this_frame = False
            decisions = []
            t0 = time.perf_counter()
            weights = self.cfg.first_weights if track.bootstrap else self.cfg.weights
            scores = [score_iou(track.template, p, weights) for p in proposals]
            try:
                best = select_best(proposals, scores)
            except NoProposal:
                best = None
            timings["matching"] += time.perf_counter() - t0
            top = sorted(scores, reverse=True)[:3]
            first_action = None
            if best is None:
                self._forced_keep(track)
            else:
                p = proposals[best]
                pred = PredictedResult(frame, p.box, p.mask, scores[best])
                d = self._decide(track, pred, "iou", frame_index, gt, timings)
                decisions.append(d)
                self._apply(track, d)
                first_action = d.action
            redetect_scores = []
            if track.keep_streak >= self.cfg.n_keep and not track.redetected_this_frame:
                t0 = time.perf_counter()
                track.redetected_this_frame = True
                candidates = self.detector.detect_full_frame(frame, frame_index)[:self.cfg.proposal_cap]
                if candidates:
                    ref = self.embedder(track.template.box_crop)
                    redetect_scores = [score_appearance(track.template, c, frame, self.embedder, ref)
                                       for c in candidates]
                timings["redetection"] += time.perf_counter() - t0
                track.keep_streak = 0
                if redetect_scores:
                    j = select_best(candidates, redetect_scores)
                    c = candidates[j]
                    pred = PredictedResult(frame, c.box, c.mask, redetect_scores[j])
                    d = self._decide(track, pred, "appearance", frame_index, gt, timings)
                    decisions.append(d)
                    self._apply(track, d)
                    track.keep_streak = 0
            final = decisions[-1].action if decisions else Action.KEEP
            diag = {
                "frame": frame_index,
                "object": track.id,
                "action": final.name.lower(),
                "first_action": None if first_action is None else first_action.name.lower(),
                "forced_keep": best is None,
                "top_scores": [round(float(s), 6) for s in top],
                "redetection_scores": [round(float(s), 6) for s in sorted(redetect_scores, reverse=True)[:3]],
                "streak": track.keep_streak,
                "redetected": track.redetected_this_frame,
                "confidence": round(float(track.last_score), 6),
            }
            outputs.append(ObjectOutput(track.id, track.template.mask, track.last_score, final, decisions, diag))
        for out in outputs:
            out.diagnostics["timings"] = {k: round(v, 6) for k, v in timings.items()}
        self.last_timings = timings
        return outputs


# -- sequences --------------------------------------------------------------

@dataclass
class SequenceResult:
    ids: List[int]
    masks: List[List[BitMask]]
    confidences: List[List[float]]
    actions: List[List[Optional[Action]]]
    diagnostics: List[dict]
    timings: Dict[str, float]
    wall_time: float

    def render_labels(self, t: int) -> np.ndarray:
        """Label map for frame ``t``; on overlap the more confident object wins."""
        labels = np.zeros(self.masks[t][0].shape, dtype=np.uint8)
        # paint least confident first; ties go to the lower object id
        order = sorted(range(len(self.ids)), key=lambda i: (self.confidences[t][i], -i))
        for i in order:
            labels[self.masks[t][i].to_array()] = self.ids[i] + 1
        return labels

    def diagnostics_text(self, timings: bool = False) -> str:
        """JSON lines, one per object and frame; wall-clock timings only on request."""
        rows = self.diagnostics if timings else [{k: v for k, v in d.items() if k != "timings"}
                                                 for d in self.diagnostics]
        return "".join(json.dumps(d, sort_keys=True) + "\n" for d in rows)


def run_sequence(frames: Sequence[Image], boxes: Sequence[Box], tracker: Tracker,
                 ids: Optional[Sequence[int]] = None, start: int = 0,
                 gt: Optional[Callable[[int, int], BitMask]] = None) -> SequenceResult:
    """Track from ``boxes`` on ``frames[0]``; frame ``i`` is detector index ``start + i``."""
    if len(frames) == 0:
        raise ValueError("empty sequence")
    wall0 = time.perf_counter()
    tracks = tracker.init(frames[0], boxes, ids)
    ids = [tr.id for tr in tracks]
    masks = [[tr.template.mask for tr in tracks]]
    confidences = [[tr.last_score for tr in tracks]]
    actions = [[None for _ in tracks]]
    diagnostics = []
    totals = dict.fromkeys(PHASES, 0.0)
    totals["init"] = time.perf_counter() - wall0
    for i in range(1, len(frames)):
        index = start + i
        gt_masks = None if gt is None else {k: gt(k, index) for k in ids}
        outs = tracker.step(frames[i], index, tracks, gt_masks)
        for k, v in tracker.last_timings.items():
            totals[k] += v
        masks.append([o.mask for o in outs])
        confidences.append([o.confidence for o in outs])
        actions.append([o.action for o in outs])
        diagnostics.extend(o.diagnostics for o in outs)
    wall = time.perf_counter() - wall0
    totals["other"] = max(0.0, wall - sum(totals.values()))
    return SequenceResult(ids, masks, confidences, actions, diagnostics, totals, wall)


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    actor_lr: float = 1e-4
    critic_lr: float = 5e-4
    lr_decay: float = 0.99
    decay_every: int = 200
    clip_length: int = 10
    batch_size: int = 20
    iterations: int = 50000
    hidden: int = 128
    reward_target: str = "output"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.clip_length < 2 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("clip_length >= 2, batch_size >= 1 and iterations >= 0 required")
        if self.reward_target not in ("output", "prediction"):
            raise ValueError("reward_target must be 'output' or 'prediction'")


@dataclass(frozen=True)
class Clip:
    sequence: object
    detector: object
    start: int
    length: int
    ids: tuple


def make_clips(dataset, length: int) -> List[Clip]:
    """Non-overlapping clips; objects must be visible on a clip's first frame to be tracked in it."""
    clips = []
    for seq, detector in dataset:
        for start in range(0, len(seq) - length + 1, length):
            ids = tuple(k for k, track in enumerate(seq.objects) if track[start] is not None)
            if ids:
                clips.append(Clip(seq, detector, start, length, ids))
    return clips


@dataclass
class EpisodeLog:
    rewards: List[float] = field(default_factory=list)
    similarities: List[float] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    deltas: List[float] = field(default_factory=list)
    learned: List[tuple] = field(default_factory=list)

    @property
    def transitions(self) -> int:
        return len(self.deltas)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else 0.0

    @property
    def mean_j(self) -> float:
        return float(np.mean(self.similarities)) if self.similarities else 0.0


def _learn(net: ag.AgentNet, s, a, r, s_next, terminal: bool, gamma: float) -> float:
    v = ag.critic_forward(net, s)
    v_next = 0.0 if terminal else ag.critic_forward(net, s_next)
    delta = ag.td_error(r, v_next, v, gamma, terminal)
    ag.update_critic(net, s, delta)
    ag.update_actor(net, s, a, delta)
    ag.decay_learning_rates(net)
    return delta


def train_episode(clip: Clip, net: ag.AgentNet, cfg: TrackerConfig, tcfg: TrainConfig,
                  rng: np.random.Generator, budget: Optional[int] = None) -> EpisodeLog:
    """Run one clip with a stochastic policy, updating ``net`` after every transition.

    The transition for frame ``t`` is learned once the state of frame
    ``t + 1`` is known; the clip's last decision is terminal. At most
    ``budget`` transitions are learned.
    """
    seq = clip.sequence
    tracker = Tracker(clip.detector, AgentPolicy(net, "stochastic", rng), cfg)
    start = clip.start
    frame0 = seq.frames[start]
    boxes = [seq.objects[k][start].bbox for k in clip.ids]
    tracks = tracker.init(frame0, boxes, clip.ids)
    log = EpisodeLog()
    pending: Dict[int, tuple] = {}
    budget = float("inf") if budget is None else budget

    def finish(key, s_next, terminal):
        s, a, r, j_pred = pending.pop(key)
        if log.transitions < budget:
            delta = _learn(net, s, a, r, s_next, terminal, tcfg.gamma)
            log.deltas.append(delta)
            log.learned.append((int(a), r, j_pred, delta, terminal))

    for index in range(start + 1, start + clip.length):
        gt_masks = {k: seq.gt_mask(k, index) for k in clip.ids}
        outs = tracker.step(seq.frames[index], index, tracks, gt_masks)
        for out in outs:
            d = out.final_decision
            if d is None:
                continue
            j_pred = mask_iou(d.prediction.mask, gt_masks[out.id])
            j = mask_iou(out.mask, gt_masks[out.id]) if tcfg.reward_target == "output" else j_pred
            r = ag.reward(j)
            log.rewards.append(r)
            log.similarities.append(j)
            log.actions.append(int(d.action))
            if out.id in pending:
                finish(out.id, d.state, False)
            pending[out.id] = (d.state, d.action, r, j_pred)
        if log.transitions >= budget:
            break
    for key in list(pending):
        finish(key, None, True)
    return log


@dataclass
class TrainingCurve:
    rows: List[dict] = field(default_factory=list)

    def text(self) -> str:
        head = "episode\ttransitions\tmean_reward\tmean_j\tupdate_rate\tactor_lr\n"
        return head + "".join(
            f"{r['episode']}\t{r['transitions']}\t{r['mean_reward']!r}\t{r['mean_j']!r}\t"
            f"{r['update_rate']!r}\t{r['actor_lr']!r}\n" for r in self.rows)


def train(dataset, net: ag.AgentNet, cfg: TrackerConfig, tcfg: TrainConfig,
          progress: Optional[Callable[[dict], None]] = None):
    """Train ``net`` in place on ``(sequence, detector)`` pairs until the transition budget is spent."""
    if net.feature_dim != cfg.feature_dim:
        raise ValueError(f"agent expects D={net.feature_dim}, tracker produces D={cfg.feature_dim}")
    clips = make_clips(dataset, tcfg.clip_length)
    if not clips:
        raise ValueError("dataset yields no training clips")
    rng = np.random.default_rng(tcfg.seed)
    curve = TrainingCurve()
    done = 0
    episode = 0
    while done < tcfg.iterations:
        batch = rng.choice(len(clips), size=min(tcfg.batch_size, len(clips)), replace=False)
        before = done
        for c in batch:
            if done >= tcfg.iterations:
                break
            log = train_episode(clips[c], net, cfg, tcfg, rng, budget=tcfg.iterations - done)
            done += log.transitions
            row = {"episode": episode, "transitions": done, "mean_reward": log.mean_reward,
                   "mean_j": log.mean_j,
                   "update_rate": float(np.mean([a == 0 for a in log.actions])) if log.actions else 0.0,
                   "actor_lr": net.actor_lr}
            curve.rows.append(row)
            if progress:
                progress(row)
            episode += 1
        if done == before:
            raise RuntimeError("a whole batch of clips produced no agent decisions")
    return net, curve
