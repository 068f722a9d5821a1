"""scikit-learn style front end: ``fit`` trains the agent, ``predict`` tracks."""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import agent as ag
from .geometry import mask_iou
from .pipeline import (AgentPolicy, SequenceResult, Tracker, TrackerConfig, TrainConfig, run_sequence,
                       train)
from .proposals import DetectorScript, ScriptedDetector
from .validation import check_detectors, check_sequences


class TemplateTracker(BaseEstimator):
    """Multi-object mask tracker with a learned template-update gate.

    Parameters mirror :class:`TrackerConfig` and :class:`TrainConfig`.
    ``X`` is a list of :class:`SequenceData`. Unless ``detectors`` are given
    to ``fit``/``predict``, each sequence gets a :class:`ScriptedDetector`
    built from ``detector_script``.

    Attributes set by ``fit``: ``agent_`` (the trained :class:`AgentNet`)
    and ``curve_`` (per-episode training log).
    """

    def __init__(self, alpha_first=1.0, beta_first=0.0, alpha=0.5, beta=0.5, n_keep=3,
                 ratio_big=2.0, ratio_mid=1.5, ratio_small=1.2, displacement_threshold=0.35,
                 proposal_cap=20, grid=16, keep_decay=0.9, gamma=0.9, actor_lr=1e-4, critic_lr=5e-4,
                 lr_decay=0.99, decay_every=200, clip_length=10, batch_size=20, iterations=50000,
                 hidden=128, reward_target="output", detector_script=None, random_state=0):
        self.alpha_first = alpha_first
        self.beta_first = beta_first
        self.alpha = alpha
        self.beta = beta
        self.n_keep = n_keep
        self.ratio_big = ratio_big
        self.ratio_mid = ratio_mid
        self.ratio_small = ratio_small
        self.displacement_threshold = displacement_threshold
        self.proposal_cap = proposal_cap
        self.grid = grid
        self.keep_decay = keep_decay
        self.gamma = gamma
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.clip_length = clip_length
        self.batch_size = batch_size
        self.iterations = iterations
        self.hidden = hidden
        self.reward_target = reward_target
        self.detector_script = detector_script
        self.random_state = random_state

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(self.alpha_first, self.beta_first, self.alpha, self.beta, self.n_keep,
                             self.ratio_big, self.ratio_mid, self.ratio_small, self.displacement_threshold,
                             self.proposal_cap, self.grid, self.keep_decay)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.gamma, self.actor_lr, self.critic_lr, self.lr_decay, self.decay_every,
                           self.clip_length, self.batch_size, self.iterations, self.hidden,
                           self.reward_target, int(self.random_state or 0))

    def _detectors(self, X, detectors):
        if detectors is not None:
            return check_detectors(detectors, len(X))
        script = self.detector_script or DetectorScript()
        return [ScriptedDetector(seq, script) for seq in X]

    def init_agent(self) -> ag.AgentNet:
        tcfg = self.train_config()
        return ag.AgentNet(self.tracker_config().feature_dim, tcfg.hidden, tcfg.actor_lr, tcfg.critic_lr,
                           tcfg.lr_decay, tcfg.decay_every, seed=tcfg.seed)

    def fit(self, X, y=None, detectors=None, agent: Optional[ag.AgentNet] = None):
        X = check_sequences(X, require_gt=True)
        net = agent.copy() if agent is not None else self.init_agent()
        self.agent_, self.curve_ = train(list(zip(X, self._detectors(X, detectors))), net,
                                         self.tracker_config(), self.train_config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "agent_"):
            raise NotFittedError("TemplateTracker is not fitted; call fit() or set_agent() first")

    def set_agent(self, net: ag.AgentNet):
        if net.feature_dim != self.tracker_config().feature_dim:
            raise ValueError(f"agent has D={net.feature_dim}, tracker grid gives D={self.tracker_config().feature_dim}")
        self.agent_ = net
        return self

    def track(self, X, detectors=None, policy=None) -> List[SequenceResult]:
        """Full per-sequence results (masks, confidences, diagnostics, timings)."""
        X = check_sequences(X)
        if policy is None:
            self._check_fitted()
        cfg = self.tracker_config()
        results = []
        for seq, det in zip(X, self._detectors(X, detectors)):
            pol = policy if policy is not None else AgentPolicy(self.agent_, "greedy")
            results.append(run_sequence(seq.frames, seq.first_boxes, Tracker(det, pol, cfg),
                                        gt=lambda k, t, seq=seq: seq.gt_mask(k, t)))
        return results

    def predict(self, X, detectors=None) -> List[List[np.ndarray]]:
        """Label maps per frame for every sequence."""
        return [[r.render_labels(t) for t in range(len(r.masks))] for r in self.track(X, detectors)]

    def score(self, X, y=None, detectors=None) -> float:
        """Mean region similarity over frames 2..T, objects, and sequences."""
        X = check_sequences(X, require_gt=True)
        per_seq = []
        for seq, r in zip(X, self.track(X, detectors)):
            per_obj = [np.mean([mask_iou(r.masks[t][i], seq.gt_mask(k, t)) for t in range(1, len(seq))])
                       for i, k in enumerate(r.ids)] if len(seq) > 1 else [1.0]
            per_seq.append(float(np.mean(per_obj)))
        return float(np.mean(per_seq))
