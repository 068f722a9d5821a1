"""Acceptance checks. Each test records one PASS/FAIL line through the ``criterion`` fixture."""
import filecmp
import json
import os
import time

import numpy as np
import pytest

from tmtrack import agent as ag
from tmtrack.benchmark import drift_benchmark, drift_training_set, mean_j
from tmtrack.cli import main
from tmtrack.datasets import SynthConfig, generate_synthetic
from tmtrack.geometry import BitMask, mask_iou
from tmtrack.gradcheck import gradient_check, random_net, random_state
from tmtrack.matching import score_iou, select_best
from tmtrack.metrics import contour_accuracy, longterm_f_score
from tmtrack.pipeline import (AgentPolicy, ConstantPolicy, OraclePolicy, ScriptedPolicy, Tracker, TrackerConfig,
                              TrainConfig, run_sequence, search_region, train)
from tmtrack.proposals import DetectorScript, ScriptedDetector
from tmtrack.template import Action


def pixel_iou(a, b):
    inter = union = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x and y
        union += x or y
    return 1.0 if union == 0 else inter / union


def test_criterion_01_geometry_oracle(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    random_bad = 0
    for _ in range(1000):
        density = rng.random()
        a = rng.random((32, 32)) < density
        b = rng.random((32, 32)) < rng.random()
        random_bad += mask_iou(BitMask.from_array(a), BitMask.from_array(b)) != pixel_iou(a, b)

    # every mask made of one horizontal run inside one row, plus the empty mask, all pairs
    arrays = [np.zeros((8, 8), bool)]
    for row in range(8):
        for x0 in range(8):
            for x1 in range(x0 + 1, 9):
                m = np.zeros((8, 8), bool)
                m[row, x0:x1] = True
                arrays.append(m)
    masks = [BitMask.from_array(m) for m in arrays]
    counts = [int(m.sum()) for m in arrays]
    flat = np.stack([m.ravel() for m in arrays])
    inter = flat.astype(np.int64) @ flat.T.astype(np.int64)
    run_bad = 0
    for i, a in enumerate(masks):
        for j, b in enumerate(masks):
            union = counts[i] + counts[j] - inter[i, j]
            expected = 1.0 if union == 0 else inter[i, j] / union
            run_bad += mask_iou(a, b) != expected

    # row-major runs crossing row boundaries, against themselves and their complements
    wrap_bad = 0
    for s in range(64):
        for length in range(1, 65 - s):
            m = np.zeros(64, bool)
            m[s:s + length] = True
            m = m.reshape(8, 8)
            wrap_bad += mask_iou(BitMask.from_array(m), BitMask.from_array(m)) != 1.0
            wrap_bad += mask_iou(BitMask.from_array(m), BitMask.from_array(~m)) != pixel_iou(m, ~m)
    elapsed = time.perf_counter() - start
    ok = random_bad == 0 and run_bad == 0 and wrap_bad == 0 and elapsed < 10.0
    criterion(1, ok, f"random mismatches {random_bad}, run-pair mismatches {run_bad} of {len(masks) ** 2}, "
                     f"wrapped-run mismatches {wrap_bad}, {elapsed:.2f}s")


def test_criterion_02_reward(criterion):
    examples = {0.05: -10.0, 0.1: -10.0, 0.2: 10.8, 1.0: 110.0}
    worst = max(abs(ag.reward(j) - r) for j, r in examples.items())
    grid = [ag.reward(float(j)) for j in np.linspace(0.0, 1.0, 1001)]
    monotone = all(b >= a for a, b in zip(grid, grid[1:]))
    criterion(2, worst <= 1e-12 and monotone, f"max example error {worst:.2e}, monotone on 1001 points: {monotone}")


def test_criterion_03_gradient_check(criterion):
    start = time.perf_counter()
    report = gradient_check(seed=0, pairs=10)
    elapsed = time.perf_counter() - start
    ok = report.passed(1e-4) and elapsed < 60.0
    criterion(3, ok, f"actor {report.actor_error:.2e}, critic {report.critic_error:.2e}, "
                     f"{report.checked} coordinates, {elapsed:.1f}s")


def test_criterion_04_td_and_update(criterion):
    td = ag.td_error(1, 2, 1, 0.9)
    terminal = ag.td_error(1, 2, 1, 0.9, terminal=True)
    increased = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        net = random_net(rng, 262, 128)
        net.actor_lr = 1e-4
        s = random_state(rng, net)
        a = int(rng.integers(2))
        before = ag.actor_forward(net, s)[a]
        ag.update_actor(net, s, a, 0.5)
        increased += ag.actor_forward(net, s)[a] > before
    ok = abs(td - 1.8) < 1e-12 and terminal == ag.td_error(1, 0, 1, 0.9) and increased == 10
    criterion(4, ok, f"td {td!r}, terminal {terminal!r}, pi increased on {increased}/10 nets")


@pytest.fixture(scope="module")
def forty_frames():
    return generate_synthetic(SynthConfig(name="accept", width=160, height=120, frames=40, objects=2,
                                          min_size=18, max_size=30, seed=5))


def _run(seq, policy, script=DetectorScript()):
    tracker = Tracker(ScriptedDetector(seq, script), policy, TrackerConfig())
    return run_sequence(seq.frames, seq.first_boxes, tracker, gt=lambda k, t: seq.gt_mask(k, t))


def test_criterion_05_pipeline_identity(criterion, forty_frames):
    seq = forty_frames
    res = _run(seq, ConstantPolicy(Action.UPDATE))
    js = [mask_iou(res.masks[t][i], seq.gt_mask(k, t)) for t in range(1, len(seq)) for i, k in enumerate(res.ids)]
    kept = _run(seq, ConstantPolicy(Action.KEEP))
    constant = all(kept.masks[t][i] == kept.masks[0][i] for t in range(len(seq)) for i in range(len(kept.ids)))
    ok = min(js) == 1.0 and constant
    criterion(5, ok, f"update min J {min(js)} over {len(js)} object-frames, keep bit-constant: {constant}")


def test_criterion_06_redetection(criterion, forty_frames):
    calls = []

    def decide(t, k, route):
        calls.append((t, k, route))
        return Action.KEEP if t in (5, 6, 7) else Action.UPDATE

    res = _run(forty_frames, ScriptedPolicy(decide))
    fired = sorted({(d["frame"], d["object"]) for d in res.diagnostics if d["redetected"]})
    per_frame = {}
    for t, k, route in calls:
        if route == "appearance":
            per_frame[(t, k)] = per_frame.get((t, k), 0) + 1
    expected = [(7, i) for i in range(len(res.ids))]
    ok = fired == expected and sorted(per_frame) == expected and max(per_frame.values()) == 1
    criterion(6, ok, f"re-detections at {fired}, max per frame {max(per_frame.values(), default=0)}")


def test_criterion_07_drift_learning(criterion):
    bench = drift_benchmark()
    update = mean_j(bench, lambda: ConstantPolicy(Action.UPDATE))
    oracle = mean_j(bench, OraclePolicy)
    start = time.perf_counter()
    net = ag.AgentNet(seed=0)
    net, _ = train(drift_training_set(), net, TrackerConfig(), TrainConfig(iterations=50000, seed=0))
    elapsed = time.perf_counter() - start
    agent = mean_j(bench, lambda: AgentPolicy(net))
    ok = agent >= update + 0.05 and oracle - update >= 0.10 and elapsed <= 1800.0
    criterion(7, ok, f"agent {agent:.4f}, update {update:.4f}, oracle {oracle:.4f}, "
                     f"training {elapsed:.0f}s")


def test_criterion_08_metrics(criterion):
    sq = np.zeros((40, 40), bool)
    sq[5:15, 5:15] = True
    far = np.zeros((40, 40), bool)
    far[25:35, 25:35] = True
    sq, far = BitMask.from_array(sq), BitMask.from_array(far)
    same = contour_accuracy(sq, sq, 1)
    disjoint = contour_accuracy(sq, far, 1)

    def sweep(conf, pp, gp, ov):
        best = 0.0
        for tau in sorted(set(conf) | {0.0, 1.0, 1.5}):
            rep = [p and c >= tau for c, p in zip(conf, pp)]
            q = sum(o for o, r, g in zip(ov, rep, gp) if r and g)
            prec = q / sum(rep) if sum(rep) else 0.0
            rec = q / sum(gp) if sum(gp) else 0.0
            best = max(best, 2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        return best

    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        conf = [round(float(c), 2) for c in rng.random(5)]
        pp = [bool(v) for v in rng.random(5) < 0.8]
        gp = [bool(v) for v in rng.random(5) < 0.7]
        ov = [float(v) if p and g else 0.0 for v, p, g in zip(rng.random(5), pp, gp)]
        worst = max(worst, abs(longterm_f_score(conf, pp, gp, ov)[0] - sweep(conf, pp, gp, ov)))
    ok = same == 1.0 and disjoint == 0.0 and worst <= 1e-12
    criterion(8, ok, f"identical {same}, far-disjoint {disjoint}, LT-F max deviation {worst:.1e} on 20 cases")


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(os.path.join(a, d), os.path.join(b, d))
                                               for d in cmp.common_dirs)


def test_criterion_09_determinism(criterion, tmp_path):
    data = tmp_path / "data"
    small = ["--set", "synth.width=96", "--set", "synth.height=80", "--set", "synth.frames=15"]
    assert main(["synth", "--out", str(data), "--sequences", "3", "--seed", "3"] + small, environ={}) == 0
    ckpt = tmp_path / "agent.bin"
    ag.save_checkpoint(ag.AgentNet(seed=1), str(ckpt))
    base = ["track", "--data", str(data), "--checkpoint", str(ckpt), "--seed", "8",
            "--set", "detector.jitter=0.1", "--set", "detector.distractors=2"]
    for name, jobs in (("first", "1"), ("second", "1"), ("parallel", "2")):
        assert main(base + ["--out", str(tmp_path / name), "--jobs", jobs], environ={}) == 0
        for seq in os.listdir(tmp_path / name):
            timing = tmp_path / name / seq / "timings.tsv"
            if timing.exists():
                os.remove(timing)
    masks = sorted((tmp_path / "first").glob("*/masks/*.png"))
    diag = [json.loads(line) for line in (tmp_path / "first" / "synth00" / "diagnostics.jsonl").open()]
    repeat = _same_tree(tmp_path / "first", tmp_path / "second")
    parallel = _same_tree(tmp_path / "first", tmp_path / "parallel")
    ok = repeat and parallel and len(masks) == 45 and diag
    criterion(9, ok, f"repeat identical {repeat}, jobs 1 vs 2 identical {parallel}, {len(masks)} mask files")


def test_criterion_10_throughput(criterion):
    width, height = 854, 480
    seq = generate_synthetic(SynthConfig(name="fps", width=width, height=height, frames=30, objects=2,
                                         min_size=60, max_size=120, seed=1))
    det = ScriptedDetector(seq, DetectorScript(seed=1, jitter=0.05, distractors=8, scene_distractors=False, cap=10))
    props = [det.detect_full_frame(f, t)[:10] for t, f in enumerate(seq.frames)]
    cfg = TrackerConfig()
    tracks = Tracker(det, ConstantPolicy(Action.UPDATE), cfg).init(seq.frames[0], seq.first_boxes)
    assert len(tracks) == 2 and all(len(p) == 10 for p in props[1:])
    frames = 0
    start = time.perf_counter()
    for _ in range(5):
        for t in range(1, len(seq)):
            search_region(tracks, width, height, cfg)
            for track in tracks:
                select_best(props[t], [score_iou(track.template, p, cfg.weights) for p in props[t]])
            frames += 1
    fps = frames / (time.perf_counter() - start)
    criterion(10, fps >= 100.0, f"{fps:.0f} frames/s at {width}x{height}, 10 proposals, 2 objects")
