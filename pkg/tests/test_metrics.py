import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tmtrack.geometry import BitMask, Box
from tmtrack.metrics import (REPORT_FIELDS, boundary, contour_accuracy, default_tolerance, evaluate_labels,
                             format_report, longterm_f_score, region_similarity)


def naive_contour(p, g, tol):
    def edge(m):
        h, w = m.shape
        out = set()
        for y in range(h):
            for x in range(w):
                if m[y, x] and any(not (0 <= y + dy < h and 0 <= x + dx < w) or not m[y + dy, x + dx]
                                   for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1))):
                    out.add((y, x))
        return out

    bp, bg = edge(p), edge(g)
    if not bp and not bg:
        return 1.0
    if not bp or not bg:
        return 0.0

    def frac(a, b):
        return sum(min(math.hypot(y - v, x - u) for v, u in b) <= tol for y, x in a) / len(a)

    prec, rec = frac(bp, bg), frac(bg, bp)
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0, 1, 1.5, 2]))
def test_contour_matches_naive_oracle_8x8(seed, tol):
    rng = np.random.default_rng(seed)
    p, g = rng.random((8, 8)) < 0.5, rng.random((8, 8)) < 0.5
    got = contour_accuracy(BitMask.from_array(p), BitMask.from_array(g), tol)
    assert got == pytest.approx(naive_contour(p, g, tol), abs=1e-12)


def test_contour_identical_and_far_disjoint():
    a = BitMask.from_box(Box(2, 2, 10, 10), 40, 40)
    b = BitMask.from_box(Box(25, 25, 35, 35), 40, 40)
    assert contour_accuracy(a, a, 1) == 1.0
    assert contour_accuracy(a, b, 1) == 0.0
    empty = BitMask.empty(40, 40)
    assert contour_accuracy(empty, empty) == 1.0
    assert contour_accuracy(a, empty) == 0.0


def test_boundary_of_filled_square_is_ring():
    m = np.zeros((6, 6), bool)
    m[1:5, 1:5] = True
    assert boundary(m).sum() == 12


def test_default_tolerance():
    assert default_tolerance(854, 480) == math.ceil(0.008 * math.hypot(854, 480))
    assert default_tolerance(3, 3) == 1


def brute_force_ltf(conf, pp, gp, ov):
    best = 0.0
    for tau in sorted(set(conf) | {0.0, 1.0, 1.5}):
        rep = [p and c >= tau for c, p in zip(conf, pp)]
        n = sum(rep)
        q = sum(o for o, r, p, g in zip(ov, rep, pp, gp) if r and g)
        prec = q / n if n else 0.0
        rec = q / sum(gp) if sum(gp) else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        best = max(best, f)
    return best


@pytest.mark.parametrize("seed", range(20))
def test_longterm_f_matches_exhaustive_sweep(seed):
    rng = np.random.default_rng(seed)
    conf = [round(float(c), 2) for c in rng.random(5)]
    pp = [bool(v) for v in rng.random(5) < 0.8]
    gp = [bool(v) for v in rng.random(5) < 0.7]
    ov = [float(v) if p and g else 0.0 for v, p, g in zip(rng.random(5), pp, gp)]
    f, tau = longterm_f_score(conf, pp, gp, ov)
    assert f == pytest.approx(brute_force_ltf(conf, pp, gp, ov), abs=1e-12)
    if any(pp):
        assert tau in conf


def test_longterm_f_edge_cases():
    assert longterm_f_score([0.5], [False], [True], [0.0]) == (0.0, None)
    f, tau = longterm_f_score([0.9, 0.1], [True, True], [True, False], [1.0, 0.0])
    assert (f, tau) == (1.0, 0.9)
    with pytest.raises(ValueError):
        longterm_f_score([0.1], [True, False], [True], [1.0])


def test_evaluate_and_report():
    gt = [np.zeros((8, 8), np.uint8) for _ in range(3)]
    for g in gt:
        g[1:4, 1:4] = 1
        g[5:7, 5:7] = 2
    same = evaluate_labels("a", gt, gt, [1, 2])
    assert same.mean("j_mean") == 1.0 and same.mean("f_mean") == 1.0
    blank = evaluate_labels("b", [np.zeros_like(g) for g in gt], gt, [1, 2])
    assert blank.mean("j_mean") == 0.0
    report = format_report([same, blank])
    lines = report.splitlines()
    assert lines[0].split("\t") == list(REPORT_FIELDS)
    assert lines[1].startswith("a\t2\t3\t1.000000") and lines[-1].startswith("ALL\t4\t6\t0.500000")


def test_region_similarity_is_mask_iou():
    a = BitMask.from_box(Box(0, 0, 4, 4), 8, 8)
    b = BitMask.from_box(Box(2, 0, 6, 4), 8, 8)
    assert region_similarity(a, b) == pytest.approx(1 / 3)
