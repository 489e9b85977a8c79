"""Decoding, tolerance matching (vs an exhaustive oracle), PR metrics."""

import numpy as np
import pytest

from sbdnas.annotations import ShotAnnotation, TransitionSpan, derive_transitions
from sbdnas.metrics import (
    Detection,
    EvalReport,
    match_boundaries,
    precision_at_recall,
    predictions_to_boundaries,
    score,
    score_corpus,
)


def max_bipartite_tp(detected, transitions):
    """Exhaustive optimal one-to-one assignment via augmenting paths."""
    from sbdnas.metrics import _window
    windows = [_window(s) for s in transitions]
    adj = [[j for j, (lo, hi) in enumerate(windows) if lo <= d.frame <= hi]
           for d in detected]
    match_of_t = [-1] * len(transitions)

    def try_assign(i, visited):
        for j in adj[i]:
            if j in visited:
                continue
            visited.add(j)
            if match_of_t[j] < 0 or try_assign(match_of_t[j], visited):
                match_of_t[j] = i
                return True
        return False

    return sum(try_assign(i, set()) for i in range(len(detected)))


def random_instance(rng):
    """A random annotation plus detections scattered near/far from truth."""
    n_shots = int(rng.integers(2, 31))
    shots = []
    cursor = 0
    for _ in range(n_shots):
        begin = cursor + int(rng.integers(0, 10))
        end = begin + int(rng.integers(0, 40))
        shots.append((begin, end))
        cursor = end + 1
    ann = ShotAnnotation(tuple(shots))
    spans = derive_transitions(ann)
    frames = set()
    for span in spans:
        if rng.random() < 0.8:  # a detection near this transition
            frames.add(max(0, span.lo + int(rng.integers(-4, 5))))
    for _ in range(int(rng.integers(0, 6))):  # noise detections
        frames.add(int(rng.integers(0, shots[-1][1] + 5)))
    detected = [Detection(f, 0.9) for f in sorted(frames)]
    return detected, spans, ann


class TestDecode:
    def test_all_zero(self):
        assert predictions_to_boundaries(np.zeros(10)) == []

    def test_single_frame(self):
        dets = predictions_to_boundaries(np.array([0, 0, 0.9, 0, 0]))
        assert dets == [Detection(2, 0.9)]

    def test_plateau_earliest_argmax(self):
        probs = np.zeros(10)
        probs[4:7] = 0.8
        dets = predictions_to_boundaries(probs)
        assert dets == [Detection(4, 0.8)]

    def test_run_collapses_to_argmax(self):
        probs = np.array([0.0, 0.6, 0.9, 0.7, 0.0, 0.55, 0.0])
        dets = predictions_to_boundaries(probs)
        assert dets == [Detection(2, 0.9), Detection(5, 0.55)]

    def test_threshold_domain(self):
        with pytest.raises(ValueError):
            predictions_to_boundaries(np.zeros(3), threshold=0.0)

    def test_raising_threshold_never_raises_recall(self):
        # holds for unimodal per-transition bumps (realistic detector
        # output); iid-random probs can split a run when the threshold
        # rises, which is an artifact of run-collapse decoding, not of
        # the matching rule
        rng = np.random.default_rng(0)
        for _ in range(50):
            probs = rng.random(60) * 0.15
            for center in (20, 40, 50):
                peak = 0.3 + 0.7 * rng.random()
                width = int(rng.integers(1, 4))
                for d in range(-width, width + 1):
                    probs[center + d] = max(probs[center + d],
                                            peak * (1 - abs(d) / (width + 1)))
            ann = ShotAnnotation(((0, 20), (21, 40), (47, 59)))
            recalls = []
            for th in (0.2, 0.4, 0.6, 0.8):
                dets = predictions_to_boundaries(probs, th)
                recalls.append(score(dets, ann).recall)
            assert all(a >= b for a, b in zip(recalls, recalls[1:]))

    def test_confidence_filter_recall_monotone(self):
        # filtering by confidence (the PR-sweep semantics) is a subset
        # operation, so recall is monotone for any prediction vector
        rng = np.random.default_rng(42)
        for _ in range(50):
            probs = rng.random(60)
            ann = ShotAnnotation(((0, 20), (21, 40), (47, 59)))
            dets = predictions_to_boundaries(probs, 0.1)
            recalls = []
            for th in (0.1, 0.3, 0.5, 0.7, 0.9):
                kept = [d for d in dets if d.confidence >= th]
                recalls.append(score(kept, ann).recall)
            assert all(a >= b for a, b in zip(recalls, recalls[1:]))


class TestMatching:
    def test_hard_cut_within_two_frames(self):
        spans = [TransitionSpan("hard", 72, 72)]
        tp, fp, fn, _ = match_boundaries([Detection(74, 0.9)], spans)
        assert (tp, fp, fn) == (1, 0, 0)

    def test_hard_cut_three_frames_misses(self):
        spans = [TransitionSpan("hard", 72, 72)]
        tp, fp, fn, _ = match_boundaries([Detection(75, 0.9)], spans)
        assert (tp, fp, fn) == (0, 1, 1)

    def test_gradual_inside_span(self):
        spans = [TransitionSpan("gradual", 102, 108)]
        tp, fp, fn, _ = match_boundaries([Detection(105, 0.9)], spans)
        assert (tp, fp, fn) == (1, 0, 0)

    def test_gradual_leading_edge_tolerance(self):
        spans = [TransitionSpan("gradual", 102, 108)]
        tp, _, _, _ = match_boundaries([Detection(100, 0.9)], spans)
        assert tp == 1

    def test_gradual_outside_is_fp_and_fn(self):
        spans = [TransitionSpan("gradual", 102, 108)]
        tp, fp, fn, _ = match_boundaries([Detection(112, 0.9)], spans)
        assert (tp, fp, fn) == (0, 1, 1)

    def test_one_to_one(self):
        spans = [TransitionSpan("hard", 10, 10)]
        dets = [Detection(9, 0.9), Detection(11, 0.8)]
        tp, fp, fn, m = match_boundaries(dets, spans)
        assert (tp, fp, fn) == (1, 1, 0)
        assert len(m) == 1

    def test_counts_bookkeeping(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            detected, spans, _ = random_instance(rng)
            tp, fp, fn, m = match_boundaries(detected, spans)
            assert tp + fp == len(detected)
            assert tp + fn == len(spans)
            assert len({i for i, _ in m}) == len(m)  # injective both ways
            assert len({j for _, j in m}) == len(m)

    def test_matches_exhaustive_oracle_1000_instances(self):
        rng = np.random.default_rng(2)
        disagreements = 0
        for _ in range(1000):
            detected, spans, _ = random_instance(rng)
            tp, _, _, _ = match_boundaries(detected, spans)
            assert tp == max_bipartite_tp(detected, spans)
        assert disagreements == 0


class TestScore:
    def test_perfect_detection(self):
        ann = ShotAnnotation(((0, 20), (21, 50), (57, 80)))
        spans = derive_transitions(ann)
        dets = [Detection(s.lo, 1.0) for s in spans]
        rep = score(dets, ann)
        assert rep.precision == rep.recall == rep.f1 == 1.0

    def test_empty_detections(self):
        ann = ShotAnnotation(((0, 20), (21, 50)))
        rep = score([], ann)
        assert rep.recall == 0.0 and rep.precision == 0.0 and rep.f1 == 0.0

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            detected, spans, ann = random_instance(rng)
            rep = score(detected, ann)
            shift = 1000
            ann2 = ShotAnnotation(tuple((b + shift, e + shift) for b, e in ann.shots))
            dets2 = [Detection(d.frame + shift, d.confidence) for d in detected]
            rep2 = score(dets2, ann2)
            assert (rep.tp, rep.fp, rep.fn) == (rep2.tp, rep2.fp, rep2.fn)


class TestPrecisionAtRecall:
    def test_all_correct_full_curve(self):
        ann = ShotAnnotation(((0, 10), (11, 30), (36, 50)))
        spans = derive_transitions(ann)
        dets = [Detection(spans[0].lo, 0.9), Detection(spans[1].lo, 0.6)]
        res = precision_at_recall([dets], [ann], target_recall=0.5)
        assert res.precision == 1.0
        assert res.reached_target

    def test_degenerate_target_zero(self):
        ann = ShotAnnotation(((0, 10), (11, 30)))
        dets = [Detection(10, 0.7)]
        res = precision_at_recall([dets], [ann], target_recall=0.0)
        assert res.threshold > 0.7  # above every confidence
        assert res.precision == 0.0  # zero-division convention
        assert res.reached_target

    def test_staircase_curve_hand_computed(self):
        # 10 detections, 6 correct, confidences interleaved so precision
        # and recall trade off along the threshold sweep
        shots = []
        cursor = 0
        for _ in range(7):
            shots.append((cursor, cursor + 50))
            cursor += 51 + 20  # gradual gaps of 20
        ann = ShotAnnotation(tuple(shots))
        spans = derive_transitions(ann)
        correct_confs = [0.95, 0.85, 0.65, 0.55, 0.35, 0.15]
        false_confs = [0.75, 0.45, 0.25, 0.05]
        dets = [Detection(spans[k].lo + 2, c) for k, c in enumerate(correct_confs)]
        miss_base = ann.shots[-1][1] + 100
        dets += [Detection(miss_base + 10 * k, c) for k, c in enumerate(false_confs)]
        dets.sort(key=lambda d: d.frame)

        # hand-computed: recall first reaches 4/6 at threshold 0.55 where
        # the kept set is 4 correct + 1 false
        res = precision_at_recall([dets], [ann], target_recall=4 / 6)
        assert res.threshold == pytest.approx(0.55)
        assert res.precision == pytest.approx(4 / 5)
        # recall 1.0 first happens at threshold 0.15: 6 correct + 3 false
        res2 = precision_at_recall([dets], [ann], target_recall=0.999)
        assert res2.threshold == pytest.approx(0.15)
        assert res2.recall == 1.0
        assert res2.precision == pytest.approx(6 / 9)

    def test_unreachable_target_flagged(self):
        ann = ShotAnnotation(((0, 10), (11, 30)))
        dets = [Detection(500, 0.9)]  # never matches
        res = precision_at_recall([dets], [ann], target_recall=0.5)
        assert not res.reached_target
        assert res.threshold == pytest.approx(0.9)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            precision_at_recall([], [], 0.5)


class TestEvalReport:
    def test_formula_conventions(self):
        rep = EvalReport(0, 0, 0)
        assert rep.precision == 0.0 and rep.recall == 0.0 and rep.f1 == 0.0
        rep2 = EvalReport(3, 1, 2)
        assert rep2.precision == pytest.approx(0.75)
        assert rep2.recall == pytest.approx(0.6)
        assert rep2.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)

    def test_json_round_trip(self):
        import json
        rep = EvalReport(3, 1, 2)
        d = json.loads(json.dumps(rep.to_json_dict()))
        assert d["tp"] == 3 and 0 < d["f1"] < 1
