"""Boundary decoding, tolerance-based matching and the F1/precision suite.

A detection is an (end_frame, confidence) pair.  A detection within two
frames of an annotated hard cut is a true positive; for a gradual
transition, any detection inside the span (or within two frames of its
leading edge) counts.  Matching is one-to-one: detections are processed
left to right and each takes the compatible unmatched transition whose
tolerance window ends earliest, which is optimal for point-vs-interval
matching, so greedy tp counts equal the exhaustive optimum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import ShotAnnotation, TransitionSpan, derive_transitions

logger = logging.getLogger(__name__)

TOLERANCE = 2  # frames


@dataclass(frozen=True)
class Detection:
    frame: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0

    def to_json_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def predictions_to_boundaries(probs: np.ndarray, threshold: float = 0.5
                              ) -> list[Detection]:
    """Collapse contiguous runs of frames with prob >= threshold into one
    detection at the run's argmax frame (earliest on ties), confidence =
    the run maximum."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    probs = np.asarray(probs, dtype=np.float64).ravel()
    detections = []
    t = 0
    n = len(probs)
    while t < n:
        if probs[t] >= threshold:
            start = t
            while t < n and probs[t] >= threshold:
                t += 1
            run = probs[start:t]
            best = int(np.argmax(run))  # argmax returns the earliest maximum
            detections.append(Detection(start + best, float(np.clip(run[best], 0, 1))))
        else:
            t += 1
    return detections


def _window(span: TransitionSpan) -> tuple[int, int]:
    """Inclusive frame window a detection may fall in to match `span`."""
    if span.kind == "hard":
        return span.lo - TOLERANCE, span.hi + TOLERANCE
    return span.lo - TOLERANCE, max(span.hi, span.lo + TOLERANCE)


def match_boundaries(detected: Sequence[Detection],
                     transitions: Sequence[TransitionSpan]
                     ) -> tuple[int, int, int, list[tuple[int, int]]]:
    """One-to-one greedy matching; returns (tp, fp, fn, matching) where
    matching holds (detection_index, transition_index) pairs."""
    frames = [d.frame for d in detected]
    if sorted(frames) != frames or len(set(frames)) != len(frames):
        raise ValueError("detections must be strictly increasing in frame")
    windows = [_window(s) for s in transitions]
    for (l1, h1), (l2, h2) in zip(windows, windows[1:]):
        if h1 >= l2:
            logger.info("tolerance windows overlap: [%d,%d] and [%d,%d]; "
                        "one-to-one matching applies", l1, h1, l2, h2)

    taken = [False] * len(transitions)
    matching: list[tuple[int, int]] = []
    for di, d in enumerate(detected):
        best_j = -1
        for j, (lo, hi) in enumerate(windows):
            if not taken[j] and lo <= d.frame <= hi:
                if best_j < 0 or windows[j][1] < windows[best_j][1]:
                    best_j = j
        if best_j >= 0:
            taken[best_j] = True
            matching.append((di, best_j))
    tp = len(matching)
    fp = len(detected) - tp
    fn = len(transitions) - tp
    return tp, fp, fn, matching


def score(detected: Sequence[Detection], annotation: ShotAnnotation) -> EvalReport:
    """Score detections against an annotation's derived transitions."""
    transitions = derive_transitions(annotation)
    tp, fp, fn, _ = match_boundaries(detected, transitions)
    return EvalReport(tp, fp, fn)


def score_corpus(detections_per_video: Sequence[Sequence[Detection]],
                 annotations: Sequence[ShotAnnotation]) -> EvalReport:
    """Aggregate tp/fp/fn over a corpus (deterministic reduction)."""
    if len(detections_per_video) != len(annotations):
        raise ValueError("corpus size mismatch between detections and annotations")
    total = EvalReport(0, 0, 0)
    for dets, ann in zip(detections_per_video, annotations):
        r = score(dets, ann)
        total.tp += r.tp
        total.fp += r.fp
        total.fn += r.fn
    return total


@dataclass
class PrecisionAtRecall:
    precision: float
    recall: float
    threshold: float
    reached_target: bool

    def to_json_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "threshold": self.threshold, "reached_target": self.reached_target}


def precision_at_recall(detections_per_video: Sequence[Sequence[Detection]],
                        annotations: Sequence[ShotAnnotation],
                        target_recall: float) -> PrecisionAtRecall:
    """Precision at the highest confidence threshold whose corpus recall
    reaches the target.

    Candidate thresholds are the distinct detection confidences plus a
    sentinel above them all; if even the lowest threshold misses the
    target, the lowest threshold's numbers are returned flagged.
    """
    if not annotations:
        raise ValueError("precision_at_recall needs a non-empty corpus")
    confs = sorted({d.confidence for dets in detections_per_video for d in dets})
    sentinel = (confs[-1] + 1.0) if confs else 1.0
    thresholds = [sentinel] + list(reversed(confs))  # descending

    best = None
    for th in thresholds:
        kept = [[d for d in dets if d.confidence >= th] for dets in detections_per_video]
        rep = score_corpus(kept, annotations)
        result = PrecisionAtRecall(rep.precision, rep.recall, th, rep.recall >= target_recall)
        if result.reached_target:
            return result
        best = result
    best.reached_target = False
    return best
