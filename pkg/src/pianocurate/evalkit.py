"""Segmentation and per-file classification metrics.

Percentages throughout. Corpus figures are pooled: match and duration
counts are summed over files before dividing, never averaged per file.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AlignmentError
from .segmenter import Segment, SegmentClass


@dataclass(frozen=True)
class MatchTolerance:
    onset_tol_s: float = 2.0
    offset_tol_s: float = 5.0

    def __post_init__(self):
        if self.onset_tol_s < 0 or self.offset_tol_s < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {"P": self.precision, "R": self.recall, "F1": self.f1}


@dataclass(frozen=True)
class MatchCounts:
    matches: int
    n_pred: int
    n_ref: int

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.matches + other.matches, self.n_pred + other.n_pred, self.n_ref + other.n_ref)


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p > 0 and r > 0 else 0.0


def prf_from_counts(c: MatchCounts) -> PRF:
    """Empty-set convention: precision is 100 with no predictions, recall 100 with no references."""
    p = 100.0 * c.matches / c.n_pred if c.n_pred else 100.0
    r = 100.0 * c.matches / c.n_ref if c.n_ref else 100.0
    return PRF(p, r, _f1(p, r))


def _eligible(p: Segment, r: Segment, tol: MatchTolerance) -> bool:
    return abs(p.start_s - r.start_s) <= tol.onset_tol_s and abs(p.end_s - r.end_s) <= tol.offset_tol_s


def match_segments(
    pred: Sequence[Segment],
    ref: Sequence[Segment],
    tol: MatchTolerance = MatchTolerance(),
    mode: str = "greedy",
) -> list[tuple[int, int]]:
    """One-to-one matching of predictions to references as (ref_idx, pred_idx) pairs.

    ``greedy`` walks references by start time and takes the unmatched
    eligible prediction with the smallest onset error (then offset error,
    then index). ``optimal`` maximizes the number of matches.
    """
    if mode == "optimal":
        return _match_optimal(pred, ref, tol)
    if mode != "greedy":
        raise ValueError(f"unknown matching mode {mode!r}")
    taken: set[int] = set()
    pairs = []
    for ri in sorted(range(len(ref)), key=lambda i: (ref[i].start_s, i)):
        r = ref[ri]
        best = None
        for pi, p in enumerate(pred):
            if pi in taken or not _eligible(p, r, tol):
                continue
            key = (abs(p.start_s - r.start_s), abs(p.end_s - r.end_s), pi)
            if best is None or key < best[0]:
                best = (key, pi)
        if best is not None:
            taken.add(best[1])
            pairs.append((ri, best[1]))
    return pairs


def _match_optimal(pred, ref, tol) -> list[tuple[int, int]]:
    if not pred or not ref:
        return []
    eligible = np.array([[_eligible(p, r, tol) for p in pred] for r in ref])
    # maximize matches first, onset error second
    onset = np.array([[abs(p.start_s - r.start_s) for p in pred] for r in ref])
    cost = np.where(eligible, -1.0 + onset / (1.0 + onset.max()) / (len(ref) + 1), 0.0)
    rows, cols = linear_sum_assignment(cost)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols) if eligible[r, c])


def match_counts(pred, ref, tol: MatchTolerance = MatchTolerance(), mode: str = "greedy") -> MatchCounts:
    return MatchCounts(len(match_segments(pred, ref, tol, mode)), len(pred), len(ref))


def segmentation_prf(pred, ref, tol: MatchTolerance = MatchTolerance(), mode: str = "greedy") -> PRF:
    return prf_from_counts(match_counts(pred, ref, tol, mode))


def pooled_prf(counts: Iterable[MatchCounts]) -> PRF:
    return prf_from_counts(sum(counts, MatchCounts(0, 0, 0)))


def _intervals(segments: Iterable[Segment], kind: SegmentClass = SegmentClass.PIANO) -> list[tuple[float, float]]:
    spans = sorted((s.start_s, s.end_s) for s in segments if s.kind is kind)
    merged: list[list[float]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def _complement(spans: list[tuple[float, float]], total: float) -> list[tuple[float, float]]:
    out = []
    cursor = 0.0
    for a, b in spans:
        if a > cursor:
            out.append((cursor, min(a, total)))
        cursor = max(cursor, b)
    if cursor < total:
        out.append((cursor, total))
    return [(a, b) for a, b in out if b > a]


def _length(spans) -> float:
    return float(sum(b - a for a, b in spans))


def _intersection(x, y) -> float:
    i = j = 0
    total = 0.0
    while i < len(x) and j < len(y):
        lo = max(x[i][0], y[j][0])
        hi = min(x[i][1], y[j][1])
        if hi > lo:
            total += hi - lo
        if x[i][1] < y[j][1]:
            i += 1
        else:
            j += 1
    return total


@dataclass(frozen=True)
class OverlapCounts:
    """Seconds of correctly identified audio and of reference audio, per class."""

    piano_hit: float
    piano_ref: float
    nonpiano_hit: float
    nonpiano_ref: float

    def __add__(self, other: "OverlapCounts") -> "OverlapCounts":
        return OverlapCounts(
            self.piano_hit + other.piano_hit,
            self.piano_ref + other.piano_ref,
            self.nonpiano_hit + other.nonpiano_hit,
            self.nonpiano_ref + other.nonpiano_ref,
        )

    def ratios(self) -> tuple[float | None, float | None]:
        piano = 100.0 * self.piano_hit / self.piano_ref if self.piano_ref > 0 else None
        nonpiano = 100.0 * self.nonpiano_hit / self.nonpiano_ref if self.nonpiano_ref > 0 else None
        return piano, nonpiano


def overlap_counts(pred: Iterable[Segment], ref: Iterable[Segment], audio_len_s: float) -> OverlapCounts:
    """Only piano segments are read from either side; non-piano is their complement in ``[0, audio_len_s)``."""
    pred_piano = _intervals(pred)
    ref_piano = _intervals(ref)
    pred_non = _complement(pred_piano, audio_len_s)
    ref_non = _complement(ref_piano, audio_len_s)
    return OverlapCounts(
        _intersection(pred_piano, ref_piano),
        _length(ref_piano),
        _intersection(pred_non, ref_non),
        _length(ref_non),
    )


def overlap_ratios(pred, ref, audio_len_s: float) -> tuple[float | None, float | None]:
    """(piano_overlap, nonpiano_overlap) in percent; None when the reference has none of that class."""
    return overlap_counts(pred, ref, audio_len_s).ratios()


@dataclass(frozen=True)
class ClassificationResult:
    precision: float
    recall: float
    f1: float
    false_positives: int

    def as_dict(self) -> dict:
        return {"P": self.precision, "R": self.recall, "F1": self.f1, "FP": self.false_positives}


def _as_bool(label) -> bool:
    if isinstance(label, str):
        if label not in ("positive", "negative"):
            raise ValueError(f"unknown label {label!r}")
        return label == "positive"
    return bool(label)


def classification_prf(pred_labels: Sequence, ref_labels: Sequence) -> ClassificationResult:
    if len(pred_labels) != len(ref_labels):
        raise AlignmentError(f"{len(pred_labels)} predictions for {len(ref_labels)} references")
    pred = [_as_bool(x) for x in pred_labels]
    ref = [_as_bool(x) for x in ref_labels]
    tp = sum(p and r for p, r in zip(pred, ref))
    fp = sum(p and not r for p, r in zip(pred, ref))
    fn = sum(r and not p for p, r in zip(pred, ref))
    precision = 100.0 * tp / (tp + fp) if tp + fp else 100.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 100.0
    return ClassificationResult(precision, recall, _f1(precision, recall), fp)


def postprocess_reference(
    segments: Iterable[Segment],
    audio_len_s: float,
    min_gap_s: float = 8.0,
    min_piano_s: float = 45.0,
) -> list[Segment]:
    """Bring hand-labeled piano segments in line with the inference rules.

    Non-piano gaps shorter than ``min_gap_s`` (including at either end of
    the recording) are absorbed into the neighbouring piano audio; piano
    segments not longer than ``min_piano_s`` are then dropped.
    """
    spans = _intervals(segments)
    if not spans:
        return []
    if spans[0][0] < min_gap_s:
        spans[0] = (0.0, spans[0][1])
    if audio_len_s - spans[-1][1] < min_gap_s:
        spans[-1] = (spans[-1][0], audio_len_s)
    merged = [spans[0]]
    for a, b in spans[1:]:
        if a - merged[-1][1] < min_gap_s:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return [Segment(a, b) for a, b in merged if b - a > min_piano_s]
