"""Turn per-window classifier scores into non-piano regions and retained piano segments.

Window ``t`` covers seconds ``[t, t + 5)``. A region ``[n, m + 5)`` with
``m >= n + d`` is non-piano iff every window starting in ``n..m`` scores
below ``lam``. What remains between non-piano regions is a piano candidate;
candidates longer than ``min_piano_s`` whose mean window score is at least
``min_avg`` are kept.

The core works on a boolean mask over one-second cells so that it runs in
linear time and vectorizes over a batch of equal-length series (time on
axis 0).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSeries

WINDOW_S = 5
STRIDE_S = 1

# Mean scores are compared against min_avg with this slack so that a run of
# windows scored exactly at the threshold is kept despite rounding.
_AVG_EPS = 1e-9


class SegmentClass(str, enum.Enum):
    PIANO = "piano"
    NON_PIANO = "non_piano"


@dataclass(frozen=True)
class Segment:
    """Half-open interval ``[start_s, end_s)`` in audio time."""

    start_s: float
    end_s: float
    kind: SegmentClass = SegmentClass.PIANO
    avg_score: float | None = None

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def to_json(self, file_id: str | None = None) -> dict:
        out = {} if file_id is None else {"id": file_id}
        out.update(start_s=self.start_s, end_s=self.end_s, avg_score=self.avg_score)
        if self.kind is not SegmentClass.PIANO:
            out["class"] = self.kind.value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Segment":
        return cls(
            float(obj["start_s"]),
            float(obj["end_s"]),
            SegmentClass(obj.get("class", "piano")),
            None if obj.get("avg_score") is None else float(obj["avg_score"]),
        )


@dataclass(frozen=True)
class SegmenterConfig:
    lam: float = 0.5
    d: int = 3
    min_piano_s: float = 45.0
    min_avg: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.d < 0 or int(self.d) != self.d:
            raise ValueError(f"d must be a non-negative integer, got {self.d}")


def expected_windows(audio_len_s: float) -> int:
    return max(0, math.floor(audio_len_s) - (WINDOW_S - 1))


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    scores: np.ndarray
    audio_len_s: float
    window_s: int = WINDOW_S
    stride_s: int = STRIDE_S

    def __post_init__(self):
        if self.window_s != WINDOW_S or self.stride_s != STRIDE_S:
            raise InvalidSeries(
                f"only {WINDOW_S} s windows at {STRIDE_S} s stride are supported, "
                f"got {self.window_s}/{self.stride_s}"
            )
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise InvalidSeries("scores must be one-dimensional")
        if self.audio_len_s < 0:
            raise InvalidSeries(f"negative audio length {self.audio_len_s}")
        want = expected_windows(self.audio_len_s)
        if scores.shape[0] != want:
            raise InvalidSeries(
                f"{self.audio_len_s} s of audio implies {want} windows, got {scores.shape[0]}"
            )
        if scores.size and not (np.all(scores >= 0.0) and np.all(scores <= 1.0)):
            raise InvalidSeries("window scores must lie in [0, 1]")
        scores.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "audio_len_s", float(self.audio_len_s))

    def __len__(self) -> int:
        return self.scores.shape[0]

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreSeries":
        return cls(
            np.asarray(obj["scores"], dtype=np.float64),
            float(obj["audio_len_s"]),
            int(obj.get("window_s", WINDOW_S)),
            int(obj.get("stride_s", STRIDE_S)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ScoreSeries":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self, file_id: str) -> dict:
        return {
            "id": file_id,
            "window_s": self.window_s,
            "stride_s": self.stride_s,
            "audio_len_s": self.audio_len_s,
            "scores": self.scores.tolist(),
        }


def _sliding_and(mask: np.ndarray, width: int) -> np.ndarray:
    """out[i] = AND(mask[i : i + width]) along axis 0, by doubling."""
    out = mask
    span = 1
    while 2 * span <= width:
        out = out[:-span] & out[span:]
        span *= 2
    rest = width - span
    if rest:
        out = out[: out.shape[0] - rest] & out[rest:]
    return out


def _sliding_or(mask: np.ndarray, width: int) -> np.ndarray:
    out = mask
    span = 1
    while 2 * span <= width:
        out = out[:-span] | out[span:]
        span *= 2
    rest = width - span
    if rest:
        out = out[: out.shape[0] - rest] | out[rest:]
    return out


def below_threshold(scores: np.ndarray, lam: float) -> np.ndarray:
    return np.asarray(scores) < lam


def nonpiano_cells(below: np.ndarray, d: int) -> np.ndarray:
    """Mark one-second cells covered by a non-piano region.

    ``below`` has windows on axis 0 (any trailing batch shape). The result
    has ``len(below) + 4`` cells on axis 0, cell ``s`` covering ``[s, s+1)``;
    empty when there are no windows.
    """
    n = below.shape[0]
    rest = below.shape[1:]
    if n == 0:
        return np.zeros((0,) + rest, dtype=bool)
    run = d + 1
    if n < run:
        return np.zeros((n + WINDOW_S - 1,) + rest, dtype=bool)
    # block[k]: windows k..k+d are all low, i.e. region [k, k+d+5) qualifies
    block = _sliding_and(below, run)
    reach = d + WINDOW_S
    pad = np.zeros((reach - 1,) + rest, dtype=bool)
    return _sliding_or(np.concatenate((pad, block, pad)), reach)


def nonpiano_mask(scores: np.ndarray, lam: float, d: int) -> np.ndarray:
    return nonpiano_cells(below_threshold(scores, lam), d)


def _runs(cells: np.ndarray, value: bool) -> tuple[np.ndarray, np.ndarray]:
    m = (cells == value).view(np.int8)
    edges = np.diff(np.concatenate(([0], m, [0])))
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def _mean_inside(scores: np.ndarray, start: float, end: float) -> float | None:
    """Mean score of windows lying wholly inside ``[start, end)``."""
    lo = max(0, math.ceil(start))
    hi = min(scores.shape[0] - 1, math.floor(end) - WINDOW_S)
    if hi < lo:
        return None
    return float(scores[lo : hi + 1].mean())


def _cells(series: ScoreSeries, cfg: SegmenterConfig) -> np.ndarray:
    cells = nonpiano_mask(series.scores, cfg.lam, cfg.d)
    n_cells = max(cells.shape[0], math.ceil(series.audio_len_s))
    if cells.shape[0] < n_cells:
        # a sub-window tail joins whichever segment precedes it
        fill = bool(cells[-1]) if cells.shape[0] else False
        cells = np.concatenate((cells, np.full(n_cells - cells.shape[0], fill)))
    return cells


def _pieces(series: ScoreSeries, cfg: SegmenterConfig, kind: SegmentClass) -> list[Segment]:
    if series.audio_len_s <= 0:
        return []
    starts, ends = _runs(_cells(series, cfg), kind is SegmentClass.NON_PIANO)
    total = series.audio_len_s
    return [
        Segment(float(a), min(float(b), total), kind, _mean_inside(series.scores, a, min(b, total)))
        for a, b in zip(starts.tolist(), ends.tolist())
    ]


def timeline(series: ScoreSeries, cfg: SegmenterConfig = SegmenterConfig()) -> list[Segment]:
    """Alternating non-piano regions and unfiltered piano candidates covering the recording."""
    pieces = _pieces(series, cfg, SegmentClass.NON_PIANO) + _pieces(series, cfg, SegmentClass.PIANO)
    return sorted(pieces, key=lambda s: s.start_s)


def find_nonpiano_regions(series: ScoreSeries, cfg: SegmenterConfig = SegmenterConfig()) -> list[Segment]:
    """Maximal non-piano regions; qualifying regions that overlap are merged."""
    return _pieces(series, cfg, SegmentClass.NON_PIANO)


def piano_candidates(series: ScoreSeries, cfg: SegmenterConfig = SegmenterConfig()) -> list[Segment]:
    return _pieces(series, cfg, SegmentClass.PIANO)


def segment(series: ScoreSeries, cfg: SegmenterConfig = SegmenterConfig()) -> list[Segment]:
    """Retained piano segments: longer than ``min_piano_s`` and averaging at least ``min_avg``."""
    total = series.audio_len_s
    if total <= 0:
        return []
    starts, ends = _runs(_cells(series, cfg), False)
    ends = np.minimum(ends.astype(np.float64), total)
    long_enough = (ends - starts) > cfg.min_piano_s
    kept = []
    for a, b in zip(starts[long_enough].tolist(), ends[long_enough].tolist()):
        avg = _mean_inside(series.scores, a, b)
        if avg is None or avg < cfg.min_avg - _AVG_EPS:
            continue
        kept.append(Segment(float(a), b, SegmentClass.PIANO, avg))
    return kept


@dataclass(frozen=True)
class FileClass:
    positive: bool
    best_avg: float | None

    @property
    def label(self) -> str:
        return "positive" if self.positive else "negative"


def classify_file(segments: list[Segment], threshold: float) -> FileClass:
    """Positive iff some piano segment averages at least ``threshold``."""
    scores = [s.avg_score for s in segments if s.kind is SegmentClass.PIANO and s.avg_score is not None]
    best = max(scores) if scores else None
    return FileClass(best is not None and best >= threshold - _AVG_EPS, best)
