"""Crawl frontier: LM-scored videos, expanded through a related-videos provider in score order.

One cycle scores every unscored video, then expands up to ``budget`` of the
best-scored unexpanded ones (ties first-in first-out). Every state change is
an event; the event list (optionally mirrored to an append-only JSONL file)
replays to an identical frontier.
"""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import prompts
from .errors import MalformedResponse, NoSeeds, OutOfRange
from .jsonscan import iter_json_objects
from .ports import Backoff, LanguageModel, PromptRequest, RelatedVideos, VideoMeta

log = logging.getLogger(__name__)

MIN_SCORE, MAX_SCORE = 0, 5


class VideoState(str, enum.Enum):
    UNSCORED = "unscored"
    SCORED = "scored"
    EXPANDED = "expanded"


@dataclass
class ScoredVideo:
    meta: VideoMeta
    seq: int
    parent: str | None = None
    score: int | None = None
    state: VideoState = VideoState.UNSCORED
    retries: int = 0
    error: str | None = None

    @property
    def video_id(self) -> str:
        return self.meta.video_id

    def to_dict(self) -> dict:
        return {
            **self.meta.to_dict(),
            "seq": self.seq,
            "parent": self.parent,
            "score": self.score,
            "state": self.state.value,
            "retries": self.retries,
            "error": self.error,
        }


def parse_score_response(text: str) -> int:
    """The integer under ``"score"`` in the last JSON object that has that key."""
    found = None
    for obj in iter_json_objects(text):
        if "score" in obj:
            found = obj
    if found is None:
        raise MalformedResponse("no JSON object with a 'score' key")
    value = found["score"]
    if isinstance(value, str) and value.strip().isdigit():
        value = int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedResponse(f"score is not an integer: {value!r}")
    if not MIN_SCORE <= value <= MAX_SCORE:
        raise OutOfRange(f"score {value} outside {MIN_SCORE}-{MAX_SCORE}")
    return value


def score_request(meta: VideoMeta) -> PromptRequest:
    return PromptRequest(meta.video_id, prompts.crawl_score_prompt(), meta.title, meta.description)


class Frontier:
    """Single-writer crawl state. All mutation goes through :meth:`apply`."""

    def __init__(self, log_path: str | Path | None = None):
        self._videos: dict[str, ScoredVideo] = {}
        self.events: list[dict] = []
        self._log_path = Path(log_path) if log_path is not None else None
        self._log_fh = None

    def __len__(self) -> int:
        return len(self._videos)

    def __contains__(self, video_id: str) -> bool:
        return video_id in self._videos

    def __getitem__(self, video_id: str) -> ScoredVideo:
        return self._videos[video_id]

    def videos(self) -> list[ScoredVideo]:
        return list(self._videos.values())

    def unscored(self) -> list[ScoredVideo]:
        return [v for v in self._videos.values() if v.state is VideoState.UNSCORED]

    def expandable(self, min_score: int = 1) -> list[ScoredVideo]:
        """Scored, unexpanded videos at or above ``min_score``, best first, FIFO within a score."""
        ready = [
            v for v in self._videos.values()
            if v.state is VideoState.SCORED and v.score is not None and v.score >= min_score
        ]
        return sorted(ready, key=lambda v: (-v.score, v.seq))

    # -- events ---------------------------------------------------------

    def apply(self, event: dict) -> None:
        kind = event["event"]
        vid = event["video_id"]
        if kind == "enqueue":
            if vid in self._videos:
                raise ValueError(f"{vid!r} enqueued twice")
            meta = VideoMeta(vid, event.get("title", ""), event.get("description", ""))
            self._videos[vid] = ScoredVideo(meta, seq=len(self._videos), parent=event.get("parent"))
        elif kind == "score":
            v = self._videos[vid]
            v.score = int(event["score"])
            v.state = VideoState.SCORED
            v.retries = int(event.get("retries", 0))
            v.error = event.get("error")
        elif kind == "expand":
            v = self._videos[vid]
            v.state = VideoState.EXPANDED
            if event.get("error"):
                v.error = event["error"]
                v.retries += int(event.get("retries", 1))
        else:
            raise ValueError(f"unknown frontier event {kind!r}")
        self.events.append(event)
        if self._log_path is not None:
            if self._log_fh is None:
                self._log_path.parent.mkdir(parents=True, exist_ok=True)
                self._log_fh = open(self._log_path, "a", encoding="utf-8")
            self._log_fh.write(json.dumps(event) + "\n")
            self._log_fh.flush()

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def add(self, meta: VideoMeta, parent: str | None = None) -> bool:
        """Enqueue an unseen video as unscored; returns False if it was already known."""
        if meta.video_id in self._videos:
            return False
        self.apply({"event": "enqueue", **meta.to_dict(), "parent": parent})
        return True

    @classmethod
    def replay(cls, events: Iterable[dict], log_path: str | Path | None = None) -> "Frontier":
        frontier = cls()
        for event in events:
            frontier.apply(event)
        frontier._log_path = Path(log_path) if log_path is not None else None
        return frontier

    @classmethod
    def load(cls, log_path: str | Path) -> "Frontier":
        """Rebuild from a JSONL log and keep appending to it."""
        with open(log_path, encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
        return cls.replay(events, log_path)

    # -- reporting ------------------------------------------------------

    def snapshot(self) -> list[dict]:
        return [v.to_dict() for v in self._videos.values()]

    def score_counts(self) -> Counter:
        return Counter(v.score for v in self._videos.values() if v.score is not None)

    def histogram(self, buckets: Iterable[int] = range(1, 6)) -> dict[int, float]:
        return score_histogram((v.score for v in self._videos.values() if v.score is not None), buckets)


def score_histogram(scores: Iterable[int], buckets: Iterable[int] = range(1, 6)) -> dict[int, float]:
    """Proportion of scores falling in each bucket; scores outside ``buckets`` are ignored."""
    buckets = list(buckets)
    counts = Counter(s for s in scores if s in buckets)
    total = sum(counts.values())
    return {b: (counts[b] / total if total else 0.0) for b in buckets}


def ingest_seeds(videos: Iterable[VideoMeta], log_path: str | Path | None = None) -> Frontier:
    videos = list(videos)
    if not videos:
        raise NoSeeds("at least one seed video is required")
    frontier = Frontier(log_path)
    for meta in videos:
        frontier.add(meta)
    return frontier


@dataclass
class CrawlSettings:
    budget: int = 10
    min_expand_score: int = 1
    max_videos: int | None = None
    max_cycles: int = 1000
    workers: int = 1
    backoff: Backoff = field(default_factory=lambda: Backoff(base_delay=0.0))


def _score_one(scorer: LanguageModel, meta: VideoMeta, backoff: Backoff) -> dict:
    attempts = 0

    def attempt() -> int:
        nonlocal attempts
        attempts += 1
        return parse_score_response(scorer.complete(score_request(meta)))

    try:
        score = backoff.call(attempt)
    except Exception as exc:
        log.warning("scoring %s failed after %d attempts: %s", meta.video_id, attempts, exc)
        # kept with score 0 so it is logged but never expanded
        return {"event": "score", "video_id": meta.video_id, "score": 0, "retries": attempts,
                "error": f"{type(exc).__name__}: {exc}"}
    event = {"event": "score", "video_id": meta.video_id, "score": score}
    if attempts > 1:
        event["retries"] = attempts - 1
    return event


def score_pending(frontier: Frontier, scorer: LanguageModel, settings: CrawlSettings | None = None) -> int:
    """Score every unscored video. Calls may run concurrently; results are applied in enqueue order."""
    settings = settings or CrawlSettings()
    pending = [v.meta for v in frontier.unscored()]
    if settings.workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            events = list(pool.map(lambda m: _score_one(scorer, m, settings.backoff), pending))
    else:
        events = [_score_one(scorer, m, settings.backoff) for m in pending]
    for event in events:
        frontier.apply(event)
    return len(events)


def _at_capacity(frontier: Frontier, settings: CrawlSettings) -> bool:
    return settings.max_videos is not None and len(frontier) >= settings.max_videos


def cycle_step(
    frontier: Frontier,
    scorer: LanguageModel,
    related: RelatedVideos,
    budget: int | None = None,
    settings: CrawlSettings | None = None,
) -> Frontier:
    """Score all unscored videos, then expand up to ``budget`` of the best-scored ones."""
    settings = settings or CrawlSettings()
    budget = settings.budget if budget is None else budget
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    score_pending(frontier, scorer, settings)
    for video in frontier.expandable(settings.min_expand_score)[:budget]:
        try:
            found = settings.backoff.call(lambda: related.related(video.video_id))
        except Exception as exc:
            log.warning("related lookup for %s failed: %s", video.video_id, exc)
            frontier.apply({"event": "expand", "video_id": video.video_id, "added": 0,
                            "error": f"{type(exc).__name__}: {exc}", "retries": settings.backoff.attempts})
            continue
        added = 0
        for meta in found:
            if _at_capacity(frontier, settings):
                break
            added += frontier.add(meta, parent=video.video_id)
        frontier.apply({"event": "expand", "video_id": video.video_id, "added": added})
    return frontier


def crawl(
    frontier: Frontier,
    scorer: LanguageModel,
    related: RelatedVideos,
    settings: CrawlSettings | None = None,
) -> Frontier:
    """Cycle until capacity, exhaustion or ``max_cycles``; every video ends up scored."""
    settings = settings or CrawlSettings()
    for _ in range(settings.max_cycles):
        if _at_capacity(frontier, settings) and not frontier.unscored():
            break
        cycle_step(frontier, scorer, related, settings=settings)
        if not frontier.unscored() and not frontier.expandable(settings.min_expand_score):
            break
        if _at_capacity(frontier, settings):
            break
    score_pending(frontier, scorer, settings)
    return frontier


def expansion_order_violations(events: Iterable[dict], min_score: int = 1) -> Iterator[str]:
    """Replay an event log and report every expansion made while a better-scored video waited."""
    scores: dict[str, int] = {}
    waiting: dict[str, int] = {}
    for event in events:
        vid = event["video_id"]
        if event["event"] == "score":
            scores[vid] = event["score"]
            if event["score"] >= min_score:
                waiting[vid] = event["score"]
        elif event["event"] == "expand":
            s = waiting.pop(vid, None)
            if s is None:
                yield f"{vid} expanded without being an expandable scored video"
                continue
            if waiting and max(waiting.values()) > s:
                yield f"{vid} (score {s}) expanded while a score-{max(waiting.values())} video waited"
