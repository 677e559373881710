"""Dataset statistics written as CSV: LM score histogram, segment-score CDF, composer and tag frequencies."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import EmptyManifest
from ..frontier import score_histogram
from .manifest import ManifestEntry

TAG_CATEGORIES = ("genre", "form", "key_signature", "difficulty", "music_period")


@dataclass
class StatsBundle:
    histogram: dict[int, float]
    score_counts: dict[int, int]
    avg_scores: list[float]
    cdf: list[tuple[float, float]]
    composers: list[tuple[str, int]]
    tags: dict[str, list[tuple[str, int, float]]]


def empirical_cdf(values: Iterable[float]) -> list[tuple[float, float]]:
    """(value, fraction of samples <= value) at each distinct value."""
    arr = np.sort(np.asarray(list(values), dtype=np.float64))
    if arr.size == 0:
        return []
    uniq = np.unique(arr)
    counts = np.searchsorted(arr, uniq, side="right")
    return [(float(v), float(c) / arr.size) for v, c in zip(uniq, counts)]


def ranked(counter: Counter) -> list[tuple[str, int]]:
    """Most frequent first; ties alphabetical."""
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))


def _in_dataset(entry: ManifestEntry) -> bool:
    return bool(entry.metadata) and entry.dedup_status != "removed"


def stats_report(entries: Iterable[ManifestEntry]) -> StatsBundle:
    entries = list(entries)
    if not entries:
        raise EmptyManifest("the manifest has no entries")
    scores = [e.lm_score for e in entries if e.lm_score is not None]
    avg_scores = sorted(
        float(s["avg_score"]) for e in entries for s in (e.segments or []) if s.get("avg_score") is not None
    )
    kept = [e for e in entries if _in_dataset(e)]
    composers = Counter(e.metadata["composer"] for e in kept if e.metadata.get("composer"))
    tags = {}
    for cat in TAG_CATEGORIES:
        counts = ranked(Counter(e.metadata[cat] for e in kept if e.metadata.get(cat)))
        top = counts[0][1] if counts else 0
        tags[cat] = [(tag, n, n / top) for tag, n in counts]
    return StatsBundle(
        histogram=score_histogram(scores),
        score_counts=dict(sorted(Counter(scores).items())),
        avg_scores=avg_scores,
        cdf=empirical_cdf(avg_scores),
        composers=ranked(composers),
        tags=tags,
    )


def _write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_bundle(bundle: StatsBundle, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "score_histogram": _write_csv(
            out / "score_histogram.csv", ["score", "count", "proportion"],
            ((b, bundle.score_counts.get(b, 0), f"{p:.6f}") for b, p in bundle.histogram.items()),
        ),
        "avg_score_cdf": _write_csv(
            out / "avg_score_cdf.csv", ["avg_score", "cumulative_fraction"],
            ((f"{v:.6f}", f"{c:.6f}") for v, c in bundle.cdf),
        ),
        "composers": _write_csv(out / "composers.csv", ["composer", "count"], bundle.composers),
        "tags": _write_csv(
            out / "tags.csv", ["category", "tag", "count", "normalized"],
            ((cat, tag, n, f"{r:.6f}") for cat, rows in bundle.tags.items() for tag, n, r in rows),
        ),
    }
