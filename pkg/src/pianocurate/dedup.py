"""Compositional deduplication over validated metadata.

Rules, applied to one immutable snapshot of entries:

(a) entries sharing (composer, opus, piece_number) keep one representative,
(b) entries sharing (composer, opus) with no piece_number keep one,
(c) for composers with more than ``composer_cap`` entries, every entry that
    has neither opus nor piece_number is removed,
(d) everything else is retained.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .metadata import MetadataRecord


class RemovalReason(str, enum.Enum):
    DUPLICATE_TRIPLE = "duplicate_triple"
    DUPLICATE_OPUS = "duplicate_opus"
    UNTAGGED_OVERCAP = "untagged_overcap"


@dataclass(frozen=True)
class DedupEntry:
    file_id: str
    metadata: MetadataRecord
    avg_score: float | None = None


@dataclass(frozen=True)
class DedupPolicy:
    composer_cap: int = 250
    representative_rule: str = "highest_avg_score"  # or "first_seen"
    # count composer totals before key-based removals (True) or after them
    count_before_dedup: bool = True

    def __post_init__(self):
        if self.composer_cap <= 0:
            raise ValueError(f"composer_cap must be positive, got {self.composer_cap}")
        if self.representative_rule not in ("highest_avg_score", "first_seen"):
            raise ValueError(f"unknown representative rule {self.representative_rule!r}")


@dataclass
class DedupReport:
    unique_keys: int
    retained: list[str]
    removed: list[tuple[str, RemovalReason]] = field(default_factory=list)

    def to_lines(self) -> list[dict]:
        lines = [{"id": fid, "status": "retained"} for fid in self.retained]
        lines += [{"id": fid, "status": "removed", "reason": why.value} for fid, why in self.removed]
        return sorted(lines, key=lambda d: d["id"])


def _group_key(md: MetadataRecord):
    if md.composer is None or md.opus is None:
        return None
    if md.piece_number is not None:
        return ("triple", md.composer, md.opus, md.piece_number)
    return ("pair", md.composer, md.opus)


def _pick(group: list[tuple[int, DedupEntry]], rule: str) -> int:
    if rule == "first_seen":
        return min(pos for pos, _ in group)
    # highest score wins; ties go to the lexicographically smallest file id
    def rank(item):
        pos, e = item
        score = e.avg_score if e.avg_score is not None else float("-inf")
        return (-score, e.file_id)

    return min(group, key=rank)[0]


def dedup(entries: Iterable[DedupEntry], policy: DedupPolicy = DedupPolicy()) -> DedupReport:
    entries = list(entries)
    groups: dict[tuple, list[tuple[int, DedupEntry]]] = defaultdict(list)
    for pos, e in enumerate(entries):
        key = _group_key(e.metadata)
        if key is not None:
            groups[key].append((pos, e))

    removed: dict[int, RemovalReason] = {}
    for key, group in groups.items():
        keep = _pick(group, policy.representative_rule)
        reason = RemovalReason.DUPLICATE_TRIPLE if key[0] == "triple" else RemovalReason.DUPLICATE_OPUS
        for pos, _ in group:
            if pos != keep:
                removed[pos] = reason

    counted = [e for pos, e in enumerate(entries) if policy.count_before_dedup or pos not in removed]
    totals = Counter(e.metadata.composer for e in counted if e.metadata.composer is not None)
    for pos, e in enumerate(entries):
        md = e.metadata
        if pos in removed or md.composer is None:
            continue
        if totals[md.composer] > policy.composer_cap and md.opus is None and md.piece_number is None:
            removed[pos] = RemovalReason.UNTAGGED_OVERCAP

    return DedupReport(
        unique_keys=len(groups),
        retained=[e.file_id for pos, e in enumerate(entries) if pos not in removed],
        removed=[(entries[pos].file_id, removed[pos]) for pos in sorted(removed)],
    )


def dedup_stats(report: DedupReport) -> dict:
    by_reason = Counter(why.value for _, why in report.removed)
    return {
        "unique_keys": report.unique_keys,
        "input": len(report.retained) + len(report.removed),
        "retained": len(report.retained),
        "removed": {r.value: by_reason.get(r.value, 0) for r in RemovalReason},
    }
