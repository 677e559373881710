"""JSONL manifest: one entry per source file, replaced atomically on every save.

File ids are the source video ids (one audio file per video). Lines are
written sorted by ``file_id`` with a fixed key order, so two runs over the
same inputs produce identical bytes once the ``timestamps`` fields are
stripped (see :func:`canonical_bytes`).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from ..errors import StageInputMissing

STAGE_FLAGS = ("crawled", "scored", "labeled", "segmented", "classified", "metadata", "dedup")


@dataclass
class ManifestEntry:
    file_id: str
    video_id: str
    title: str = ""
    description: str = ""
    flags: dict[str, bool] = field(default_factory=lambda: {f: False for f in STAGE_FLAGS})
    lm_score: int | None = None
    pseudo_labels: dict | None = None
    audio_len_s: float | None = None
    segments: list[dict] | None = None
    best_avg: float | None = None
    classification: str | None = None
    metadata: dict | None = None
    dedup_status: str | None = None
    dedup_reason: str | None = None
    tags: list[str] = field(default_factory=list)
    midi: list[str] | None = None
    errors: dict[str, str] = field(default_factory=dict)
    timestamps: dict[str, str] = field(default_factory=dict)

    def done(self, stage_flag: str) -> bool:
        return bool(self.flags.get(stage_flag))

    def mark(self, stage_flag: str, when: str | None = None) -> None:
        """Set a flag and every flag before it, keeping the sequence monotone."""
        idx = STAGE_FLAGS.index(stage_flag)
        for name in STAGE_FLAGS[: idx + 1]:
            self.flags[name] = True
        self.errors.pop(stage_flag, None)
        if when is not None:
            self.timestamps[stage_flag] = when

    def clear_from(self, stage_flag: str) -> None:
        """Unset a flag and every later one (used by ``--force`` reruns)."""
        idx = STAGE_FLAGS.index(stage_flag)
        for name in STAGE_FLAGS[idx:]:
            self.flags[name] = False

    def flags_monotone(self) -> bool:
        seen_unset = False
        for name in STAGE_FLAGS:
            if not self.flags.get(name):
                seen_unset = True
            elif seen_unset:
                return False
        return True

    def to_json(self) -> dict[str, Any]:
        return {
            "file_id": self.file_id,
            "video_id": self.video_id,
            "title": self.title,
            "description": self.description,
            "flags": {f: bool(self.flags.get(f)) for f in STAGE_FLAGS},
            "lm_score": self.lm_score,
            "pseudo_labels": self.pseudo_labels,
            "audio_len_s": self.audio_len_s,
            "segments": self.segments,
            "best_avg": self.best_avg,
            "classification": self.classification,
            "metadata": self.metadata,
            "dedup_status": self.dedup_status,
            "dedup_reason": self.dedup_reason,
            "tags": list(self.tags),
            "midi": self.midi,
            "errors": dict(sorted(self.errors.items())),
            "timestamps": dict(sorted(self.timestamps.items())),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ManifestEntry":
        flags = {f: bool(obj.get("flags", {}).get(f)) for f in STAGE_FLAGS}
        return cls(
            file_id=obj["file_id"],
            video_id=obj.get("video_id", obj["file_id"]),
            title=obj.get("title", ""),
            description=obj.get("description", ""),
            flags=flags,
            lm_score=obj.get("lm_score"),
            pseudo_labels=obj.get("pseudo_labels"),
            audio_len_s=obj.get("audio_len_s"),
            segments=obj.get("segments"),
            best_avg=obj.get("best_avg"),
            classification=obj.get("classification"),
            metadata=obj.get("metadata"),
            dedup_status=obj.get("dedup_status"),
            dedup_reason=obj.get("dedup_reason"),
            tags=list(obj.get("tags", [])),
            midi=obj.get("midi"),
            errors=dict(obj.get("errors", {})),
            timestamps=dict(obj.get("timestamps", {})),
        )


class Manifest:
    def __init__(self, path: str | Path, entries: dict[str, ManifestEntry] | None = None):
        self.path = Path(path)
        self.entries: dict[str, ManifestEntry] = dict(entries or {})

    @classmethod
    def load(cls, path: str | Path, must_exist: bool = False) -> "Manifest":
        path = Path(path)
        if not path.exists():
            if must_exist:
                raise StageInputMissing(f"manifest {path} does not exist; run the crawl stage first")
            return cls(path)
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                entry = ManifestEntry.from_json(json.loads(line))
                if entry.file_id in entries:
                    raise ValueError(f"{path}:{lineno}: duplicate file_id {entry.file_id!r}")
                entries[entry.file_id] = entry
        return cls(path, entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        for fid in sorted(self.entries):
            yield self.entries[fid]

    def __contains__(self, file_id: str) -> bool:
        return file_id in self.entries

    def get(self, file_id: str) -> ManifestEntry | None:
        return self.entries.get(file_id)

    def add(self, entry: ManifestEntry) -> None:
        if entry.file_id in self.entries:
            raise ValueError(f"duplicate file_id {entry.file_id!r}")
        self.entries[entry.file_id] = entry

    def lines(self, with_timestamps: bool = True) -> list[str]:
        out = []
        for entry in self:
            obj = entry.to_json()
            if not with_timestamps:
                obj.pop("timestamps")
            out.append(json.dumps(obj, ensure_ascii=False))
        return out

    def save(self) -> None:
        """Write to a temporary file in the same directory, fsync, then rename over the old manifest."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        data = "".join(line + "\n" for line in self.lines()).encode("utf-8")
        fd, tmp = tempfile.mkstemp(prefix=self.path.name + ".", suffix=".tmp", dir=self.path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def canonical_bytes(path: str | Path) -> bytes:
    """Manifest content with timestamps removed, for run-to-run comparison."""
    return "".join(line + "\n" for line in Manifest.load(path, must_exist=True).lines(False)).encode("utf-8")
