"""Pseudo-labels for five-second clips from a (piano, other) source-separation stem pair.

A clip is non-piano when the ``other`` stem stays at or above ``db_min`` for
longer than ``l_min`` seconds, or when the ``piano`` stem stays below
``piano_silence_db`` for longer than ``piano_silence_s`` seconds. Durations
are measured as frame-run length times the envelope hop.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import (
    CLIP_SAMPLES,
    ENERGY_HOP,
    TARGET_RATE,
    AudioBuffer,
    EnergyEnvelope,
    load_wav,
    resample,
    rms_dbfs_envelope,
)
from .errors import ConfigError, InvalidClipLength, StemMismatch, TooShort


@dataclass(frozen=True)
class LabelPolicy:
    db_min: float
    l_min: float
    piano_silence_db: float = -20.0
    piano_silence_s: float = 4.0

    def __post_init__(self):
        if not self.db_min < 0:
            raise ConfigError(f"db_min must be negative dBFS, got {self.db_min}")
        if not self.l_min > 0:
            raise ConfigError(f"l_min must be positive seconds, got {self.l_min}")


# Thresholds used for each pseudo-labeled training corpus.
CORPUS_POLICIES: dict[str, LabelPolicy] = {
    "giantmidi": LabelPolicy(db_min=-25.0, l_min=1.5),
    "score-4": LabelPolicy(db_min=-22.0, l_min=1.5),
    "jazz-trio-database": LabelPolicy(db_min=-28.0, l_min=1.0),
    "piano-concertos": LabelPolicy(db_min=-28.0, l_min=1.0),
}


def _policy_key(name: str) -> str:
    return re.sub(r"[\s_]+", "-", name.strip().lower())


def policy_by_name(name: str) -> LabelPolicy:
    """Look up a corpus policy; "Jazz Trio Database", "jazz_trio_database" etc. all match."""
    try:
        return CORPUS_POLICIES[_policy_key(name)]
    except KeyError:
        known = ", ".join(sorted(CORPUS_POLICIES))
        raise ConfigError(f"unknown label policy {name!r}; known: {known}") from None


class Label(str, enum.Enum):
    PIANO = "piano"
    NON_PIANO = "non_piano"


class Reason(str, enum.Enum):
    OTHER_ENERGY = "other_energy"
    PIANO_SILENCE = "piano_silence"
    CLEAN = "clean"


@dataclass(frozen=True)
class ClipLabel:
    clip_index: int
    label: Label
    reason: Reason

    def __post_init__(self):
        if (self.label is Label.NON_PIANO) != (self.reason is not Reason.CLEAN):
            raise ValueError(f"inconsistent clip label {self.label.value}/{self.reason.value}")

    @property
    def start_s(self) -> int:
        return 5 * self.clip_index

    def to_json(self, file_id: str) -> dict:
        return {"id": file_id, "clip": self.clip_index, "label": self.label.value, "reason": self.reason.value}


@dataclass(frozen=True, eq=False)
class StemPair:
    piano: AudioBuffer
    other: AudioBuffer

    def __post_init__(self):
        if self.piano.sample_rate != self.other.sample_rate:
            raise StemMismatch(
                f"stem sample rates differ: {self.piano.sample_rate} vs {self.other.sample_rate}"
            )
        tolerance = int(round(ENERGY_HOP * self.piano.sample_rate / TARGET_RATE))
        if abs(len(self.piano) - len(self.other)) > tolerance:
            raise StemMismatch(f"stem lengths differ: {len(self.piano)} vs {len(self.other)} samples")

    def at_rate(self, rate: int = TARGET_RATE) -> "StemPair":
        if self.piano.sample_rate == rate:
            return self
        return StemPair(resample(self.piano, rate), resample(self.other, rate))


def _longest_run(mask: np.ndarray) -> int:
    if not mask.any():
        return 0
    edges = np.diff(np.concatenate(([0], mask.view(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return int((ends - starts).max())


def longest_region_above(env: EnergyEnvelope, threshold: float) -> float:
    """Seconds spanned by the longest run of frames with ``frame_db >= threshold``."""
    return _longest_run(env.frame_db >= threshold) * env.hop_seconds


def longest_region_below(env: EnergyEnvelope, threshold: float) -> float:
    """Seconds spanned by the longest run of frames with ``frame_db < threshold``."""
    return _longest_run(env.frame_db < threshold) * env.hop_seconds


def label_clip(clip: StemPair, policy: LabelPolicy, clip_index: int = 0) -> ClipLabel:
    clip = clip.at_rate()
    if len(clip.piano) != len(clip.other):
        raise StemMismatch(f"clip stems differ in length: {len(clip.piano)} vs {len(clip.other)}")
    if len(clip.piano) != CLIP_SAMPLES:
        raise InvalidClipLength(f"clip must be exactly {CLIP_SAMPLES} samples, got {len(clip.piano)}")

    other_env = rms_dbfs_envelope(clip.other)
    if longest_region_above(other_env, policy.db_min) > policy.l_min:
        return ClipLabel(clip_index, Label.NON_PIANO, Reason.OTHER_ENERGY)
    piano_env = rms_dbfs_envelope(clip.piano)
    if longest_region_below(piano_env, policy.piano_silence_db) > policy.piano_silence_s:
        return ClipLabel(clip_index, Label.NON_PIANO, Reason.PIANO_SILENCE)
    return ClipLabel(clip_index, Label.PIANO, Reason.CLEAN)


def label_recording(stems: StemPair, policy: LabelPolicy) -> list[ClipLabel]:
    """Label every full tumbling 5 s clip; a trailing partial clip is dropped."""
    stems = stems.at_rate()
    n = min(len(stems.piano), len(stems.other))
    if n < CLIP_SAMPLES:
        raise TooShort(f"stems hold {n / TARGET_RATE:.2f} s, need at least 5 s")
    labels = []
    for i in range(n // CLIP_SAMPLES):
        lo, hi = i * CLIP_SAMPLES, (i + 1) * CLIP_SAMPLES
        clip = StemPair(stems.piano.slice(lo, hi), stems.other.slice(lo, hi))
        labels.append(label_clip(clip, policy, clip_index=i))
    return labels


def proportion_piano(labels: list[ClipLabel]) -> float:
    if not labels:
        return 0.0
    return sum(lab.label is Label.PIANO for lab in labels) / len(labels)


def stem_paths(directory: str | Path, file_id: str) -> tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{file_id}.piano.wav", directory / f"{file_id}.other.wav"


def find_stem_pairs(directory: str | Path) -> dict[str, tuple[Path, Path]]:
    """Map ``<id>`` to its stem paths for every complete ``<id>.piano.wav``/``<id>.other.wav`` pair."""
    directory = Path(directory)
    pairs = {}
    for piano in sorted(directory.glob("*.piano.wav")):
        file_id = piano.name[: -len(".piano.wav")]
        other = directory / f"{file_id}.other.wav"
        if other.exists():
            pairs[file_id] = (piano, other)
    return pairs


def label_stem_files(piano_path: str | Path, other_path: str | Path, policy: LabelPolicy) -> list[ClipLabel]:
    return label_recording(StemPair(load_wav(piano_path), load_wav(other_path)), policy)
