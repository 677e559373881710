"""Synthetic fixture set for trying the pipeline offline.

``write_demo(dir)`` lays out seeds, a related-videos graph, recorded LM
replies for scoring and metadata, 20-second stem excerpts, window-score
series, reference segments and placeholder MIDI files, plus a
``config.yaml`` tying them together. Everything is generated from a seeded
RNG, so the same arguments always give the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from ..dsp import TARGET_RATE, AudioBuffer, write_wav

STEM_SECONDS = 20

# (title, description, lm score, metadata reply, series layout)
# Layouts: list of (seconds, score level) pieces concatenated into the window series.
_RECORDINGS = [
    ("Chopin - Nocturne in E-flat major, Op. 9 No. 2 | Rousseau", "Performed by Rousseau. #chopin #piano",
     5, {"composer": "chopin", "opus": 9, "piece_number": 2, "genre": "classical", "form": "nocturne",
         "performer": "rousseau", "key_signature": "eb", "music_period": "romantic"}, [(120, 0.95)]),
    ("Chopin Nocturne Op.9 No.2 (live)", "Live in Warsaw",
     4, {"composer": "chopin", "opus": 9, "piece_number": 2, "genre": "classical", "form": "nocturne"},
     [(90, 0.85)]),
    ("Bach - Prelude in C major BWV 846", "Well-Tempered Clavier book 1",
     5, {"composer": "bach", "opus": 846, "genre": "classical", "form": "prelude", "key_signature": "c",
         "music_period": "baroque"}, [(70, 0.9), (15, 0.1), (80, 0.92)]),
    ("Piano Concerto No. 2 - Rachmaninoff (full)", "with orchestra",
     1, {"composer": "rachmaninoff", "opus": 18, "form": "concerto"}, [(150, 0.2)]),
    ("Debussy - Clair de Lune", "Suite bergamasque, 3rd movement",
     4, {"composer": "debussy", "genre": "classical", "form": "suite", "key_signature": "db",
         "music_period": "impressionist", "difficulty": "Intermediate"}, [(100, 0.88)]),
    ("Liszt La Campanella S.141 No.3", "Grandes etudes de Paganini",
     5, {"composer": "liszt", "opus": 141, "piece_number": 3, "genre": "classical", "form": "etude",
         "difficulty": "virtuoso", "music_period": "romantic"}, [(60, 0.8)]),
    ("Piano improvisation at home", "just playing",
     3, {"genre": "ambient", "form": "improvisation"}, [(30, 0.9), (40, 0.3)]),
    ("Beethoven Sonata No. 31, Op. 110 - Argerich", "00:00 Moderato",
     4, {"composer": "beethoven", "opus": "110", "genre": "classical", "form": "sonata",
         "performer": "argerich", "music_period": "classical"}, [(140, 0.75)]),
    ("Jazz piano trio night", "bass, drums and piano",
     3, {"genre": "jazz", "performer": "evans", "music_period": "modern"}, [(120, 0.55)]),
    ("Mozart Sonata K. 545 1st mvt", "easy classical piano",
     4, {"composer": "mozart", "opus": 545, "genre": "classical", "form": "sonata", "key_signature": "c",
         "difficulty": "beginner", "music_period": "classical"}, [(50, 0.2), (80, 0.9)]),
]

_DISTRACTORS = [
    ("Top 10 Guitar Solos of All Time", "rock compilation", 0),
    ("Mozart Piano Concerto No. 21 - London Symphony Orchestra", "orchestra", 1),
    ("Piano tutorial: learn chords fast", "lesson", 2),
    ("Relaxing piano music for study 3 hours", "compilation", 2),
]


def _series(layout, rng) -> tuple[list[float], int]:
    total = sum(sec for sec, _ in layout)
    per_second = np.concatenate([np.full(sec, level) for sec, level in layout])
    jitter = rng.uniform(-0.04, 0.04, size=per_second.size)
    per_second = np.clip(per_second + jitter, 0.0, 1.0)
    n_windows = total - 4
    return [round(float(x), 4) for x in per_second[:n_windows]], total


def synthetic_stems(seconds: float, rng: np.random.Generator, burst_s: float = 0.0,
                    silence_s: float = 0.0) -> tuple[AudioBuffer, AudioBuffer]:
    """A tone-sequence piano stem and a quiet-noise other stem.

    ``burst_s`` seconds of -15 dBFS noise go into the other stem at t = 6 s;
    ``silence_s`` seconds of the piano stem starting at t = 11 s are zeroed.
    """
    n = int(seconds * TARGET_RATE)
    t = np.arange(n) / TARGET_RATE
    piano = np.zeros(n)
    note_len = int(0.5 * TARGET_RATE)
    decay = np.exp(-np.arange(note_len) / (0.3 * TARGET_RATE))
    for start in range(0, n - note_len, note_len):
        freq = 220.0 * 2 ** (rng.integers(0, 24) / 12)
        piano[start:start + note_len] += 0.3 * decay * np.sin(2 * np.pi * freq * t[start:start + note_len])
    other = rng.normal(0.0, 10 ** (-60 / 20), n)
    if burst_s:
        lo = int(6 * TARGET_RATE)
        hi = lo + int(burst_s * TARGET_RATE)
        other[lo:hi] = rng.normal(0.0, 10 ** (-15 / 20), hi - lo)
    if silence_s:
        lo = int(11 * TARGET_RATE)
        piano[lo:lo + int(silence_s * TARGET_RATE)] = 0.0
    return AudioBuffer(piano, TARGET_RATE), AudioBuffer(other, TARGET_RATE)


# a minimal valid Standard MIDI File: header plus one empty track
_EMPTY_SMF = b"MThd\x00\x00\x00\x06\x00\x00\x00\x01\x01\xe0MTrk\x00\x00\x00\x04\x00\xff\x2f\x00"


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_demo(directory: str | Path, n_recordings: int = 10, seed: int = 0) -> Path:
    """Write the fixture set under ``directory`` and return the config path."""
    root = Path(directory)
    if not 1 <= n_recordings <= len(_RECORDINGS):
        raise ValueError(f"n_recordings must lie in 1-{len(_RECORDINGS)}")
    rng = np.random.default_rng(seed)
    for sub in ("stems", "scores", "midi"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    recs = _RECORDINGS[:n_recordings]
    ids = [f"vid{i:03d}" for i in range(len(recs))]
    noise_ids = [f"other{i:02d}" for i in range(len(_DISTRACTORS))]
    meta = {vid: {"video_id": vid, "title": r[0], "description": r[1]} for vid, r in zip(ids, recs)}
    meta.update({vid: {"video_id": vid, "title": d[0], "description": d[1]} for vid, d in zip(noise_ids, _DISTRACTORS)})

    seeds = [meta[ids[0]]]
    related: dict[str, list[dict]] = {}
    pool = ids[1:] + noise_ids
    for i, vid in enumerate([ids[0], *pool]):
        related[vid] = [meta[x] for x in pool[2 * i:2 * i + 3]]

    scorer = {vid: f"Looks like solo piano content.\n{{\"score\": {r[2]}}}" for vid, r in zip(ids, recs)}
    scorer.update({vid: f"Likely not solo piano. {{\"score\": {d[2]}}}" for vid, d in zip(noise_ids, _DISTRACTORS)})
    metadata_lm = {vid: "Reasoning: title names the work.\n" + json.dumps(r[3]) for vid, r in zip(ids, recs)}

    refs, ref_labels = [], {}
    for k, (vid, rec) in enumerate(zip(ids, recs)):
        scores, total = _series(rec[4], rng)
        _dump(root / "scores" / f"{vid}.json",
              {"id": vid, "window_s": 5, "stride_s": 1, "audio_len_s": total, "scores": scores})
        piano, other = synthetic_stems(STEM_SECONDS, rng, burst_s=2.0 if k % 3 == 1 else 0.0,
                                       silence_s=4.5 if k % 4 == 2 else 0.0)
        write_wav(root / "stems" / f"{vid}.piano.wav", piano)
        write_wav(root / "stems" / f"{vid}.other.wav", other)
        cursor = 0
        for sec, level in rec[4]:
            if level >= 0.5:
                refs.append({"id": vid, "start_s": cursor, "end_s": cursor + sec})
            cursor += sec
        ref_labels[vid] = "positive" if any(level >= 0.7 and sec > 45 for sec, level in rec[4]) else "negative"
        for idx in range(3):
            (root / "midi" / f"{vid}_{idx}.mid").write_bytes(_EMPTY_SMF)

    _dump(root / "seeds.json", seeds)
    _dump(root / "related.json", related)
    _dump(root / "scorer.json", scorer)
    _dump(root / "metadata_lm.json", metadata_lm)
    _dump(root / "reference_labels.json", ref_labels)
    (root / "references.jsonl").write_text("".join(json.dumps(r) + "\n" for r in refs), encoding="utf-8")

    config = {
        "workdir": "work",
        "inputs": {
            "seeds": "seeds.json",
            "stems_dir": "stems",
            "scores_dir": "scores",
            "references": "references.jsonl",
            "reference_labels": "reference_labels.json",
            "transcriptions_dir": "midi",
        },
        "ports": {
            "scorer": {"fixture": "scorer.json"},
            "related": {"fixture": "related.json"},
            "metadata_lm": {"fixture": "metadata_lm.json"},
        },
        "segmenter": {"lambda": 0.5, "d": 3, "min_piano_s": 45, "min_avg": 0.7},
        "policy": "score-4",
        "threshold": 0.7,
        "min_lm_score": 3,
        "frontier": {"budget": 3, "max_videos": 50, "retry_base_delay_s": 0.0},
        "dedup": {"composer_cap": 250},
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return path
