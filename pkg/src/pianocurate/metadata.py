"""Metadata extraction support: prompt packaging, response parsing, validation, composition keys.

Validation enforces the numbered rules of the shipped extraction prompt that
can be checked mechanically:

* rule 1  no empty strings or placeholder values
* rule 3  opus / piece_number are positive integers
* rule 7  string values are a single lowercase ASCII word
* rule 9  key signatures follow ``[a-g](b|#)?m?``
* rule 11 a piece_number only makes sense under an opus

Closed vocabularies (genre, difficulty, music_period) are reported with
``rule=None``. Rules 2, 4, 5, 6, 8 and 10 concern the model's judgement and
cannot be checked from the output alone (rules 5 and 8 reduce to rule 7).
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterable, Mapping
from xml.sax.saxutils import escape

from . import prompts
from .errors import MalformedResponse
from .jsonscan import last_json_object

log = logging.getLogger(__name__)

GENRES = frozenset(
    {"classical", "jazz", "pop", "blues", "ragtime", "atonal", "rock", "soundtrack", "ambient", "folk"}
)
DIFFICULTIES = frozenset({"beginner", "intermediate", "advanced", "virtuoso"})
PERIODS = frozenset({"classical", "romantic", "baroque", "impressionist", "contemporary", "modern"})

KEY_SIGNATURE_RE = re.compile(r"[a-g](b|#)?m?")
_WORD_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")
_INT_RE = re.compile(r"\s*\+?\d+\s*")
_PLACEHOLDERS = frozenset({"", "unknown", "n/a", "na", "none", "null", "nil", "uncertain", "unsure", "-", "?"})

INT_FIELDS = ("opus", "piece_number")
STR_FIELDS = ("composer", "genre", "form", "performer", "key_signature", "difficulty", "music_period")
ENUMS = {"genre": GENRES, "difficulty": DIFFICULTIES, "music_period": PERIODS}


@dataclass(frozen=True)
class MetadataRecord:
    composer: str | None = None
    opus: int | None = None
    piece_number: int | None = None
    genre: str | None = None
    form: str | None = None
    performer: str | None = None
    key_signature: str | None = None
    difficulty: str | None = None
    music_period: str | None = None

    def to_dict(self) -> dict[str, Any]:
        """Present fields only, in schema order."""
        return {k: v for k, v in asdict(self).items() if v is not None}

    def serialize(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any] | None) -> "MetadataRecord":
        if not obj:
            return cls()
        return cls(**{k: obj[k] for k in FIELD_NAMES if obj.get(k) is not None})

    def is_empty(self) -> bool:
        return not self.to_dict()


FIELD_NAMES = tuple(f.name for f in fields(MetadataRecord))


@dataclass(frozen=True)
class CompositionKey:
    composer: str
    opus: int
    piece_number: int | None = None

    def as_tuple(self) -> tuple:
        return (self.composer, self.opus, self.piece_number)


@dataclass(frozen=True)
class RawMetadata:
    """Parsed but unvalidated model output."""

    values: dict[str, Any]
    coerced: tuple[str, ...] = ()
    unknown_keys: tuple[str, ...] = ()


@dataclass(frozen=True)
class Violation:
    field: str
    rule: int | None
    value: Any
    message: str

    def to_json(self) -> dict:
        return {"field": self.field, "rule": self.rule, "value": self.value, "message": self.message}


@dataclass
class ValidationResult:
    record: MetadataRecord | None
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _tag(name: str, text: str) -> str:
    return f"<{name}>{escape(text)}</{name}>"


def user_message(title: str, description: str) -> str:
    """Title and description wrapped in XML tags, with ``&``, ``<`` and ``>`` escaped."""
    return f"{_tag('title', title)}\n{_tag('description', description or '')}"


def build_prompt(title: str, description: str = "") -> str:
    if not title:
        raise ValueError("title must be non-empty")
    return f"{prompts.metadata_prompt()}\n\n{user_message(title, description)}"


def _coerce_int(value: Any) -> tuple[Any, bool]:
    if isinstance(value, str) and _INT_RE.fullmatch(value):
        return int(value), True
    return value, False


def parse_metadata_response(text: str) -> RawMetadata:
    """Take the last JSON object in the output; drop unknown keys; coerce digit strings for opus/piece_number."""
    obj = last_json_object(text)
    if obj is None:
        raise MalformedResponse("no JSON object in metadata response")
    values = {}
    unknown = []
    coerced = []
    for key, value in obj.items():
        if key not in FIELD_NAMES:
            unknown.append(key)
            continue
        if key in INT_FIELDS:
            value, was = _coerce_int(value)
            if was:
                coerced.append(key)
        values[key] = value
    if unknown:
        log.warning("dropping unknown metadata keys: %s", ", ".join(unknown))
    return RawMetadata(values, tuple(coerced), tuple(unknown))


def _ascii(text: str) -> str | None:
    """Strip diacritics; None when some character has no ASCII base form."""
    decomposed = unicodedata.normalize("NFKD", text)
    folded = "".join(c for c in decomposed if not unicodedata.combining(c))
    return folded if folded.isascii() else None


def _check_int(name: str, value: Any, violations: list[Violation], notes: list[str]) -> int | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in _PLACEHOLDERS):
        violations.append(Violation(name, 1, value, "empty or placeholder value"))
        return None
    value, was = _coerce_int(value)
    if was:
        notes.append(f"{name}: coerced digit string to integer {value}")
    if isinstance(value, bool) or not isinstance(value, int):
        violations.append(Violation(name, 3, value, "must be an integer"))
        return None
    if value <= 0:
        violations.append(Violation(name, 3, value, "must be positive (zero means absent)"))
        return None
    return value


def _check_str(name: str, value: Any, violations: list[Violation], notes: list[str]) -> str | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in _PLACEHOLDERS):
        violations.append(Violation(name, 1, value, "empty or placeholder value"))
        return None
    if not isinstance(value, str):
        violations.append(Violation(name, 7, value, "must be a string"))
        return None
    text = value
    if not text.isascii():
        folded = _ascii(text)
        if folded is None:
            violations.append(Violation(name, 7, value, "no ASCII transliteration"))
            return None
        notes.append(f"{name}: transliterated {value!r} to {folded!r}")
        text = folded
    if name == "key_signature":
        if not KEY_SIGNATURE_RE.fullmatch(text):
            violations.append(Violation(name, 9, value, "key signature must match [a-g](b|#)?m?"))
            return None
        return text
    if not _WORD_RE.fullmatch(text):
        violations.append(Violation(name, 7, value, "must be a single lowercase ASCII word"))
        return None
    allowed = ENUMS.get(name)
    if allowed is not None and text not in allowed:
        violations.append(Violation(name, None, value, f"not one of {sorted(allowed)}"))
        return None
    return text


def validate(raw: RawMetadata | Mapping[str, Any], strict: bool = False) -> ValidationResult:
    """Check a parsed record field by field.

    In lenient mode (the default) offending fields are dropped and the rest
    kept; in strict mode any violation rejects the whole record.
    """
    if isinstance(raw, RawMetadata):
        values = raw.values
        notes = [f"{k}: coerced digit string to integer {values[k]}" for k in raw.coerced]
    else:
        values = {k: v for k, v in raw.items() if k in FIELD_NAMES}
        notes = []
    violations: list[Violation] = []
    clean: dict[str, Any] = {}
    for name in FIELD_NAMES:
        if name not in values:
            continue
        check = _check_int if name in INT_FIELDS else _check_str
        value = check(name, values[name], violations, notes)
        if value is not None:
            clean[name] = value
    if "piece_number" in clean and "opus" not in clean:
        violations.append(Violation("piece_number", 11, clean.pop("piece_number"), "piece_number without an opus"))
    if strict and violations:
        return ValidationResult(None, violations, notes)
    return ValidationResult(MetadataRecord(**clean), violations, notes)


def composition_key(record: MetadataRecord) -> CompositionKey | None:
    if record.composer is None or record.opus is None:
        return None
    return CompositionKey(record.composer, record.opus, record.piece_number)


def extract(text: str, strict: bool = False) -> ValidationResult:
    return validate(parse_metadata_response(text), strict=strict)


def presence(records: Iterable[MetadataRecord]) -> dict[str, float]:
    """Per-field percentage of records carrying a value."""
    records = list(records)
    counts = Counter(k for r in records for k in r.to_dict())
    n = len(records)
    return {k: (100.0 * counts[k] / n if n else 0.0) for k in FIELD_NAMES}
