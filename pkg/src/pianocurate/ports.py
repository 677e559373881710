"""Adapters for the external services the pipeline talks to.

Every port has a fixture-file implementation that replays recorded data,
which is what tests and offline runs use. The LM port also has an HTTP
adapter for a chat-style JSON endpoint.
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence, TypeVar

import httpx

from .errors import PortError
from .metadata import user_message

log = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    title: str
    description: str = ""

    def to_dict(self) -> dict:
        return {"video_id": self.video_id, "title": self.title, "description": self.description}

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "VideoMeta":
        return cls(str(obj["video_id"]), str(obj.get("title", "")), str(obj.get("description") or ""))


@dataclass(frozen=True)
class PromptRequest:
    """One LM call. ``key`` (the video id) lets fixture adapters find the recorded reply."""

    key: str
    system_prompt: str
    title: str
    description: str = ""

    @property
    def user(self) -> str:
        return user_message(self.title, self.description)


class LanguageModel(Protocol):
    def complete(self, request: PromptRequest) -> str: ...


class RelatedVideos(Protocol):
    def related(self, video_id: str) -> list[VideoMeta]: ...


class Transcriber(Protocol):
    def transcribe(self, file_id: str, n_segments: int, out_dir: Path) -> list[Path]: ...


def _read_json(path: str | Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PortError(f"cannot read fixture {path}: {exc}") from exc


class FixtureLM:
    """Replays recorded responses from a JSON object ``{key: response_text}``."""

    def __init__(self, responses: Mapping[str, str]):
        self.responses = dict(responses)

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureLM":
        return cls(_read_json(path))

    def complete(self, request: PromptRequest) -> str:
        try:
            return self.responses[request.key]
        except KeyError:
            raise PortError(f"no recorded response for {request.key!r}") from None


def assistant_text(body: Any) -> str:
    """Pull the assistant text out of common chat-completion response shapes."""
    if isinstance(body, str):
        return body
    if isinstance(body, dict):
        for key in ("text", "content", "response", "output"):
            if isinstance(body.get(key), str):
                return body[key]
        message = body.get("message")
        if isinstance(message, dict) and isinstance(message.get("content"), str):
            return message["content"]
        choices = body.get("choices")
        if isinstance(choices, list) and choices:
            first = choices[0]
            if isinstance(first, dict):
                if isinstance(first.get("text"), str):
                    return first["text"]
                msg = first.get("message")
                if isinstance(msg, dict) and isinstance(msg.get("content"), str):
                    return msg["content"]
    raise PortError("LM response carries no assistant text")


class HttpLM:
    """POSTs ``{model, system, user}`` as JSON and returns the assistant text."""

    def __init__(self, url: str, model: str, timeout: float = 60.0, client: httpx.Client | None = None):
        self.url = url
        self.model = model
        self.client = client or httpx.Client(timeout=timeout)

    def complete(self, request: PromptRequest) -> str:
        payload = {"model": self.model, "system": request.system_prompt, "user": request.user}
        try:
            resp = self.client.post(self.url, json=payload)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise PortError(f"LM endpoint failed for {request.key!r}: {exc}") from exc
        try:
            body = resp.json()
        except ValueError:
            body = resp.text
        return assistant_text(body)


class FixtureRelated:
    """Related-video lists from a JSON object ``{video_id: [{video_id, title, description}, ...]}``."""

    def __init__(self, mapping: Mapping[str, Sequence[Mapping[str, Any]]]):
        self.mapping = {k: [VideoMeta.from_dict(v) for v in vs] for k, vs in mapping.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureRelated":
        return cls(_read_json(path))

    def related(self, video_id: str) -> list[VideoMeta]:
        return list(self.mapping.get(video_id, ()))


class FixtureTranscriber:
    """Copies pre-transcribed ``<file_id>_<idx>.mid`` files into the output directory."""

    def __init__(self, source_dir: str | Path):
        self.source_dir = Path(source_dir)

    def transcribe(self, file_id: str, n_segments: int, out_dir: Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for idx in range(n_segments):
            name = f"{file_id}_{idx}.mid"
            src = self.source_dir / name
            if not src.exists():
                raise PortError(f"no transcription fixture {src}")
            shutil.copyfile(src, out_dir / name)
            written.append(out_dir / name)
        return written


@dataclass(frozen=True)
class Backoff:
    attempts: int = 3
    base_delay: float = 0.5
    factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep

    def call(self, fn: Callable[[], T]) -> T:
        """Run ``fn`` until it succeeds, sleeping base_delay * factor**k between attempts."""
        delay = self.base_delay
        for attempt in range(1, self.attempts + 1):
            try:
                return fn()
            except Exception as exc:
                if attempt == self.attempts:
                    raise
                log.debug("attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                if delay > 0:
                    self.sleep(delay)
                delay *= self.factor
        raise AssertionError("unreachable")
