"""Locate JSON objects embedded in free-form language-model output."""

from __future__ import annotations

import json
from typing import Any, Callable, Iterator

_decoder = json.JSONDecoder()


def iter_json_objects(text: str) -> Iterator[dict[str, Any]]:
    """Yield every top-level JSON object in ``text``, left to right.

    Text between objects (reasoning, markdown fences, prose) is skipped.
    Objects nested inside a decoded object are not yielded separately.
    """
    i = 0
    n = len(text)
    while i < n:
        start = text.find("{", i)
        if start < 0:
            return
        try:
            obj, end = _decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            i = start + 1
            continue
        if isinstance(obj, dict):
            yield obj
        i = end


def last_json_object(
    text: str, predicate: Callable[[dict[str, Any]], bool] | None = None
) -> dict[str, Any] | None:
    found = None
    for obj in iter_json_objects(text):
        if predicate is None or predicate(obj):
            found = obj
    return found
