"""Pull structured objects out of free-form model replies.

Models wrap JSON in prose, markdown fences, or emit Python dict literals
(single quotes, ``True``/``None``).  ``first_json_object`` scans left to
right and returns the first ``{...}`` that decodes as a mapping.
"""

from __future__ import annotations

import ast
import json
from typing import Any

from .errors import NoJsonFound

_decoder = json.JSONDecoder()


def _balanced_end(text: str, start: int) -> int | None:
    """Index one past the brace matching ``text[start]``, honoring quotes."""
    depth = 0
    quote: str | None = None
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if quote:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def first_json_object(text: str) -> dict[str, Any]:
    if not isinstance(text, str):
        raise NoJsonFound(f"reply is not text: {type(text).__name__}")
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = _decoder.raw_decode(text, pos)
            if isinstance(obj, dict):
                return obj
        except json.JSONDecodeError:
            end = _balanced_end(text, pos)
            if end is not None:
                try:
                    obj = ast.literal_eval(text[pos:end])
                except (ValueError, SyntaxError, MemoryError, RecursionError):
                    obj = None
                if isinstance(obj, dict):
                    return obj
        pos = text.find("{", pos + 1)
    snippet = text[:120].replace("\n", " ")
    raise NoJsonFound(f"no JSON object in reply: {snippet!r}")
