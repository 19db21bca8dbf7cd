"""Structured replies: fenced JSON extraction, schema checks, one repair re-ask."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, Generic, TypeVar

import jsonschema

from .providers.base import ChatModel, ChatRequest, Part

T = TypeVar("T")

_FENCE = re.compile(r"```(?:json)?[ \t]*\n(.*?)\n?```", re.DOTALL)


class ParseError(ValueError):
    pass


@lru_cache(maxsize=None)
def load_schema(schema_id: str) -> dict[str, Any]:
    path = resources.files("vlogsmith") / "resources" / "schemas" / f"{schema_id}.json"
    try:
        schema = json.loads(path.read_text())
    except FileNotFoundError:
        raise KeyError(f"unknown schema id {schema_id!r}") from None
    jsonschema.Draft202012Validator.check_schema(schema)
    return schema


def extract_document(text: str) -> Any:
    """Return the JSON value in the first fenced block, or the whole reply if it is bare JSON."""
    m = _FENCE.search(text)
    candidate = m.group(1) if m else text.strip()
    try:
        return json.loads(candidate)
    except json.JSONDecodeError as exc:
        where = "fenced block" if m else "reply"
        raise ParseError(f"{where} is not valid JSON: {exc.msg} at line {exc.lineno}") from None


def parse_reply(text: str, schema_id: str) -> Any:
    doc = extract_document(text)
    validator = jsonschema.Draft202012Validator(load_schema(schema_id))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ParseError(f"schema {schema_id}: at {path}: {e.message}")
    return doc


@dataclass
class StructuredResult(Generic[T]):
    value: T
    raw: str
    repairs: int
    first_error: str = ""


def ask_structured(
    model: ChatModel,
    request: ChatRequest,
    convert: Callable[[Any], T] = lambda doc: doc,
) -> StructuredResult[T]:
    """Ask, parse against ``request.schema_id``, convert; on failure re-ask once
    quoting the error. ``convert`` may raise ``ParseError`` for semantic checks."""
    reply = model.chat(request).text
    try:
        return StructuredResult(convert(parse_reply(reply, request.schema_id)), reply, 0)
    except ParseError as first:
        note = (
            f"Your previous reply could not be used: {first}\n"
            "Reply again with a single fenced ```json block that follows the schema exactly."
        )
        repair = replace(request, parts=request.parts + (Part(text=note),))
        reply = model.chat(repair).text
        try:
            return StructuredResult(convert(parse_reply(reply, request.schema_id)), reply, 1, str(first))
        except ParseError as second:
            raise ParseError(f"{second} (after one repair attempt; first error: {first})") from None
