"""Prompt templates loaded from ``templates/<agent>/<role>.txt`` plus a manifest.

Templates use ``$name`` placeholders. The manifest declares each template's
placeholder set; loading fails if the text uses anything undeclared, and
rendering fails if a declared variable is missing.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping


class TemplateError(ValueError):
    pass


def _identifiers(text: str) -> set[str]:
    found = set()
    for m in string.Template.pattern.finditer(text):
        if m.group("invalid") is not None:
            raise TemplateError(f"invalid placeholder near offset {m.start()}")
        name = m.group("named") or m.group("braced")
        if name:
            found.add(name)
    return found


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str
    placeholders: frozenset[str]
    system: str = ""
    few_shot: str = ""

    def __post_init__(self) -> None:
        used = _identifiers(self.text)
        if used != set(self.placeholders):
            extra = sorted(used - set(self.placeholders))
            unused = sorted(set(self.placeholders) - used)
            raise TemplateError(f"{self.template_id}: undeclared {extra}, declared but unused {unused}")

    def render(self, variables: Mapping[str, object]) -> str:
        missing = sorted(self.placeholders - set(variables))
        if missing:
            raise TemplateError(f"{self.template_id}: missing variables {missing}")
        body = string.Template(self.text).substitute({k: str(variables[k]) for k in self.placeholders})
        if self.few_shot:
            body = body.rstrip("\n") + "\n\n" + self.few_shot
        return body


class TemplateLibrary:
    def __init__(self, templates: Mapping[str, PromptTemplate]):
        self._templates = dict(templates)

    def __getitem__(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise TemplateError(f"no template {template_id!r}") from None

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def ids(self) -> list[str]:
        return sorted(self._templates)

    @classmethod
    def load(cls, root: str | Path | None = None) -> TemplateLibrary:
        """Load from a directory with ``manifest.json``; defaults to the bundled set."""
        base = Path(root) if root is not None else Path(str(resources.files("vlogsmith") / "resources" / "templates"))
        try:
            manifest = json.loads((base / "manifest.json").read_text())
        except FileNotFoundError:
            raise TemplateError(f"no manifest.json under {base}") from None
        if manifest.get("schema_version") != 1:
            raise TemplateError("unsupported template manifest version")
        out = {}
        for tid, entry in manifest["templates"].items():
            few = entry.get("few_shot")
            out[tid] = PromptTemplate(
                template_id=tid,
                text=(base / entry["file"]).read_text(),
                placeholders=frozenset(entry["placeholders"]),
                system=entry.get("system", ""),
                few_shot=(base / few).read_text() if few else "",
            )
        return cls(out)
