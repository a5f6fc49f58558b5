"""Prompt registry.

Four built-in question variants (indices 0-3) drive child detection; their
texts are frozen and validated against the packaged registry file. Index 3,
which excludes illustrations and unidentifiable children, is the default for
full-dataset runs. User prompts register at indices 4 and up.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import EmptyPromptError, SchemaError, UnknownPromptError

#: Instruction clause every binary prompt must end with.
BINARY_CLAUSE = 'Answer with only "Yes" or "No".'

DEFAULT_PROMPT_INDEX = 3
_BUILTIN_COUNT = 4


@dataclass(frozen=True)
class PromptTemplate:
    index: int
    text: str
    expects_binary: bool = True
    excludes_illustrations: bool = False
    excludes_unidentifiable: bool = False

    def __post_init__(self):
        if not self.text:
            raise EmptyPromptError("prompt text must be nonempty")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "expects_binary": self.expects_binary,
            "excludes_illustrations": self.excludes_illustrations,
            "excludes_unidentifiable": self.excludes_unidentifiable,
        }


def _load_builtins() -> tuple[PromptTemplate, ...]:
    raw = resources.files("kindersafe.data").joinpath("prompts.json").read_text("utf-8")
    entries = json.loads(raw)
    templates = tuple(
        PromptTemplate(
            index=e["index"],
            text=e["text"],
            expects_binary=e["expects_binary"],
            excludes_illustrations=e["excludes_illustrations"],
            excludes_unidentifiable=e["excludes_unidentifiable"],
        )
        for e in sorted(entries, key=lambda e: e["index"])
    )
    if [t.index for t in templates] != list(range(_BUILTIN_COUNT)):
        raise SchemaError("packaged prompt registry must define exactly indices 0-3")
    for t in templates:
        if t.expects_binary and not t.text.endswith(BINARY_CLAUSE):
            raise SchemaError(f"built-in prompt #{t.index} must end with {BINARY_CLAUSE!r}")
        if not t.expects_binary and t.index != 0:
            raise SchemaError("only built-in prompt #0 may be non-binary")
    return templates


_BUILTINS = _load_builtins()


def builtin_fingerprint() -> str:
    """SHA-256 over the built-in texts, pinned by a golden test."""
    h = hashlib.sha256()
    for t in _BUILTINS:
        h.update(t.text.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class PromptRegistry:
    """Holds the built-in templates plus any user-registered ones.

    Built-ins are immutable; registration deduplicates on exact text and
    always assigns indices >= 4.
    """

    def __init__(self, default_index: int = DEFAULT_PROMPT_INDEX):
        self._templates: dict[int, PromptTemplate] = {t.index: t for t in _BUILTINS}
        self._by_text: dict[str, int] = {t.text: t.index for t in _BUILTINS}
        if default_index not in self._templates:
            raise UnknownPromptError(default_index)
        self.default_index = default_index

    def get_prompt(self, index: int) -> PromptTemplate:
        try:
            return self._templates[index]
        except KeyError:
            raise UnknownPromptError(index) from None

    def default_prompt(self) -> PromptTemplate:
        return self._templates[self.default_index]

    def register_prompt(self, text: str, expects_binary: bool = True) -> int:
        """Register a new prompt; identical text returns the existing index."""
        if not text:
            raise EmptyPromptError("prompt text must be nonempty")
        if text in self._by_text:
            return self._by_text[text]
        index = max(max(self._templates) + 1, _BUILTIN_COUNT)
        template = PromptTemplate(index=index, text=text, expects_binary=expects_binary)
        self._templates[index] = template
        self._by_text[text] = index
        return index

    def indices(self) -> list[int]:
        return sorted(self._templates)

    def templates(self) -> list[PromptTemplate]:
        return [self._templates[i] for i in self.indices()]

    @classmethod
    def from_file(cls, path: str | Path, default_index: int = DEFAULT_PROMPT_INDEX) -> "PromptRegistry":
        """Load a registry overlay: built-ins must match byte-exactly, extras add on.

        The file is the same JSON-array format as the packaged registry. A
        file that tries to alter any built-in text is rejected.
        """
        with Path(path).open("r", encoding="utf-8") as fh:
            entries = json.load(fh)
        registry = cls(default_index=default_index)
        for e in sorted(entries, key=lambda e: e.get("index", 0)):
            index = int(e["index"])
            text = str(e["text"])
            if index < _BUILTIN_COUNT:
                if registry.get_prompt(index).text != text:
                    raise SchemaError(
                        f"{path}: built-in prompt #{index} text differs from the canonical registry"
                    )
                continue
            registry.register_prompt(text, expects_binary=bool(e.get("expects_binary", True)))
        return registry


#: Module-level registry used by the CLI and detector defaults.
DEFAULT_REGISTRY = PromptRegistry()


def get_prompt(index: int) -> PromptTemplate:
    return DEFAULT_REGISTRY.get_prompt(index)
