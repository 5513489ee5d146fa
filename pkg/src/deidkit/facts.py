"""Extracted entity mentions and the per-document fact dictionary."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

_WS = re.compile(r"\s+")
PLACEHOLDER = re.compile(r"\[[A-Z][A-Z0-9_]*\]")


def normalize(s: str) -> str:
    return _WS.sub(" ", s).strip().casefold()


@dataclass(frozen=True)
class EntityMention:
    entity_type: str
    surface: str
    context_hint: str = ""

    def __post_init__(self):
        if not self.context_hint:
            object.__setattr__(self, "context_hint", self.surface)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.entity_type, normalize(self.surface), normalize(self.context_hint))

    @property
    def is_bare(self) -> bool:
        """True when the hint adds no context beyond the surface itself."""
        return normalize(self.surface) == normalize(self.context_hint)

    def to_dict(self) -> dict:
        return {"surface": self.surface, "context_hint": self.context_hint}


class FactDictionary:
    """Insertion-ordered set of mentions grouped by type, deduplicated on ``EntityMention.key``."""

    def __init__(self, mentions: Iterable[EntityMention] = ()):
        self._items: dict[tuple[str, str, str], EntityMention] = {}
        for m in mentions:
            self.add(m)

    def add(self, mention: EntityMention) -> bool:
        if mention.key in self._items:
            return False
        self._items[mention.key] = mention
        return True

    def update(self, mentions: Iterable[EntityMention]) -> int:
        return sum(self.add(m) for m in mentions)

    def __len__(self):
        return len(self._items)

    def __iter__(self) -> Iterator[EntityMention]:
        return iter(list(self._items.values()))

    def __contains__(self, mention):
        return isinstance(mention, EntityMention) and mention.key in self._items

    def __eq__(self, other):
        if not isinstance(other, FactDictionary):
            return NotImplemented
        return set(self._items) == set(other._items)

    def keys(self) -> set[tuple[str, str, str]]:
        return set(self._items)

    def copy(self) -> "FactDictionary":
        return FactDictionary(self)

    def by_type(self) -> dict[str, list[EntityMention]]:
        out: dict[str, list[EntityMention]] = {}
        for m in self._items.values():
            out.setdefault(m.entity_type, []).append(m)
        return out

    def to_json(self) -> dict[str, list[dict]]:
        return {t: [m.to_dict() for m in ms] for t, ms in self.by_type().items()}

    @classmethod
    def from_json(cls, doc: Mapping[str, list]) -> "FactDictionary":
        facts = cls()
        for etype, items in doc.items():
            for item in items:
                if isinstance(item, str):
                    facts.add(EntityMention(etype, item))
                else:
                    facts.add(EntityMention(etype, item["surface"], item.get("context_hint", "")))
        return facts
