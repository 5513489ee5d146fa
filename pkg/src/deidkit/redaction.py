"""Locate extracted mentions in text through their context hints and splice in placeholders.

Matching is case-insensitive and treats any whitespace run as equivalent.
Placeholders such as ``[PERSON]`` inside a hint (produced when a later pass
saw masked text) match any text at that position.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

from .errors import HintNotFound, ResolutionError, SurfaceNotInHint
from .facts import PLACEHOLDER, EntityMention, FactDictionary

logger = logging.getLogger(__name__)

_SPLIT_PLACEHOLDER = re.compile(r"(\[[A-Z][A-Z0-9_]*\])")


@dataclass(frozen=True)
class ResolvedSpan:
    start: int
    end: int
    entity_type: str
    surface: str
    mention: EntityMention | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("span must satisfy 0 <= start < end")

    def __len__(self):
        return self.end - self.start

    def overlaps(self, other: "ResolvedSpan") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass
class RedactionResult:
    text: str
    spans: list[ResolvedSpan]
    unresolved: list[tuple[EntityMention, str]] = field(default_factory=list)
    conflicts: list[tuple[ResolvedSpan, ResolvedSpan]] = field(default_factory=list)

    def __iter__(self):
        # allows ``redacted, spans = redact(...)``
        return iter((self.text, self.spans))


def _literal(piece: str) -> str:
    core = r"\s+".join(re.escape(tok) for tok in piece.split())
    if not core:
        return r"\s*"
    lead = r"\s+" if piece[:1].isspace() else ""
    trail = r"\s+" if piece[-1:].isspace() else ""
    return lead + core + trail


@lru_cache(maxsize=4096)
def compile_pattern(s: str, boundaries: bool = True) -> re.Pattern:
    """Regex for ``s`` under the matching normalization; placeholders become wildcards."""
    parts = []
    for piece in _SPLIT_PLACEHOLDER.split(s):
        if not piece:
            continue
        parts.append(r"[\s\S]+?" if PLACEHOLDER.fullmatch(piece) else _literal(piece))
    body = "".join(parts)
    stripped = s.strip()
    if boundaries and stripped:
        if re.match(r"\w", stripped[0]):
            body = r"(?<!\w)" + body
        if re.match(r"\w", stripped[-1]):
            body = body + r"(?!\w)"
    return re.compile(body, re.IGNORECASE)


def find_all(text: str, s: str, start: int = 0, end: int | None = None) -> list[tuple[int, int]]:
    """Non-overlapping occurrences of ``s``; whole-word matches preferred, bare substrings as fallback."""
    if not s.strip():
        return []
    end = len(text) if end is None else end
    hits = [m.span() for m in compile_pattern(s, True).finditer(text, start, end) if m.end() > m.start()]
    if not hits:
        hits = [m.span() for m in compile_pattern(s, False).finditer(text, start, end) if m.end() > m.start()]
    return hits


def hint_present(text: str, hint: str) -> bool:
    return bool(find_all(text, hint))


def resolve_span(text: str, mention: EntityMention, consumed: set | None = None) -> ResolvedSpan:
    """Absolute span of ``mention.surface`` inside the leftmost unconsumed window matching its hint.

    ``consumed`` carries state across calls so that repeated identical mentions
    land on successive windows; pass the same set for one document.
    """
    windows = find_all(text, mention.context_hint)
    if not windows:
        raise HintNotFound(f"{mention.entity_type}: context hint not found")
    consumed = set() if consumed is None else consumed
    saw_surface = False
    for ws, we in windows:
        hits = find_all(text, mention.surface, ws, we)
        if not hits:
            continue
        saw_surface = True
        token = (mention.key, ws)
        if token in consumed:
            continue
        consumed.add(token)
        s, e = hits[0]
        return ResolvedSpan(s, e, mention.entity_type, text[s:e], mention)
    if not saw_surface:
        raise SurfaceNotInHint(f"{mention.entity_type}: surface not inside its context hint")
    # every window already used by an identical mention; reuse the leftmost
    ws, we = windows[0]
    s, e = find_all(text, mention.surface, ws, we)[0]
    return ResolvedSpan(s, e, mention.entity_type, text[s:e], mention)


def _candidate_spans(text: str, facts: Iterable[EntityMention], expand_bare: bool):
    consumed: set = set()
    spans, unresolved = [], []
    for m in facts:
        if expand_bare and m.is_bare:
            hits = find_all(text, m.surface)
            if not hits:
                unresolved.append((m, "HintNotFound"))
            spans.extend(ResolvedSpan(s, e, m.entity_type, text[s:e], m) for s, e in hits)
            continue
        try:
            spans.append(resolve_span(text, m, consumed))
        except ResolutionError as exc:
            unresolved.append((m, type(exc).__name__))
    return spans, unresolved


def resolve_overlaps(spans: list[ResolvedSpan]) -> tuple[list[ResolvedSpan], list[tuple[ResolvedSpan, ResolvedSpan]]]:
    """Keep the longer of two overlapping spans; ties go to the leftmost, then to the type name."""
    order = sorted(spans, key=lambda s: (-(s.end - s.start), s.start, s.entity_type, s.surface))
    kept: list[ResolvedSpan] = []
    conflicts = []
    seen = set()
    for s in order:
        ident = (s.start, s.end, s.entity_type)
        if ident in seen:
            continue
        seen.add(ident)
        clash = next((k for k in kept if k.overlaps(s)), None)
        if clash is None:
            kept.append(s)
        else:
            conflicts.append((clash, s))
    kept.sort(key=lambda s: s.start)
    return kept, conflicts


def resolve_all(text: str, facts: Iterable[EntityMention], expand_bare: bool = True):
    spans, unresolved = _candidate_spans(text, facts, expand_bare)
    kept, conflicts = resolve_overlaps(spans)
    if conflicts:
        logger.info(
            "dropped %d overlapping span(s): %s",
            len(conflicts),
            ", ".join(sorted({f"{b.entity_type} inside {a.entity_type}" for a, b in conflicts})),
        )
    return kept, unresolved, conflicts


def splice(text: str, spans: list[ResolvedSpan], replace: Callable[[ResolvedSpan], str]) -> str:
    """Replace non-overlapping spans right to left so earlier offsets stay valid."""
    out = text
    for s in sorted(spans, key=lambda s: s.start, reverse=True):
        out = out[: s.start] + replace(s) + out[s.end :]
    return out


def placeholder(entity_type: str) -> str:
    return f"[{entity_type}]"


def redact(text: str, facts: FactDictionary | Iterable[EntityMention], expand_bare: bool = True) -> RedactionResult:
    spans, unresolved, conflicts = resolve_all(text, facts, expand_bare)
    if unresolved:
        logger.warning(
            "%d mention(s) could not be located: %s",
            len(unresolved),
            ", ".join(sorted({f"{m.entity_type}/{why}" for m, why in unresolved})),
        )
    redacted = splice(text, spans, lambda s: placeholder(s.entity_type))
    return RedactionResult(redacted, spans, unresolved, conflicts)


def redacted_offsets(spans: list[ResolvedSpan]) -> list[tuple[int, int]]:
    """Where each placeholder sits in the redacted text, in span order."""
    out = []
    shift = 0
    for s in sorted(spans, key=lambda s: s.start):
        token = placeholder(s.entity_type)
        start = s.start + shift
        out.append((start, start + len(token)))
        shift += len(token) - (s.end - s.start)
    return out
