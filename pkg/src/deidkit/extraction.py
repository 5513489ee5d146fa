"""Chunked, multi-pass entity extraction.

Text is cut into word chunks of ``chunk_size_words`` (with a little trailing
context from the previous chunk). Every chunk is sent to an extractor
``passes`` times; from the second pass on, the chunk is first masked with
everything found so far so the model only has the leftovers to look at.
"""

from __future__ import annotations

import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

from .errors import ExtractorFailure
from .facts import PLACEHOLDER, EntityMention, FactDictionary, normalize
from .redaction import compile_pattern, hint_present, placeholder, resolve_all, splice
from .retry import call_with_retries

logger = logging.getLogger(__name__)

# 33 types; the production list is not public, these cover the HIPAA identifiers
# plus the quasi-identifiers used in the worked examples.
DEFAULT_ENTITY_TYPES: tuple[str, ...] = (
    "PERSON",
    "AGE",
    "BIRTH_DATE_TIME",
    "DATE",
    "ADDRESS",
    "LOCATION",
    "ORGANIZATION",
    "PHARMACY",
    "DIAGNOSTIC_LABS",
    "TELEPHONE_NUMBER",
    "FAX_NUMBER",
    "EMAIL",
    "URL",
    "IP_ADDRESS",
    "SSN_OR_TAXPAYER",
    "GUID",
    "FIN",
    "MRN",
    "ACCOUNT_NUMBER",
    "HEALTH_PLAN_NUMBER",
    "LICENSE_NUMBER",
    "VEHICLE_ID",
    "DEVICE_ID",
    "BIOMETRIC_ID",
    "PHOTO_ID",
    "MARITAL_STATUS",
    "PARENTHOOD",
    "OCCUPATION",
    "NATIONALITY",
    "ETHNICITY",
    "RELIGION",
    "SEXUAL_ORIENTATION",
    "USERNAME",
)

_WORD = re.compile(r"\S+")


@dataclass(frozen=True)
class ExtractionConfig:
    chunk_size_words: int = 256
    passes: int = 2
    overlap_words: int = 16
    entity_types: tuple[str, ...] = DEFAULT_ENTITY_TYPES
    retries: int = 3
    backoff_s: float = 0.5
    max_workers: int = 1

    def __post_init__(self):
        if self.chunk_size_words < 1:
            raise ValueError("chunk_size_words must be >= 1")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if not 0 <= self.overlap_words < self.chunk_size_words:
            raise ValueError("overlap_words must be in [0, chunk_size_words)")
        if self.retries < 1:
            raise ValueError("retries must be >= 1")
        object.__setattr__(self, "entity_types", tuple(self.entity_types))


@dataclass(frozen=True)
class Chunk:
    index: int
    words: tuple[str, ...]
    word_offset: int
    overlap: int
    char_start: int
    char_end: int
    text: str

    @property
    def primary_words(self) -> tuple[str, ...]:
        return self.words[self.overlap :]


def chunk_text(text: str, config: ExtractionConfig) -> list[Chunk]:
    """Whitespace word chunks; chunk ``i`` owns words ``[i*w, (i+1)*w)`` and also sees
    up to ``overlap_words`` words before that. Chunk text is the original slice."""
    spans = [m.span() for m in _WORD.finditer(text)]
    n = len(spans)
    w = config.chunk_size_words
    chunks = []
    for i in range(math.ceil(n / w)):
        lo = i * w
        hi = min(lo + w, n)
        start = max(0, lo - config.overlap_words)
        cs, ce = spans[start][0], spans[hi - 1][1]
        chunks.append(
            Chunk(
                index=i,
                words=tuple(text[a:b] for a, b in spans[start:hi]),
                word_offset=start,
                overlap=lo - start,
                char_start=cs,
                char_end=ce,
                text=text[cs:ce],
            )
        )
    return chunks


def mask_known(text: str, facts: FactDictionary) -> str:
    """Replace every locatable known mention with its ``[TYPE]`` placeholder."""
    if not len(facts):
        return text
    # whole-word presence only: "Ann" known from another chunk must not eat into "Annual"
    present = [m for m in facts if compile_pattern(m.context_hint, True).search(text)]
    spans, unresolved, _ = resolve_all(text, present)
    if unresolved:
        # expected for mentions that live in other chunks
        logger.debug("mask: %d known mention(s) not present", len(unresolved))
    return splice(text, spans, lambda s: placeholder(s.entity_type))


@runtime_checkable
class Extractor(Protocol):
    def extract(self, chunk_text: str, entity_types: Sequence[str], pass_index: int) -> Mapping[str, list]:
        """Return ``{entity_type: [mention, ...]}``; mentions are EntityMention or
        ``{"surface", "context_hint"}`` dicts."""


def parse_response(response: Mapping[str, list]) -> list[EntityMention]:
    out = []
    for etype, items in (response or {}).items():
        for item in items or ():
            if isinstance(item, EntityMention):
                out.append(item if item.entity_type == etype else EntityMention(etype, item.surface, item.context_hint))
            elif isinstance(item, str):
                out.append(EntityMention(etype, item))
            else:
                out.append(EntityMention(etype, str(item.get("surface", "")), str(item.get("context_hint") or "")))
    return out


def validate_mentions(mentions: list[EntityMention], chunk: str, entity_types: Sequence[str]):
    """Split into (kept, dropped_count). A mention survives if its type is configured,
    its surface sits inside its hint, and the hint occurs in the chunk."""
    allowed = set(entity_types)
    kept, dropped = [], 0
    for m in mentions:
        s = normalize(m.surface)
        if (
            m.entity_type in allowed
            and s
            and not PLACEHOLDER.search(m.surface)
            and s in normalize(m.context_hint)
            and hint_present(chunk, m.context_hint)
        ):
            kept.append(m)
        else:
            dropped += 1
    if dropped:
        logger.warning("dropped %d invalid mention(s) from extractor response", dropped)
    return kept, dropped


@dataclass
class ExtractionTrace:
    """Per-pass bookkeeping; ``sizes[j]`` is the dictionary size after pass ``j + 1``."""

    sizes: list[int] = field(default_factory=list)
    snapshots: list[set] = field(default_factory=list)
    dropped: int = 0
    requests: int = 0


def _dispatch(extractor, requests, config: ExtractionConfig, sleep):
    """Send one pass worth of ``(chunk_text, types, pass_index)`` requests; results in order."""
    batch = getattr(extractor, "extract_batch", None)
    if callable(batch) and len(requests) > 1:
        return call_with_retries(
            lambda: list(batch(requests)), config.retries, config.backoff_s, sleep, ExtractorFailure, "extraction"
        )

    def one(req):
        return call_with_retries(
            lambda: extractor.extract(*req), config.retries, config.backoff_s, sleep, ExtractorFailure, "extraction"
        )

    if config.max_workers > 1 and len(requests) > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            return list(pool.map(one, requests))
    return [one(r) for r in requests]


def run_autodeid_many(
    texts: Sequence[str],
    config: ExtractionConfig,
    extractor: Extractor,
    *,
    sleep: Callable[[float], None] = time.sleep,
    traces: list[ExtractionTrace] | None = None,
) -> list[FactDictionary]:
    """Multi-pass extraction over several independent texts, sharing each pass's requests.

    Each text keeps its own dictionary, so the result for a text does not
    depend on what it was batched with.
    """
    chunked = [chunk_text(t, config) for t in texts]
    facts = [FactDictionary() for _ in texts]
    local = [ExtractionTrace() for _ in texts]
    for j in range(config.passes):
        pass_index = j + 1
        requests, owners = [], []
        for ti, chunks in enumerate(chunked):
            for c in chunks:
                body = c.text if j == 0 else mask_known(c.text, facts[ti])
                requests.append((body, config.entity_types, pass_index))
                owners.append(ti)
        responses = _dispatch(extractor, requests, config, sleep) if requests else []
        if len(responses) != len(requests):
            raise ExtractorFailure("extractor returned a different number of responses than requests")
        for (body, _, _), ti, resp in zip(requests, owners, responses):
            kept, dropped = validate_mentions(parse_response(resp), body, config.entity_types)
            facts[ti].update(kept)
            local[ti].dropped += dropped
            local[ti].requests += 1
        for ti in range(len(texts)):
            local[ti].sizes.append(len(facts[ti]))
            local[ti].snapshots.append(facts[ti].keys())
        logger.debug("pass %d: %d request(s)", pass_index, len(requests))
    if traces is not None:
        traces.extend(local)
    return facts


def run_autodeid(
    text: str,
    config: ExtractionConfig,
    extractor: Extractor,
    *,
    sleep: Callable[[float], None] = time.sleep,
    trace: ExtractionTrace | None = None,
) -> FactDictionary:
    traces: list[ExtractionTrace] = []
    facts = run_autodeid_many([text], config, extractor, sleep=sleep, traces=traces)[0]
    if trace is not None:
        trace.sizes, trace.snapshots = traces[0].sizes, traces[0].snapshots
        trace.dropped, trace.requests = traces[0].dropped, traces[0].requests
    return facts
