"""Consistent surrogate replacement for extracted entities.

For each group of coreferent mentions: look for an earlier surrogate in the
index, let the decider confirm it still fits, otherwise generate a fresh
one and store it. Members of a group then get forms of the same surrogate
("Wilson" -> "Chang" when "Dr. Adam Wilson" -> "Dr. Kevin Chang").
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import random
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .errors import DecisionFailure, FormatMismatch, GenerationFailure, RelexError, ResolutionError
from .facts import EntityMention, FactDictionary, normalize
from .redaction import ResolvedSpan, find_all, placeholder, redacted_offsets, resolve_all, splice
from .relex_index import Embedder, RelexIndex, ReplacementRecord, TrigramEmbedder
from .retry import call_with_retries

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.85
PATTERN_TYPES = frozenset(
    {
        "TELEPHONE_NUMBER",
        "FAX_NUMBER",
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
        "IP_ADDRESS",
        "ID",
        "CONTACT",
    }
)
DATE_TYPES = frozenset({"DATE", "BIRTH_DATE_TIME"})
DATE_FORMATS = ("%m/%d/%Y", "%Y-%m-%d", "%m-%d-%Y", "%B %d, %Y", "%b %d, %Y", "%d %B %Y", "%m/%d/%y")
DATE_SHIFT_TYPE = "DATE_SHIFT"
_DATE_SHIFT_KEY = "__date_shift__"
HONORIFICS = ("dr.", "dr", "mr.", "mr", "mrs.", "mrs", "ms.", "ms", "miss", "prof.", "prof")


def format_pattern(s: str) -> str:
    """Character-class shape: digits -> ``d``, letters -> ``A``/``a``, everything else kept."""
    out = []
    for ch in s:
        if ch.isdigit():
            out.append("d")
        elif ch.isalpha():
            out.append("A" if ch.isupper() else "a")
        else:
            out.append(ch)
    return "".join(out)


def digit_pattern(s: str) -> str:
    """Shape used for pattern-typed entities: digits abstracted, letters and punctuation kept
    only as classes (case-insensitive)."""
    return format_pattern(s).replace("a", "A")


def honorific(s: str) -> str | None:
    first = s.split()[0].casefold() if s.split() else ""
    return first if first in HONORIFICS else None


@dataclass
class EntityCluster:
    cluster_id: str
    entity_type: str
    members: list[EntityMention]
    canonical: str

    def surfaces(self) -> list[str]:
        seen, out = set(), []
        for m in self.members:
            k = normalize(m.surface)
            if k not in seen:
                seen.add(k)
                out.append(m.surface)
        return out


@dataclass(frozen=True)
class ReplacementQuery:
    canonical: str
    entity_type: str
    domain: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "canonical": self.canonical,
            "entity_type": self.entity_type,
            "domain": self.domain,
            "attributes": dict(self.attributes),
        }


class Decider(Protocol):
    def cluster(self, text: str, entity_type: str, surfaces: Sequence[str]) -> list[list[str]]: ...

    def validate(self, query: ReplacementQuery, candidate: ReplacementRecord, context: str) -> bool: ...


class Generator(Protocol):
    def generate(self, query: ReplacementQuery, context: str) -> str: ...


def query_attributes(canonical: str, entity_type: str) -> dict[str, str]:
    attrs = {}
    h = honorific(canonical)
    if h:
        attrs["honorific"] = canonical.split()[0]
    if entity_type in PATTERN_TYPES:
        attrs["format"] = digit_pattern(canonical)
    return attrs


def _canonical(surfaces: Iterable[str]) -> str:
    return sorted(surfaces, key=lambda s: (-len(s), s))[0]


def _partition(groups, surfaces: list[str]) -> list[list[str]]:
    """Sanitize a decider's grouping into a partition of ``surfaces``."""
    by_norm = {normalize(s): s for s in surfaces}
    placed: set[str] = set()
    out = []
    for group in groups or ():
        g = []
        for s in group:
            k = normalize(str(s))
            if k in by_norm and k not in placed:
                placed.add(k)
                g.append(by_norm[k])
        if g:
            out.append(g)
    out.extend([s] for k, s in by_norm.items() if k not in placed)
    return out


def cluster_entities(
    text: str,
    facts: FactDictionary | Iterable[EntityMention],
    decider: Decider,
    *,
    retries: int = 3,
    backoff_s: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> list[EntityCluster]:
    by_type: dict[str, list[EntityMention]] = {}
    for m in facts:
        by_type.setdefault(m.entity_type, []).append(m)
    clusters = []
    for etype, mentions in by_type.items():
        surfaces = list({normalize(m.surface): m.surface for m in mentions}.values())
        if len(surfaces) == 1:
            groups = [surfaces]
        else:
            raw = call_with_retries(
                lambda: decider.cluster(text, etype, list(surfaces)),
                retries,
                backoff_s,
                sleep,
                DecisionFailure,
                "clustering",
            )
            groups = _partition(raw, surfaces)
        for i, group in enumerate(groups):
            keys = {normalize(s) for s in group}
            members = [m for m in mentions if normalize(m.surface) in keys]
            clusters.append(EntityCluster(f"{etype}:{i}", etype, members, _canonical(group)))
    return clusters


def retrieve_replacement(
    query: ReplacementQuery,
    index: RelexIndex,
    embedder: Embedder | None = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> ReplacementRecord | None:
    embedder = embedder or TrigramEmbedder()
    hits = index.search(embedder.embed(query.canonical), query.entity_type, query.domain, k=1)
    if not hits:
        return None
    score, record = hits[0]
    return record if score >= threshold else None


def validate_replacement(
    query: ReplacementQuery,
    candidate: ReplacementRecord,
    text: str,
    decider: Decider,
    *,
    retries: int = 3,
    backoff_s: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> bool:
    if normalize(candidate.replacement) == normalize(query.canonical):
        return False
    if candidate.entity_type != query.entity_type or candidate.domain != query.domain:
        return False
    if query.entity_type in PATTERN_TYPES and digit_pattern(candidate.replacement) != digit_pattern(query.canonical):
        return False
    verdict = call_with_retries(
        lambda: decider.validate(query, candidate, text), retries, backoff_s, sleep, DecisionFailure, "validation"
    )
    if not isinstance(verdict, bool):
        raise DecisionFailure("decider returned a non-boolean verdict")
    return verdict


def generate_replacement(
    query: ReplacementQuery,
    text: str,
    generator: Generator,
    embedder: Embedder | None = None,
    *,
    retries: int = 3,
    backoff_s: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> ReplacementRecord:
    embedder = embedder or TrigramEmbedder()

    def attempt():
        out = generator.generate(query, text)
        if not isinstance(out, str) or not out.strip():
            raise GenerationFailure("generator returned no surrogate")
        out = out.strip()
        if normalize(out) == normalize(query.canonical):
            raise GenerationFailure("generator echoed the original")
        if query.entity_type in PATTERN_TYPES and digit_pattern(out) != digit_pattern(query.canonical):
            raise FormatMismatch(f"{query.entity_type}: surrogate does not keep the original format")
        return out

    try:
        surrogate = call_with_retries(attempt, retries, backoff_s, sleep, GenerationFailure, "generation")
    except GenerationFailure as exc:
        if isinstance(exc.__cause__, FormatMismatch):
            raise FormatMismatch(str(exc.__cause__)) from exc.__cause__
        raise
    return ReplacementRecord(
        original_canonical=query.canonical,
        replacement=surrogate,
        entity_type=query.entity_type,
        domain=query.domain,
        embedding=tuple(float(x) for x in embedder.embed(query.canonical)),
    )


def _tok(s: str) -> str:
    return s.casefold().strip(".,;:")


def adjust_member(member: str, canonical: str, surrogate: str) -> str:
    """Form of ``surrogate`` for a shorter ``member`` of the cluster, by aligning name parts."""
    if normalize(member) == normalize(canonical):
        return surrogate
    c, m, r = canonical.split(), member.split(), surrogate.split()
    pos, j = [], 0
    for i, tok in enumerate(c):
        if j < len(m) and _tok(tok) == _tok(m[j]):
            pos.append(i)
            j += 1
    if j != len(m) or not m:
        return surrogate
    if len(r) == len(c):
        return " ".join(r[i] for i in pos)
    contiguous = pos == list(range(pos[0], pos[0] + len(m)))
    if contiguous and pos[-1] == len(c) - 1 and len(r) >= len(m):
        return " ".join(r[-len(m) :])
    if contiguous and pos[0] == 0 and len(r) >= len(m):
        return " ".join(r[: len(m)])
    return surrogate


def shift_date(s: str, days: int) -> str | None:
    for fmt in DATE_FORMATS:
        try:
            d = datetime.strptime(s.strip(), fmt)
        except ValueError:
            continue
        return (d + timedelta(days=days)).strftime(fmt)
    return None


def context_window(text: str, surface: str, words: int = 50) -> str:
    hits = find_all(text, surface)
    if not hits:
        return text
    tokens = [m.span() for m in re.finditer(r"\S+", text)]
    s, e = hits[0]
    idx = [i for i, (a, b) in enumerate(tokens) if b > s and a < e]
    if not idx:
        return text
    lo = max(0, idx[0] - words)
    hi = min(len(tokens), idx[-1] + words + 1)
    return text[tokens[lo][0] : tokens[hi - 1][1]]


@dataclass
class RelexPlan:
    clusters: list[EntityCluster]
    surrogates: dict[str, str] = field(default_factory=dict)
    date_offset: int | None = None
    _cluster_of: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for c in self.clusters:
            for m in c.members:
                self._cluster_of[m.key] = c

    def cluster_of(self, mention: EntityMention) -> EntityCluster | None:
        return self._cluster_of.get(mention.key)

    def replacement_for(self, mention: EntityMention) -> str:
        cluster = self._cluster_of[mention.key]
        if cluster.entity_type in DATE_TYPES and self.date_offset is not None:
            shifted = shift_date(mention.surface, self.date_offset)
            if shifted is not None:
                return shifted
        return adjust_member(mention.surface, cluster.canonical, self.surrogates[cluster.cluster_id])

    def pairs(self, spans: Iterable[ResolvedSpan]) -> list[tuple[str, str]]:
        """``(original canonical, surrogate)`` for every span, for consistency scoring."""
        out = []
        for s in spans:
            c = self._cluster_of.get(s.mention.key) if s.mention else None
            if c is not None and c.cluster_id in self.surrogates:
                out.append((c.canonical, self.surrogates[c.cluster_id]))
        return out


@dataclass
class RelexResult:
    text: str
    plan: RelexPlan
    spans: list[ResolvedSpan]

    def __str__(self):
        return self.text


class Relexicalizer:
    """Holds the index and agents for one domain. ``plan`` is serialized per instance."""

    def __init__(
        self,
        index: RelexIndex,
        decider: Decider,
        generator: Generator,
        embedder: Embedder | None = None,
        *,
        domain: str = "default",
        domain_key: bytes = b"",
        threshold: float = DEFAULT_THRESHOLD,
        window_words: int = 50,
        retries: int = 3,
        backoff_s: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.index = index
        self.decider = decider
        self.generator = generator
        self.embedder = embedder or TrigramEmbedder()
        self.domain = domain
        self.domain_key = domain_key
        self.threshold = threshold
        self.window_words = window_words
        self._retry = dict(retries=retries, backoff_s=backoff_s, sleep=sleep)
        self._lock = threading.Lock()

    def _date_offset(self) -> int:
        probe = self.embedder.embed(_DATE_SHIFT_KEY)
        hits = self.index.search(probe, DATE_SHIFT_TYPE, self.domain, k=1)
        if hits and hits[0][0] >= 0.999:
            return int(hits[0][1].replacement)
        seed = hmac.new(self.domain_key, self.domain.encode("utf-8"), hashlib.sha256).digest()
        offset = random.Random(seed).choice([d for d in range(-30, 31) if d != 0])
        self.index.ingest(
            ReplacementRecord(_DATE_SHIFT_KEY, str(offset), DATE_SHIFT_TYPE, self.domain, tuple(float(x) for x in probe))
        )
        return offset

    def _surrogate(self, cluster: EntityCluster, text: str) -> str:
        window = context_window(text, cluster.members[0].surface, self.window_words) if text else ""
        query = ReplacementQuery(
            cluster.canonical, cluster.entity_type, self.domain, query_attributes(cluster.canonical, cluster.entity_type)
        )
        found = retrieve_replacement(query, self.index, self.embedder, self.threshold)
        if found is not None and validate_replacement(query, found, window, self.decider, **self._retry):
            return found.replacement
        record = generate_replacement(query, window, self.generator, self.embedder, **self._retry)
        self.index.ingest(record)
        return record.replacement

    def plan(self, text: str, facts: FactDictionary | Iterable[EntityMention], needed=None) -> RelexPlan:
        """Cluster ``facts`` and pick a surrogate for every cluster with a member in ``needed``
        (mention keys; ``None`` means all)."""
        with self._lock:
            clusters = cluster_entities(text, facts, self.decider, **self._retry)
            plan = RelexPlan(clusters)
            failures = []
            for c in clusters:
                if needed is not None and not any(m.key in needed for m in c.members):
                    continue
                try:
                    if c.entity_type in DATE_TYPES:
                        if plan.date_offset is None:
                            plan.date_offset = self._date_offset()
                        if all(shift_date(m.surface, plan.date_offset) for m in c.members):
                            plan.surrogates[c.cluster_id] = shift_date(c.canonical, plan.date_offset)
                            continue
                    plan.surrogates[c.cluster_id] = self._surrogate(c, text)
                except RelexError as exc:
                    failures.append((c.entity_type, type(exc).__name__))
            if failures:
                kinds = ", ".join(sorted({f"{t}/{e}" for t, e in failures}))
                raise RelexError(f"relexicalization aborted: {len(failures)} cluster(s) failed ({kinds})")
            return plan

    def relexicalize(self, text: str, facts: FactDictionary | Iterable[EntityMention]) -> RelexResult:
        facts = list(facts)
        spans, unresolved, _ = resolve_all(text, facts)
        if unresolved:
            logger.warning("relex: %d mention(s) could not be located", len(unresolved))
        plan = self.plan(text, facts, needed={s.mention.key for s in spans})
        out = splice(text, spans, lambda s: plan.replacement_for(s.mention))
        return RelexResult(out, plan, spans)

    def relexicalize_redacted(self, redacted: str, spans: list[ResolvedSpan], plan: RelexPlan) -> str:
        """Fill the placeholders of an already redacted text using ``spans`` from the redaction."""
        pieces = []
        last = 0
        for span, (a, b) in zip(sorted(spans, key=lambda s: s.start), redacted_offsets(spans)):
            if redacted[a:b] != placeholder(span.entity_type):
                raise ResolutionError("redacted text does not line up with its span list")
            pieces.append(redacted[last:a])
            pieces.append(plan.replacement_for(span.mention))
            last = b
        pieces.append(redacted[last:])
        return "".join(pieces)


def relexicalize(
    text: str,
    facts: FactDictionary | Iterable[EntityMention],
    index: RelexIndex,
    decider: Decider,
    generator: Generator,
    embedder: Embedder | None = None,
    *,
    domain: str = "default",
    **kwargs,
) -> str:
    return Relexicalizer(index, decider, generator, embedder, domain=domain, **kwargs).relexicalize(text, facts).text


def replacement_consistency_score(documents: Sequence[Iterable[tuple[str, str]]]) -> float:
    """Fraction of original entities that received one and the same surrogate everywhere.

    ``documents`` holds, per document, ``(original, surrogate)`` pairs. Originals
    compare after case/whitespace normalization. An empty corpus scores 1.0.
    """
    seen: dict[str, set[str]] = {}
    for doc in documents:
        for original, surrogate in doc:
            seen.setdefault(normalize(original), set()).add(surrogate)
    if not seen:
        return 1.0
    return sum(len(v) == 1 for v in seen.values()) / len(seen)
