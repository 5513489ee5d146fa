"""Entity-level scoring of predicted PHI spans against gold annotations.

A prediction counts only if it overlaps the gold span, its text is close
enough under normalized Levenshtein similarity, and (optionally) its type
agrees. Matching is one-to-one and greedy by similarity.
"""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import kernels
from .errors import SpanFileError
from .facts import normalize


@dataclass(frozen=True)
class SpanLabel:
    doc_id: str
    start: int
    end: int
    text: str
    entity_type: str

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("span must satisfy start < end")

    def to_dict(self) -> dict:
        return asdict(self)


class Granularity(str, enum.Enum):
    PER_DOCUMENT = "per_document"
    PER_DOCUMENT_AND_TYPE = "per_document_and_type"


@dataclass(frozen=True)
class MatchCriteria:
    require_type: bool = True
    require_position: bool = True
    similarity_threshold: float = 0.6
    min_overlap: int = 1
    containment: bool = False
    type_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in [0, 1]")
        if self.min_overlap < 1:
            raise ValueError("min_overlap must be >= 1")

    def canonical_type(self, t: str) -> str:
        return self.type_map.get(t, t)

    def position_ok(self, g: SpanLabel, p: SpanLabel) -> bool:
        if self.containment:
            return (g.start <= p.start and p.end <= g.end) or (p.start <= g.start and g.end <= p.end)
        return min(g.end, p.end) - max(g.start, p.start) >= self.min_overlap


def levenshtein_similarity(a: str, b: str) -> float:
    """``1 - d / max(len)`` over case-folded, whitespace-collapsed strings; 1 for two empties."""
    a, b = normalize(a), normalize(b)
    m = max(len(a), len(b))
    if m == 0:
        return 1.0
    return 1.0 - kernels.levenshtein(a, b) / m


@dataclass
class Matching:
    tp: list[tuple[SpanLabel, SpanLabel]] = field(default_factory=list)
    fp: list[SpanLabel] = field(default_factory=list)
    fn: list[SpanLabel] = field(default_factory=list)


def _match_doc(gold: Sequence[SpanLabel], pred: Sequence[SpanLabel], c: MatchCriteria, out: Matching):
    candidates = []
    for gi, g in enumerate(gold):
        for pi, p in enumerate(pred):
            if c.require_position and not c.position_ok(g, p):
                continue
            if c.require_type and c.canonical_type(g.entity_type) != c.canonical_type(p.entity_type):
                continue
            sim = levenshtein_similarity(g.text, p.text)
            if sim >= c.similarity_threshold:
                candidates.append((-sim, g.start, gi, p.start, pi))
    candidates.sort()
    used_g, used_p = set(), set()
    for _, _, gi, _, pi in candidates:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        out.tp.append((gold[gi], pred[pi]))
    out.fn.extend(g for i, g in enumerate(gold) if i not in used_g)
    out.fp.extend(p for i, p in enumerate(pred) if i not in used_p)


def _by_doc(spans: Iterable[SpanLabel]) -> dict[str, list[SpanLabel]]:
    out: dict[str, list[SpanLabel]] = defaultdict(list)
    for s in spans:
        out[s.doc_id].append(s)
    return out


def match_entities(gold: Sequence[SpanLabel], pred: Sequence[SpanLabel], criteria: MatchCriteria = MatchCriteria()) -> Matching:
    g, p = _by_doc(gold), _by_doc(pred)
    out = Matching()
    for doc in sorted(set(g) | set(p)):
        _match_doc(g.get(doc, []), p.get(doc, []), criteria, out)
    return out


@dataclass
class Scores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    precision_undefined: bool = False
    recall_undefined: bool = False
    all_or_nothing_recall: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def scores_from_counts(tp: int, fp: int, fn: int) -> Scores:
    """Empty denominators give 0 and raise the matching ``*_undefined`` flag."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return Scores(p, r, f, tp, fp, fn, tp + fp == 0, tp + fn == 0)


def precision_recall_f1(matching: Matching) -> Scores:
    return scores_from_counts(len(matching.tp), len(matching.fp), len(matching.fn))


def _units(matching: Matching, criteria: MatchCriteria, granularity: Granularity, types):
    """unit key -> [matched gold count, total gold count]."""
    units: dict[tuple, list[int]] = defaultdict(lambda: [0, 0])

    def key(g: SpanLabel):
        t = criteria.canonical_type(g.entity_type)
        if types is not None and t not in types:
            return None
        return (g.doc_id, t) if granularity == Granularity.PER_DOCUMENT_AND_TYPE else (g.doc_id,)

    for g, _ in matching.tp:
        k = key(g)
        if k is not None:
            units[k][0] += 1
            units[k][1] += 1
    for g in matching.fn:
        k = key(g)
        if k is not None:
            units[k][1] += 1
    return units


def all_or_nothing_recall(
    gold: Sequence[SpanLabel],
    pred: Sequence[SpanLabel],
    criteria: MatchCriteria = MatchCriteria(),
    granularity: Granularity | str = Granularity.PER_DOCUMENT,
    types: Iterable[str] | None = None,
    matching: Matching | None = None,
) -> float:
    """Mean over units with at least one gold span of ``1[every gold span in the unit matched]``.

    ``types`` restricts the gold spans considered (after type mapping). No units gives 0.
    """
    granularity = Granularity(granularity)
    matching = matching if matching is not None else match_entities(gold, pred, criteria)
    units = _units(matching, criteria, granularity, None if types is None else set(types))
    if not units:
        return 0.0
    return sum(hit == total for hit, total in units.values()) / len(units)


@dataclass
class EvalReport:
    overall: Scores
    per_type: dict[str, Scores]
    per_document: dict[str, Scores]
    granularity: Granularity
    criteria: MatchCriteria

    def to_dict(self) -> dict:
        return {
            "granularity": self.granularity.value,
            "criteria": {
                "require_type": self.criteria.require_type,
                "require_position": self.criteria.require_position,
                "similarity_threshold": self.criteria.similarity_threshold,
                "min_overlap": self.criteria.min_overlap,
                "containment": self.criteria.containment,
            },
            "overall": self.overall.to_dict(),
            "per_type": {k: v.to_dict() for k, v in sorted(self.per_type.items())},
            "per_document": {k: v.to_dict() for k, v in sorted(self.per_document.items())},
        }

    def table(self) -> str:
        rows = [("Entity", "Precision", "Recall", "F1", "AoN Recall", "TP", "FP", "FN")]
        items = sorted(self.per_type.items()) + [("OVERALL", self.overall)]
        for name, s in items:
            aon = "-" if s.all_or_nothing_recall is None else f"{s.all_or_nothing_recall:.4f}"
            rows.append((name, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}", aon, str(s.tp), str(s.fp), str(s.fn)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def evaluate(
    gold: Sequence[SpanLabel],
    pred: Sequence[SpanLabel],
    criteria: MatchCriteria = MatchCriteria(),
    granularity: Granularity | str = Granularity.PER_DOCUMENT,
    types: Iterable[str] | None = None,
) -> EvalReport:
    granularity = Granularity(granularity)
    types = None if types is None else set(types)
    m = match_entities(gold, pred, criteria)
    overall = precision_recall_f1(m)
    overall.all_or_nothing_recall = all_or_nothing_recall(gold, pred, criteria, granularity, types, matching=m)

    counts: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0])
    docs: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0])
    ct = criteria.canonical_type
    for g, _ in m.tp:
        counts[ct(g.entity_type)][0] += 1
        docs[g.doc_id][0] += 1
    for p in m.fp:
        counts[ct(p.entity_type)][1] += 1
        docs[p.doc_id][1] += 1
    for g in m.fn:
        counts[ct(g.entity_type)][2] += 1
        docs[g.doc_id][2] += 1
    per_type = {}
    for t, (tp, fp, fn) in counts.items():
        s = scores_from_counts(tp, fp, fn)
        if tp + fn:
            s.all_or_nothing_recall = all_or_nothing_recall(gold, pred, criteria, Granularity.PER_DOCUMENT, {t}, matching=m)
        per_type[t] = s
    per_document = {d: scores_from_counts(*c) for d, c in docs.items()}
    return EvalReport(overall, per_type, per_document, granularity, criteria)


# --------------------------------------------------------------------------- span files

_FIELDS = ("doc_id", "start", "end", "text", "entity_type")


def _span_from(obj, where: str) -> SpanLabel:
    if not isinstance(obj, dict):
        raise SpanFileError(f"{where}: expected an object")
    missing = [k for k in _FIELDS if k not in obj]
    if missing:
        raise SpanFileError(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        return SpanLabel(str(obj["doc_id"]), int(obj["start"]), int(obj["end"]), str(obj["text"]), str(obj["entity_type"]))
    except (TypeError, ValueError) as exc:
        raise SpanFileError(f"{where}: {exc}") from None


def read_spans(path: str | Path) -> list[SpanLabel]:
    """JSON array of span objects, or JSON lines (``.jsonl``) with one span per line."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpanFileError(f"{path}: {exc.strerror}") from None
    if path.suffix == ".jsonl":
        out = []
        for lineno, line in enumerate(raw.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SpanFileError(f"{path}:{lineno}: {exc.msg}") from None
            out.append(_span_from(obj, f"{path}:{lineno}"))
        return out
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SpanFileError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(data, list):
        raise SpanFileError(f"{path}: expected a JSON array of spans")
    return [_span_from(obj, f"{path}[{i}]") for i, obj in enumerate(data)]


def write_spans(path: str | Path, spans: Iterable[SpanLabel]) -> None:
    path = Path(path)
    items = [s.to_dict() for s in spans]
    if path.suffix == ".jsonl":
        path.write_text("".join(json.dumps(i) + "\n" for i in items), encoding="utf-8")
    else:
        path.write_text(json.dumps(items, indent=2) + "\n", encoding="utf-8")


def read_type_map(path: str | Path) -> dict[str, str]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SpanFileError(f"{path}: unreadable type map ({type(exc).__name__})") from None
    if not isinstance(data, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in data.items()):
        raise SpanFileError(f"{path}: type map must be an object of strings")
    return data
