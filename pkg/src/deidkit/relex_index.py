"""Replacement store: canonical entity -> surrogate, searchable by embedding with metadata filters."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import IndexUnavailable
from .facts import normalize

logger = logging.getLogger(__name__)

EMBED_DIM = 256


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class TrigramEmbedder:
    """Character trigrams hashed into ``dim`` buckets, L2-normalized. Offline and deterministic."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        s = f" {normalize(text)} "
        for i in range(len(s) - 2):
            h = hashlib.blake2b(s[i : i + 3].encode("utf-8"), digest_size=8).digest()
            v[int.from_bytes(h, "little") % self.dim] += 1.0
        n = np.linalg.norm(v)
        return v / n if n else v


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class ReplacementRecord:
    original_canonical: str
    replacement: str
    entity_type: str
    domain: str
    embedding: tuple[float, ...] = field(repr=False)
    created_at: str = field(default_factory=_now)

    def __post_init__(self):
        if normalize(self.replacement) == normalize(self.original_canonical):
            raise ValueError("replacement must differ from the original")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["embedding"] = list(self.embedding)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReplacementRecord":
        return cls(
            d["original_canonical"],
            d["replacement"],
            d["entity_type"],
            d["domain"],
            tuple(float(x) for x in d["embedding"]),
            d.get("created_at", ""),
        )


class RelexIndex(Protocol):
    def ingest(self, record: ReplacementRecord) -> None: ...

    def search(
        self, embedding: Sequence[float], entity_type: str, domain: str, k: int = 1
    ) -> list[tuple[float, ReplacementRecord]]: ...


class InMemoryIndex:
    """Exact cosine search over every record passing the type/domain filter."""

    def __init__(self, records: Sequence[ReplacementRecord] = ()):
        self._records: list[ReplacementRecord] = []
        self._lock = threading.Lock()
        for r in records:
            self._append(r)

    def __len__(self):
        return len(self._records)

    def records(self) -> list[ReplacementRecord]:
        return list(self._records)

    def _append(self, record: ReplacementRecord):
        self._records.append(record)

    def ingest(self, record: ReplacementRecord) -> None:
        with self._lock:
            self._append(record)

    def search(self, embedding, entity_type, domain, k=1):
        q = np.asarray(embedding, dtype=np.float64)
        qn = np.linalg.norm(q)
        scored = []
        for r in self._records:
            if r.entity_type != entity_type or r.domain != domain:
                continue
            e = np.asarray(r.embedding, dtype=np.float64)
            en = np.linalg.norm(e)
            score = float(q @ e / (qn * en)) if qn and en else 0.0
            scored.append((score, r))
        # stable sort: the earliest-ingested record wins ties
        scored.sort(key=lambda t: -t[0])
        return scored[:k]


class FileIndex(InMemoryIndex):
    """InMemoryIndex persisted as an append-only JSON-lines file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        records = []
        if self.path.exists():
            try:
                with self.path.open(encoding="utf-8") as fh:
                    for lineno, line in enumerate(fh, 1):
                        if line.strip():
                            records.append(ReplacementRecord.from_dict(json.loads(line)))
            except (OSError, ValueError, KeyError) as exc:
                raise IndexUnavailable(f"{self.path}: unreadable index ({type(exc).__name__})") from None
        super().__init__(records)

    def ingest(self, record: ReplacementRecord) -> None:
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            except OSError as exc:
                raise IndexUnavailable(f"{self.path}: cannot append ({exc.strerror})") from None
            self._append(record)
