"""Realizations of the model-backed roles: extractor, decider, generator, gap classifier.

Scripted agents replay canned answers and make runs reproducible offline.
Heuristic agents are simple deterministic stand-ins usable without a model.
Remote agents speak JSON over HTTP to an operator-supplied endpoint.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import httpx
import jsonschema

from .errors import (
    AgentError,
    AgentTimeout,
    AuthFailure,
    ClassifierFailure,
    ExtractorFailure,
    GenerationFailure,
    MalformedResponse,
)
from .facts import normalize
from .relex import HONORIFICS, PATTERN_TYPES, ReplacementQuery, digit_pattern, honorific
from .relex_index import ReplacementRecord

logger = logging.getLogger(__name__)


def fingerprint(text: str) -> str:
    """Stable request key for a chunk, insensitive to case and whitespace runs."""
    return hashlib.sha256(normalize(text).encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------- scripted


class ScriptedExtractor:
    """Replays responses keyed by chunk fingerprint, then by pass index, then ``"*"``.

    Unmatched requests return ``{}`` unless ``strict`` is set.
    """

    def __init__(self, responses: Mapping[Any, Mapping[str, list]], strict: bool = False):
        self.responses = dict(responses)
        self.strict = strict
        self.calls: list[tuple[str, int]] = []

    def extract(self, chunk_text, entity_types, pass_index):
        self.calls.append((fingerprint(chunk_text), pass_index))
        for key in (fingerprint(chunk_text), pass_index, str(pass_index), "*"):
            if key in self.responses:
                return self.responses[key]
        if self.strict:
            raise ExtractorFailure("no scripted response for request")
        return {}


class ScriptedDecider:
    """``clusters`` maps entity type to surface groups; ``verdicts`` maps the normalized
    query canonical to a bool. Without a scripted verdict a stored surrogate is accepted
    only if it was stored for the same original (``default_verdict`` overrides that)."""

    def __init__(
        self,
        clusters: Mapping[str, Sequence[Sequence[str]]] | None = None,
        verdicts: Mapping[str, bool] | None = None,
        default_verdict: bool | None = None,
    ):
        self.clusters = {k: [list(g) for g in v] for k, v in (clusters or {}).items()}
        self.verdicts = {normalize(k): v for k, v in (verdicts or {}).items()}
        self.default_verdict = default_verdict

    def cluster(self, text, entity_type, surfaces):
        return self.clusters.get(entity_type, [[s] for s in surfaces])

    def validate(self, query, candidate, context):
        key = normalize(query.canonical)
        if key in self.verdicts:
            return bool(self.verdicts[key])
        if self.default_verdict is not None:
            return self.default_verdict
        return normalize(candidate.original_canonical) == key


class ScriptedGenerator:
    def __init__(self, mapping: Mapping[str, str], fallback=None):
        self.mapping = {normalize(k): v for k, v in mapping.items()}
        self.fallback = fallback
        self.calls: list[str] = []

    def generate(self, query, context):
        self.calls.append(query.canonical)
        key = normalize(query.canonical)
        if key in self.mapping:
            return self.mapping[key]
        if self.fallback is not None:
            return self.fallback.generate(query, context)
        raise GenerationFailure(f"{query.entity_type}: no scripted surrogate")


class ScriptedGapClassifier:
    """Verdicts keyed by marker string or by ``(start_s, end_s)``; ``fail`` raises every call."""

    def __init__(self, verdicts: Mapping[Any, Any] | None = None, fail: bool = False):
        self.verdicts = dict(verdicts or {})
        self.fail = fail
        self.calls = 0

    def classify(self, transcript, markers):
        from .audio import format_timestamp

        self.calls += 1
        if self.fail:
            raise ClassifierFailure("scripted classifier failure")
        out = {}
        for marker in markers:
            if marker in self.verdicts:
                out[marker] = self.verdicts[marker]
                continue
            for key, v in self.verdicts.items():
                if isinstance(key, tuple):
                    stamp = f"({format_timestamp(key[0])} - {format_timestamp(key[1])})"
                    if stamp in marker:
                        out[marker] = v
        return out


# --------------------------------------------------------------------------- heuristic


def _name_tokens(s: str) -> list[str]:
    return [t.strip(".,").casefold() for t in s.split() if t.casefold() not in HONORIFICS]


class HeuristicDecider:
    """Groups surfaces whose name tokens are a subset of a longer surface's tokens.

    Validation accepts a stored surrogate only when its honorific and format agree
    with the query and it was stored for the same normalized original.
    """

    def cluster(self, text, entity_type, surfaces):
        order = sorted(surfaces, key=lambda s: (-len(_name_tokens(s)), -len(s), s))
        groups: list[list[str]] = []
        heads: list[set[str]] = []
        for s in order:
            toks = set(_name_tokens(s))
            for g, head in zip(groups, heads):
                if toks and toks <= head:
                    g.append(s)
                    break
            else:
                groups.append([s])
                heads.append(toks)
        return groups

    def validate(self, query, candidate, context):
        if normalize(candidate.original_canonical) != normalize(query.canonical):
            return False
        want = query.attributes.get("honorific")
        if want and honorific(candidate.replacement) is None:
            return False
        fmt = query.attributes.get("format")
        return not fmt or digit_pattern(candidate.replacement) == fmt


_FIRST = ("Alex", "Jordan", "Taylor", "Morgan", "Casey", "Riley", "Avery", "Quinn", "Jamie", "Dana")
_LAST = ("Rivera", "Chen", "Patel", "Novak", "Okafor", "Lindqvist", "Moreau", "Tanaka", "Haddad", "Kowalski")
_ORG = ("Northfield Clinic", "Lakeside Health Center", "Summit Medical Group", "Riverbend Hospital")
_PLACE = ("Fairview", "Oak Ridge", "Maple Falls", "Cedar Grove", "Brookside")


class DeterministicGenerator:
    """Offline surrogate maker. Pattern types are resampled character class by class;
    names and places come from small fixed lists. Seeded by HMAC of the canonical."""

    def __init__(self, key: bytes = b""):
        self.key = key

    def _rng(self, query: ReplacementQuery, attempt: int = 0) -> random.Random:
        msg = f"{query.domain}\x00{query.entity_type}\x00{normalize(query.canonical)}\x00{attempt}"
        return random.Random(hmac.new(self.key, msg.encode("utf-8"), hashlib.sha256).digest())

    def generate(self, query, context):
        for attempt in range(8):
            out = self._one(query, self._rng(query, attempt))
            if normalize(out) != normalize(query.canonical):
                return out
        raise GenerationFailure(f"{query.entity_type}: could not produce a distinct surrogate")

    def _one(self, query, rng: random.Random) -> str:
        c = query.canonical
        if query.entity_type in PATTERN_TYPES or any(ch.isdigit() for ch in c):
            out = []
            for ch in c:
                if ch.isdigit():
                    out.append(str(rng.randrange(10)))
                elif ch.isalpha():
                    letter = chr(ord("A") + rng.randrange(26))
                    out.append(letter if ch.isupper() else letter.lower())
                else:
                    out.append(ch)
            return "".join(out)
        if query.entity_type == "PERSON":
            prefix = query.attributes.get("honorific")
            parts = [rng.choice(_FIRST), rng.choice(_LAST)]
            n = len(_name_tokens(c))
            parts = parts[-n:] if n == 1 else parts
            return " ".join(([prefix] if prefix else []) + parts)
        if query.entity_type in ("ORGANIZATION", "PHARMACY", "DIAGNOSTIC_LABS"):
            return rng.choice(_ORG)
        if query.entity_type in ("LOCATION", "ADDRESS"):
            return rng.choice(_PLACE)
        return f"{query.entity_type.lower().replace('_', ' ')} {rng.randrange(1000)}"


# --------------------------------------------------------------------------- remote

_MENTION = {
    "type": "object",
    "properties": {"surface": {"type": "string"}, "context_hint": {"type": "string"}},
    "required": ["surface"],
    "additionalProperties": False,
}
# Responses carry entities and hints only; no rewritten text can come back.
EXTRACT_RESPONSE = {"type": "object", "additionalProperties": {"type": "array", "items": _MENTION}}
EXTRACT_BATCH_RESPONSE = {
    "type": "object",
    "properties": {"responses": {"type": "array", "items": EXTRACT_RESPONSE}},
    "required": ["responses"],
    "additionalProperties": False,
}
CLUSTER_RESPONSE = {
    "type": "object",
    "properties": {"clusters": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}}},
    "required": ["clusters"],
    "additionalProperties": False,
}
VALIDATE_RESPONSE = {
    "type": "object",
    "properties": {"valid": {"type": "boolean"}},
    "required": ["valid"],
    "additionalProperties": False,
}
GENERATE_RESPONSE = {
    "type": "object",
    "properties": {"replacement": {"type": "string", "minLength": 1}},
    "required": ["replacement"],
    "additionalProperties": False,
}
CLASSIFY_RESPONSE = {
    "type": "object",
    "properties": {
        "verdicts": {"type": "object", "additionalProperties": {"type": "string", "enum": ["PHI", "NON-PHI"]}}
    },
    "required": ["verdicts"],
    "additionalProperties": False,
}


@dataclass
class EndpointSettings:
    url: str = ""
    token_env: str = "DEIDKIT_API_TOKEN"
    timeout_s: float = 30.0
    retries: int = 3
    backoff_s: float = 0.5


@dataclass
class RemoteAgent:
    """POSTs ``{task, payload}`` JSON to ``{url}/{task}`` and validates the reply.

    Retry policy: timeouts and transport/server errors up to ``retries`` attempts,
    malformed replies retried once, auth rejections never. Payloads are never logged.
    """

    settings: EndpointSettings
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep
    _client: httpx.Client | None = field(default=None, init=False, repr=False)

    def _http(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(transport=self.transport, timeout=self.settings.timeout_s)
        return self._client

    def _headers(self) -> dict:
        token = os.environ.get(self.settings.token_env, "")
        return {"Authorization": f"Bearer {token}"} if token else {}

    def call(self, task: str, payload: dict, schema: dict) -> Any:
        if not self.settings.url:
            raise AgentError("no endpoint URL configured")
        url = self.settings.url.rstrip("/") + "/" + task
        attempts = max(1, self.settings.retries)
        malformed = 0
        last: Exception | None = None
        attempt = 0
        while attempt < attempts:
            attempt += 1
            try:
                resp = self._http().post(url, json=payload, headers=self._headers())
            except httpx.TimeoutException as exc:
                last = AgentTimeout(f"{task}: timed out")
                logger.warning("%s attempt %d/%d timed out", task, attempt, attempts)
            except httpx.HTTPError as exc:
                last = AgentError(f"{task}: transport error ({type(exc).__name__})")
                logger.warning("%s attempt %d/%d transport error", task, attempt, attempts)
            else:
                if resp.status_code in (401, 403):
                    raise AuthFailure(f"{task}: endpoint rejected credentials ({resp.status_code})")
                if resp.status_code >= 400:
                    last = AgentError(f"{task}: endpoint returned HTTP {resp.status_code}")
                    logger.warning("%s attempt %d/%d HTTP %d", task, attempt, attempts, resp.status_code)
                else:
                    try:
                        body = resp.json()
                        jsonschema.validate(body, schema)
                        return body
                    except (json.JSONDecodeError, ValueError, jsonschema.ValidationError):
                        malformed += 1
                        last = MalformedResponse(f"{task}: response failed schema validation")
                        logger.warning("%s attempt %d returned a malformed response", task, attempt)
                        if malformed >= 2:
                            raise last from None
                        # a malformed reply earns exactly one more try
                        attempts = max(attempts, attempt + 1)
            if attempt < attempts:
                self.sleep(self.settings.backoff_s * (2 ** (attempt - 1)))
        assert last is not None
        raise last

    def close(self):
        if self._client is not None:
            self._client.close()
            self._client = None


class RemoteExtractor:
    def __init__(self, agent: RemoteAgent):
        self.agent = agent

    def extract(self, chunk_text, entity_types, pass_index):
        payload = {"chunk_text": chunk_text, "entity_types": list(entity_types), "pass_index": pass_index}
        return self.agent.call("extract", payload, EXTRACT_RESPONSE)

    def extract_batch(self, requests):
        payload = {
            "requests": [
                {"chunk_text": t, "entity_types": list(types), "pass_index": p} for t, types, p in requests
            ]
        }
        body = self.agent.call("extract_batch", payload, EXTRACT_BATCH_RESPONSE)
        if len(body["responses"]) != len(requests):
            raise MalformedResponse("extract_batch: response count does not match request count")
        return body["responses"]


class RemoteDecider:
    def __init__(self, agent: RemoteAgent):
        self.agent = agent

    def cluster(self, text, entity_type, surfaces):
        payload = {"context": text, "entity_type": entity_type, "surfaces": list(surfaces)}
        return self.agent.call("cluster", payload, CLUSTER_RESPONSE)["clusters"]

    def validate(self, query: ReplacementQuery, candidate: ReplacementRecord, context: str):
        # the stored original belongs to another document and is never sent
        payload = {
            "query": query.to_dict(),
            "candidate": {"replacement": candidate.replacement, "entity_type": candidate.entity_type},
            "context": context,
        }
        return self.agent.call("validate", payload, VALIDATE_RESPONSE)["valid"]


class RemoteGenerator:
    def __init__(self, agent: RemoteAgent):
        self.agent = agent

    def generate(self, query, context):
        payload = {"query": query.to_dict(), "context": context}
        return self.agent.call("generate", payload, GENERATE_RESPONSE)["replacement"]


class RemoteGapClassifier:
    def __init__(self, agent: RemoteAgent):
        self.agent = agent

    def classify(self, transcript, markers):
        payload = {"transcript": transcript, "markers": list(markers)}
        return self.agent.call("classify_gaps", payload, CLASSIFY_RESPONSE)["verdicts"]
