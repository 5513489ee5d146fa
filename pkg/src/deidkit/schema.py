"""Schema registry and rule-based processing of structured records.

A schema lists every field of a record type together with one rule:
pass it through, replace it with a mask token, replace it with a keyed
hash, or hand it to the LLM-based extractor as free text.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    BatchTooLarge,
    EmptyValue,
    SchemaLoadError,
    UnknownDataType,
    UnreviewedSchema,
)

logger = logging.getLogger(__name__)

HASH_HEX_CHARS = 32
_MASK_TOKEN = re.compile(r"^\[[A-Z][A-Z0-9_]*\]$")
_COMPOSITE_FIELD = re.compile(r"^r(\d+)\.(.+)$")


class Rule(str, enum.Enum):
    PASS_THROUGH = "PassThrough"
    SHOULD_MASK = "ShouldMask"
    SHOULD_HASH = "ShouldHash"
    AUTO_DEID = "AutoDeID"


@dataclass(frozen=True)
class FieldRule:
    field_name: str
    rule: Rule
    mask_token: str | None = None
    description: str = ""

    def __post_init__(self):
        if self.rule is Rule.SHOULD_MASK:
            if not self.mask_token or not _MASK_TOKEN.match(self.mask_token):
                raise SchemaLoadError(f"field {self.field_name!r}: ShouldMask needs a mask token like [AGE]")
        elif self.mask_token is not None:
            raise SchemaLoadError(f"field {self.field_name!r}: mask token only allowed with ShouldMask")

    @property
    def entity_type(self) -> str | None:
        return self.mask_token[1:-1] if self.mask_token else None


@dataclass(frozen=True)
class Schema:
    data_type: str
    fields: tuple[FieldRule, ...]
    record_version: str = "1.0"
    reviewed: bool = False
    description: str = ""

    def __post_init__(self):
        if not self.data_type:
            raise SchemaLoadError("schema without dataType")
        names = [f.field_name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaLoadError(f"schema {self.data_type!r} has duplicate field names")

    def field_names(self) -> list[str]:
        return [f.field_name for f in self.fields]


@dataclass(frozen=True)
class RecordInstance:
    data_type: str
    values: Mapping[str, str]
    record_id: str = ""


@dataclass
class ProcessedRecord:
    structured_output: dict[str, str]
    deid_tasks: list[tuple[str, str]]
    # field -> (entity_type, original value) for ShouldMask fields; PHI, kept for relexicalization
    masked_values: dict[str, tuple[str, str]] = field(default_factory=dict)
    missing_fields: list[str] = field(default_factory=list)
    dropped_fields: list[str] = field(default_factory=list)

    @property
    def warnings(self) -> list[str]:
        return [f"missing field {n!r}" for n in self.missing_fields] + [
            f"field {n!r} not in schema, dropped" for n in self.dropped_fields
        ]


class SchemaRegistry:
    """Immutable data_type -> Schema map plus the domain hashing key."""

    def __init__(self, schemas: Iterable[Schema] = (), domain_key: bytes = b""):
        self._schemas: dict[str, Schema] = {}
        for s in schemas:
            if s.data_type in self._schemas:
                raise SchemaLoadError(f"duplicate dataType {s.data_type!r} in registry")
            self._schemas[s.data_type] = s
        self.domain_key = domain_key

    def __len__(self):
        return len(self._schemas)

    def __contains__(self, data_type):
        return data_type in self._schemas

    def get(self, data_type: str) -> Schema:
        try:
            return self._schemas[data_type]
        except KeyError:
            raise UnknownDataType(f"no schema registered for dataType {data_type!r}") from None

    def schemas(self) -> list[Schema]:
        return list(self._schemas.values())

    @classmethod
    def from_directory(cls, path: str | Path, domain_key: bytes = b"") -> "SchemaRegistry":
        path = Path(path)
        if not path.is_dir():
            raise SchemaLoadError(f"schema registry directory not found: {path}")
        return cls((load_schema(p) for p in sorted(path.glob("*.json"))), domain_key=domain_key)


def _rule_from_flags(name: str, spec: Mapping) -> FieldRule:
    flags = {
        Rule.AUTO_DEID: bool(spec.get("autoDeId", False)),
        Rule.SHOULD_MASK: bool(spec.get("shouldMask", False)),
        Rule.SHOULD_HASH: bool(spec.get("shouldHash", False)),
    }
    on = [r for r, v in flags.items() if v]
    if len(on) > 1:
        raise SchemaLoadError(f"field {name!r} sets conflicting flags: {', '.join(r.value for r in on)}")
    rule = on[0] if on else Rule.PASS_THROUGH
    token = spec.get("entity_type") if rule is Rule.SHOULD_MASK else None
    return FieldRule(name, rule, token, spec.get("description", ""))


def schema_from_dict(doc: Mapping) -> Schema:
    """Build a Schema from the JSON-schema-like document layout (``dataType`` + ``properties``)."""
    try:
        props = doc["properties"]
        data_type = doc["dataType"]
    except KeyError as exc:
        raise SchemaLoadError(f"schema document missing {exc.args[0]!r}") from None
    return Schema(
        data_type=data_type,
        fields=tuple(_rule_from_flags(name, spec) for name, spec in props.items()),
        record_version=str(doc.get("recordVersion", "1.0")),
        reviewed=bool(doc.get("reviewed", False)),
        description=doc.get("description", ""),
    )


def schema_to_dict(schema: Schema) -> dict:
    props = {}
    for f in schema.fields:
        props[f.field_name] = {
            "type": "string",
            "description": f.description,
            "autoDeId": f.rule is Rule.AUTO_DEID,
            "shouldMask": f.rule is Rule.SHOULD_MASK,
            "shouldHash": f.rule is Rule.SHOULD_HASH,
            "entity_type": f.mask_token,
        }
    return {
        "type": "object",
        "recordVersion": schema.record_version,
        "description": schema.description,
        "dataType": schema.data_type,
        "reviewed": schema.reviewed,
        "properties": props,
    }


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaLoadError(f"{path}: {exc}") from None
    try:
        return schema_from_dict(doc)
    except SchemaLoadError as exc:
        raise SchemaLoadError(f"{path}: {exc}") from None


def identify_schema(record: RecordInstance, registry: SchemaRegistry) -> Schema:
    if len(registry) == 0:
        raise UnknownDataType("schema registry is empty")
    schema = registry.get(record.data_type)
    if not schema.reviewed:
        raise UnreviewedSchema(f"schema {schema.data_type!r} has not been reviewed")
    return schema


def hash_identifier(value: str, domain_key: bytes) -> str:
    """HMAC-SHA256 of ``value`` under ``domain_key``, hex, truncated to 32 chars."""
    if not value:
        raise EmptyValue("cannot hash an empty identifier")
    return hmac.new(domain_key, value.encode("utf-8"), hashlib.sha256).hexdigest()[:HASH_HEX_CHARS]


def process_record(record: RecordInstance, schema: Schema, domain_key: bytes = b"") -> ProcessedRecord:
    out = ProcessedRecord({}, [])
    known = set()
    for rule in schema.fields:
        name = rule.field_name
        known.add(name)
        if name not in record.values:
            out.missing_fields.append(name)
            logger.warning("record %s: schema field %r missing, skipped", record.record_id or "?", name)
            continue
        value = record.values[name]
        if rule.rule is Rule.PASS_THROUGH:
            out.structured_output[name] = value
        elif rule.rule is Rule.SHOULD_MASK:
            out.structured_output[name] = rule.mask_token
            if value:
                out.masked_values[name] = (rule.entity_type, value)
        elif rule.rule is Rule.SHOULD_HASH:
            # empty identifiers carry nothing to link on
            out.structured_output[name] = hash_identifier(value, domain_key) if value else ""
        else:
            out.deid_tasks.append((name, value))
    extra = [k for k in record.values if k not in known]
    if extra:
        # not covered by a reviewed rule, so never emitted
        out.dropped_fields.extend(extra)
        logger.warning("record %s: %d field(s) not in schema dropped", record.record_id or "?", len(extra))
    return out


def composite_field(index: int, name: str) -> str:
    return f"r{index}.{name}"


def split_composite_field(name: str) -> tuple[int, str]:
    m = _COMPOSITE_FIELD.match(name)
    if not m:
        raise ValueError(f"not a composite field name: {name!r}")
    return int(m.group(1)), m.group(2)


def merge_schemas(schemas: list[Schema], batch_size: int) -> Schema:
    """Fold several schemas into one composite whose fields are prefixed ``r{i}.``."""
    if not 1 <= len(schemas) <= batch_size:
        raise BatchTooLarge(f"{len(schemas)} schemas for batch size {batch_size}")
    fields = []
    for i, s in enumerate(schemas):
        for f in s.fields:
            fields.append(FieldRule(composite_field(i, f.field_name), f.rule, f.mask_token, f.description))
    return Schema(
        data_type="composite:" + "+".join(s.data_type for s in schemas),
        fields=tuple(fields),
        record_version="composite",
        reviewed=all(s.reviewed for s in schemas),
    )


def merge_records(records: list[RecordInstance], composite: Schema) -> RecordInstance:
    values = {}
    for i, rec in enumerate(records):
        for k, v in rec.values.items():
            values[composite_field(i, k)] = v
    return RecordInstance(composite.data_type, values, record_id="batch")


def split_processed(processed: ProcessedRecord, n: int) -> list[ProcessedRecord]:
    """Inverse of processing a merged record: one ProcessedRecord per source index."""
    parts = [ProcessedRecord({}, []) for _ in range(n)]
    for k, v in processed.structured_output.items():
        i, name = split_composite_field(k)
        parts[i].structured_output[name] = v
    for k, text in processed.deid_tasks:
        i, name = split_composite_field(k)
        parts[i].deid_tasks.append((name, text))
    for k, v in processed.masked_values.items():
        i, name = split_composite_field(k)
        parts[i].masked_values[name] = v
    for k in processed.missing_fields:
        i, name = split_composite_field(k)
        parts[i].missing_fields.append(name)
    for k in processed.dropped_fields:
        i, name = split_composite_field(k)
        parts[i].dropped_fields.append(name)
    return parts


def record_from_dict(doc: Mapping, record_id: str = "") -> RecordInstance:
    data_type = doc.get("dataType", doc.get("data_type"))
    if not data_type:
        raise UnknownDataType(f"record {record_id or '?'} has no dataType")
    values = {k: "" if v is None else str(v) for k, v in doc.items() if k not in ("dataType", "data_type")}
    return RecordInstance(data_type, values, record_id)
