"""Schema-driven de-identification and relexicalization of records, clinical text and audio."""

from .errors import DeidError
from .extraction import ExtractionConfig, run_autodeid
from .facts import EntityMention, FactDictionary
from .kernels import BACKEND
from .redaction import redact
from .relex import Relexicalizer, relexicalize, replacement_consistency_score
from .schema import Rule, Schema, SchemaRegistry, identify_schema, process_record

__all__ = [
    "BACKEND",
    "DeidError",
    "EntityMention",
    "ExtractionConfig",
    "FactDictionary",
    "Relexicalizer",
    "Rule",
    "Schema",
    "SchemaRegistry",
    "identify_schema",
    "process_record",
    "redact",
    "relexicalize",
    "replacement_consistency_score",
    "run_autodeid",
]
