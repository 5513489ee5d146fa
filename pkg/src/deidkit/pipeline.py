"""Runnable commands tying the modules together, plus artifact persistence.

Each input record becomes one output directory::

    <out>/<record_id>/record.json   structured fields and redacted text
    <out>/<record_id>/facts.json    fact dictionaries and masked originals (PHI)
    <out>/<record_id>/spans.json    resolved spans per text field (PHI)
    <out>/<record_id>/report.json   counts and warnings, PHI-free
    <out>/<record_id>/relex.json    written by the relex command

Directories are assembled under a temporary name and renamed into place, so
a failed record never leaves a partial result behind.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from . import agents as ag
from .audio import TimedWord, read_wav, run_audio_deid, write_wav
from .config import PipelineConfig, domain_key
from .errors import ConfigError, DeidError, SpanFileError
from .evaluation import Granularity, MatchCriteria, evaluate, read_spans
from .extraction import run_autodeid_many
from .facts import EntityMention, FactDictionary
from .redaction import ResolvedSpan, redact, redacted_offsets
from .relex import Relexicalizer
from .relex_index import FileIndex
from .schema import (
    RecordInstance,
    Rule,
    Schema,
    SchemaRegistry,
    identify_schema,
    merge_records,
    merge_schemas,
    process_record,
    record_from_dict,
    split_processed,
)

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------- io helpers


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def load_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def write_dir_atomic(target: Path, files: dict[str, str]) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        for name, content in files.items():
            (tmp / name).write_text(content, encoding="utf-8")
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def write_file_atomic(target: Path, content: str | bytes) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(content.encode("utf-8") if isinstance(content, str) else content)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass
class RunSummary:
    processed: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def fail(self, record_id: str, exc: BaseException) -> None:
        # exception type only; messages from third-party code may echo PHI
        self.failed[record_id] = type(exc).__name__
        logger.error("record %s failed: %s", record_id, type(exc).__name__)


# --------------------------------------------------------------------------- agents


@dataclass
class Agents:
    extractor: Any = None
    decider: Any = None
    generator: Any = None
    classifier: Any = None


def load_script(path: str | Path) -> dict:
    try:
        data = load_json(Path(path))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: unreadable agent script ({type(exc).__name__})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: agent script must be an object")
    return data


def scripted_agents(script: dict) -> Agents:
    """Agents from a script document with optional keys ``extract``, ``strict``,
    ``clusters``, ``verdicts``, ``surrogates``, ``gaps`` and ``gap_failure``."""
    return Agents(
        extractor=ag.ScriptedExtractor(script.get("extract", {}), strict=bool(script.get("strict", False))),
        decider=ag.ScriptedDecider(script.get("clusters"), script.get("verdicts")),
        generator=ag.ScriptedGenerator(script.get("surrogates", {})),
        classifier=ag.ScriptedGapClassifier(script.get("gaps"), fail=bool(script.get("gap_failure", False))),
    )


def build_agents(config: PipelineConfig) -> Agents:
    remote = None
    if config.endpoint_url:
        agent = ag.RemoteAgent(config.endpoint())
        remote = Agents(ag.RemoteExtractor(agent), ag.RemoteDecider(agent), ag.RemoteGenerator(agent), ag.RemoteGapClassifier(agent))
    if config.agent == "remote":
        if remote is None:
            raise ConfigError("agent 'remote' needs endpoint_url")
        return remote
    if config.agent == "scripted":
        if not config.script_path:
            raise ConfigError("agent 'scripted' needs script_path")
        return scripted_agents(load_script(config.script_path))
    # heuristic: offline decider/generator, extraction and gap classification scripted or remote
    base = scripted_agents(load_script(config.script_path)) if config.script_path else remote
    if base is None:
        raise ConfigError("agent 'heuristic' needs script_path or endpoint_url for extraction")
    return Agents(base.extractor, ag.HeuristicDecider(), ag.DeterministicGenerator(domain_key()), base.classifier)


# --------------------------------------------------------------------------- deid


@dataclass
class _Item:
    record: RecordInstance
    schema: Schema

    @property
    def words(self) -> int:
        auto = {f.field_name for f in self.schema.fields if f.rule is Rule.AUTO_DEID}
        return sum(len(v.split()) for k, v in self.record.values.items() if k in auto)


def plan_batches(items: Sequence[_Item], batch_size: int, word_budget: int) -> list[list[_Item]]:
    """Consecutive groups of at most ``batch_size`` records whose free text stays within
    ``word_budget`` words; a record over budget on its own still gets a batch."""
    batches: list[list[_Item]] = []
    cur: list[_Item] = []
    words = 0
    for it in items:
        if cur and (len(cur) >= batch_size or words + it.words > word_budget):
            batches.append(cur)
            cur, words = [], 0
        cur.append(it)
        words += it.words
    if cur:
        batches.append(cur)
    return batches


def _span_doc(s: ResolvedSpan) -> dict:
    m = s.mention
    return {
        "start": s.start,
        "end": s.end,
        "entity_type": s.entity_type,
        "text": s.surface,
        "mention": {"entity_type": m.entity_type, **m.to_dict()},
    }


def _masked_mentions(masked: dict[str, tuple[str, str]]) -> list[EntityMention]:
    return [EntityMention(etype, value) for etype, value in masked.values()]


def _deid_batch(batch: list[_Item], config: PipelineConfig, key: bytes, extractor, sleep) -> list[dict[str, str]]:
    if len(batch) > 1:
        composite = merge_schemas([it.schema for it in batch], config.batch_size)
        merged = merge_records([it.record for it in batch], composite)
        parts = split_processed(process_record(merged, composite, key), len(batch))
    else:
        parts = [process_record(batch[0].record, batch[0].schema, key)]
    texts = [text for p in parts for _, text in p.deid_tasks]
    dictionaries = iter(run_autodeid_many(texts, config.extraction(), extractor, sleep=sleep))
    outputs = []
    for it, proc in zip(batch, parts):
        redacted: dict[str, str] = {}
        facts_doc: dict[str, Any] = {}
        spans_doc: dict[str, list] = {}
        report: dict[str, Any] = {
            "record_id": it.record.record_id,
            "data_type": it.schema.data_type,
            "record_version": it.schema.record_version,
            "missing_fields": proc.missing_fields,
            "dropped_fields": proc.dropped_fields,
            "fields": {},
        }
        extra = _masked_mentions(proc.masked_values)
        for name, text in proc.deid_tasks:
            facts = next(dictionaries)
            res = redact(text, list(facts) + extra)
            redacted[name] = res.text
            facts_doc[name] = facts.to_json()
            spans_doc[name] = [_span_doc(s) for s in res.spans]
            report["fields"][name] = {
                "mentions": len(facts),
                "spans": len(res.spans),
                "unresolved": sorted(f"{m.entity_type}/{why}" for m, why in res.unresolved),
                "overlaps_dropped": len(res.conflicts),
                "by_type": _count_types(res.spans),
            }
        record_out: dict[str, Any] = {"dataType": it.record.data_type}
        for f in it.schema.fields:
            if f.field_name in proc.structured_output:
                record_out[f.field_name] = proc.structured_output[f.field_name]
            elif f.field_name in redacted:
                record_out[f.field_name] = redacted[f.field_name]
        masked_doc = {k: {"entity_type": t, "value": v} for k, (t, v) in proc.masked_values.items()}
        outputs.append(
            {
                "record.json": dump_json(record_out),
                "facts.json": dump_json({"fields": facts_doc, "masked_values": masked_doc}),
                "spans.json": dump_json(spans_doc),
                "report.json": dump_json(report),
            }
        )
    return outputs


def _count_types(spans) -> dict[str, int]:
    out: dict[str, int] = {}
    for s in spans:
        out[s.entity_type] = out.get(s.entity_type, 0) + 1
    return dict(sorted(out.items()))


def cmd_deid(
    input_dir: str | Path,
    output_dir: str | Path,
    registry: SchemaRegistry,
    config: PipelineConfig,
    extractor,
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> RunSummary:
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    summary = RunSummary()
    items: list[_Item] = []
    for path in sorted(input_dir.glob("*.json")):
        rid = path.stem
        try:
            doc = load_json(path)
            if not isinstance(doc, dict):
                raise SpanFileError("record file must hold an object")
            rec = record_from_dict(doc, rid)
            items.append(_Item(rec, identify_schema(rec, registry)))
        except (OSError, ValueError, DeidError) as exc:
            summary.fail(rid, exc)
    key = registry.domain_key

    def run(batch: list[_Item]):
        try:
            return batch, _deid_batch(batch, config, key, extractor, sleep), None
        except Exception as exc:  # noqa: BLE001 - any failure aborts the batch, fail closed
            return batch, None, exc

    batches = plan_batches(items, config.batch_size, config.word_budget)
    if config.max_workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(b) for b in batches]
    for batch, outputs, exc in results:
        if exc is not None:
            for it in batch:
                summary.fail(it.record.record_id, exc)
            continue
        for it, files in zip(batch, outputs):
            write_dir_atomic(output_dir / it.record.record_id, files)
            summary.processed.append(it.record.record_id)
    logger.info("deid: %d record(s) written, %d failed", len(summary.processed), len(summary.failed))
    return summary


# --------------------------------------------------------------------------- relex


def _load_spans(items: list[dict]) -> list[ResolvedSpan]:
    out = []
    for d in items:
        m = d["mention"]
        out.append(
            ResolvedSpan(d["start"], d["end"], d["entity_type"], d["text"], EntityMention(m["entity_type"], m["surface"], m["context_hint"]))
        )
    return out


def restore_text(redacted: str, spans: list[ResolvedSpan]) -> str:
    """Original text from a redacted text and the spans removed from it."""
    pieces, last = [], 0
    for s, (a, b) in zip(sorted(spans, key=lambda s: s.start), redacted_offsets(spans)):
        pieces.append(redacted[last:a])
        pieces.append(s.surface)
        last = b
    pieces.append(redacted[last:])
    return "".join(pieces)


def relex_record(record_dir: Path, relexicalizer: Relexicalizer) -> dict[str, Any]:
    record = load_json(record_dir / "record.json")
    facts_doc = load_json(record_dir / "facts.json")
    spans_doc = load_json(record_dir / "spans.json")
    masked = [EntityMention(v["entity_type"], v["value"]) for v in facts_doc.get("masked_values", {}).values()]
    facts = FactDictionary()
    spans = {name: _load_spans(items) for name, items in spans_doc.items()}
    for name, doc in facts_doc.get("fields", {}).items():
        facts.update(FactDictionary.from_json(doc))
    facts.update(masked)
    for ss in spans.values():
        facts.update(s.mention for s in ss)
    originals = {name: restore_text(record[name], ss) for name, ss in spans.items()}
    needed = {s.mention.key for ss in spans.values() for s in ss} | {m.key for m in masked}
    plan = relexicalizer.plan("\n\n".join(originals.values()), facts, needed=needed)
    out = dict(record)
    for name, ss in spans.items():
        out[name] = relexicalizer.relexicalize_redacted(record[name], ss, plan)
    for fname, m in zip(facts_doc.get("masked_values", {}), masked):
        out[fname] = plan.replacement_for(m)
    return out


def cmd_relex(
    deid_dir: str | Path,
    output_dir: str | Path | None,
    relexicalizer: Relexicalizer,
) -> RunSummary:
    """Relexicalize every record directory under ``deid_dir``. Records run one after
    another because surrogate choice for a domain must see earlier index updates."""
    deid_dir = Path(deid_dir)
    output_dir = Path(output_dir) if output_dir else deid_dir
    summary = RunSummary()
    for record_dir in sorted(p for p in deid_dir.iterdir() if (p / "record.json").is_file()):
        rid = record_dir.name
        try:
            out = relex_record(record_dir, relexicalizer)
        except (OSError, ValueError, KeyError, DeidError) as exc:
            summary.fail(rid, exc)
            continue
        write_file_atomic(output_dir / rid / "relex.json", dump_json(out))
        summary.processed.append(rid)
    logger.info("relex: %d record(s) written, %d failed", len(summary.processed), len(summary.failed))
    return summary


def make_relexicalizer(config: PipelineConfig, agents: Agents, *, sleep=time.sleep) -> Relexicalizer:
    return Relexicalizer(
        FileIndex(config.index_path),
        agents.decider,
        agents.generator,
        domain=config.domain,
        domain_key=domain_key(),
        threshold=config.relex_threshold,
        retries=config.retries,
        backoff_s=config.backoff_s,
        sleep=sleep,
    )


# --------------------------------------------------------------------------- audio


def read_transcript(path: str | Path) -> list[TimedWord]:
    path = Path(path)
    try:
        data = load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpanFileError(f"{path}: unreadable transcript ({type(exc).__name__})") from None
    if isinstance(data, dict):
        data = data.get("words", [])
    out = []
    for i, w in enumerate(data):
        try:
            out.append(TimedWord(str(w["word"]), float(w["start_s"]), float(w["end_s"])))
        except (KeyError, TypeError, ValueError):
            raise SpanFileError(f"{path}[{i}]: word needs word, start_s < end_s") from None
    return out


def write_transcript(path: str | Path, words: Sequence[TimedWord]) -> None:
    Path(path).write_text(
        dump_json([{"word": w.word, "start_s": w.start_s, "end_s": w.end_s} for w in words]), encoding="utf-8"
    )


def cmd_audio(
    audio_path: str | Path,
    transcript_path: str | Path,
    output_dir: str | Path,
    config: PipelineConfig,
    extractor,
    classifier,
    *,
    sleep: Callable[[float], None] = time.sleep,
):
    audio = read_wav(audio_path)
    words = read_transcript(transcript_path)
    result = run_audio_deid(audio, words, config.audio(), extractor, classifier, sleep=sleep)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(audio_path).stem
    fd, tmp = tempfile.mkstemp(prefix=f".{stem}.", suffix=".wav", dir=output_dir)
    os.close(fd)
    try:
        write_wav(tmp, result.audio)
        os.replace(tmp, output_dir / f"{stem}.muted.wav")
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    report = result.report()
    write_file_atomic(output_dir / f"{stem}.intervals.json", dump_json(report["intervals"]))
    write_file_atomic(output_dir / f"{stem}.report.json", dump_json(report))
    if result.classifier_failed:
        logger.error("audio %s: classifier failed, all voiced gaps muted", stem)
    return result


# --------------------------------------------------------------------------- eval


def load_span_source(path: str | Path) -> list:
    from .i2b2 import read_i2b2_dir

    path = Path(path)
    return read_i2b2_dir(path) if path.is_dir() else read_spans(path)


def cmd_eval(
    gold_path: str | Path,
    pred_path: str | Path,
    report_path: str | Path | None,
    criteria: MatchCriteria,
    granularity: Granularity | str = Granularity.PER_DOCUMENT,
    types=None,
):
    report = evaluate(load_span_source(gold_path), load_span_source(pred_path), criteria, granularity, types)
    if report_path:
        write_file_atomic(Path(report_path), dump_json(report.to_dict()))
    return report
