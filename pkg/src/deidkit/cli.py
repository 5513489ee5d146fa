"""``deidkit`` command line: ``deid``, ``relex``, ``audio`` and ``eval``."""

from __future__ import annotations

import functools
import logging
import sys

import click

from . import pipeline
from .config import domain_key, load_config
from .errors import DeidError
from .evaluation import MatchCriteria, read_type_map
from .schema import SchemaRegistry


def _common(fn):
    """Options shared by the model-backed commands; each maps onto a PipelineConfig field."""
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config file."),
        click.option("--agent", type=click.Choice(["remote", "scripted", "heuristic"])),
        click.option("--script", "script_path", type=click.Path(exists=True, dir_okay=False), help="Scripted agent responses."),
        click.option("--endpoint-url"),
        click.option("--token-env", help="Name of the environment variable holding the endpoint token."),
        click.option("--timeout", "timeout_s", type=float),
        click.option("--retries", type=int),
        click.option("--backoff", "backoff_s", type=float),
        click.option("--chunk-size", "chunk_size_words", type=int),
        click.option("--passes", type=int),
        click.option("--overlap", "overlap_words", type=int),
        click.option("--entity-types", help="Comma-separated entity types."),
        click.option("--log-level", default="WARNING", show_default=True),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


_NON_CONFIG = {"config_path", "log_level", "input_dir", "output_dir", "audio_path", "transcript_path"}


def _config(kw):
    flags = {k: v for k, v in kw.items() if k not in _NON_CONFIG}
    return load_config(kw.get("config_path"), flags)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kw):
        logging.basicConfig(level=kw.get("log_level", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
        try:
            return fn(*args, **kw)
        except DeidError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Schema-driven de-identification of records, clinical text and audio."""


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--registry", "registry_path", type=click.Path(exists=True, file_okay=False))
@click.option("--batch-size", type=int)
@click.option("--max-workers", type=int)
@click.option("--relex/--no-relex", "relex_enabled", default=None, help="Also relexicalize the output.")
@click.option("--index-path")
@click.option("--domain")
@_common
@_guard
def deid(**kw):
    """De-identify every JSON record in INPUT into per-record directories under OUTPUT."""
    cfg = _config(kw)
    if not cfg.registry_path:
        raise click.UsageError("--registry (or registry_path in the config) is required")
    registry = SchemaRegistry.from_directory(cfg.registry_path, domain_key=domain_key())
    agents = pipeline.build_agents(cfg)
    summary = pipeline.cmd_deid(kw["input_dir"], kw["output_dir"], registry, cfg, agents.extractor)
    if cfg.relex_enabled and summary.processed:
        rs = pipeline.cmd_relex(kw["output_dir"], None, pipeline.make_relexicalizer(cfg, agents))
        summary.failed.update(rs.failed)
    click.echo(f"{len(summary.processed)} record(s) de-identified, {len(summary.failed)} failed")
    sys.exit(summary.exit_code)


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False), help="deid output.")
@click.option("--output", "output_dir", type=click.Path(file_okay=False), help="Defaults to INPUT.")
@click.option("--index-path")
@click.option("--domain")
@click.option("--threshold", "relex_threshold", type=float)
@_common
@_guard
def relex(**kw):
    """Replace placeholders in deid output with consistent surrogates."""
    cfg = _config(kw)
    agents = pipeline.build_agents(cfg)
    summary = pipeline.cmd_relex(kw["input_dir"], kw["output_dir"], pipeline.make_relexicalizer(cfg, agents))
    click.echo(f"{len(summary.processed)} record(s) relexicalized, {len(summary.failed)} failed")
    sys.exit(summary.exit_code)


@main.command()
@click.option("--audio", "audio_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--transcript", "transcript_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--margin", "margin_s", type=float)
@click.option("--min-gap", "min_gap_s", type=float)
@click.option("--vad-floor", type=float)
@_common
@_guard
def audio(**kw):
    """Mute PHI in a 16-bit mono WAV file given its word-timestamped transcript."""
    cfg = _config(kw)
    agents = pipeline.build_agents(cfg)
    result = pipeline.cmd_audio(
        kw["audio_path"], kw["transcript_path"], kw["output_dir"], cfg, agents.extractor, agents.classifier
    )
    click.echo(f"{len(result.intervals)} interval(s) muted" + (" (classifier failed, fail-closed)" if result.classifier_failed else ""))


@main.command(name="eval")
@click.option("--gold", required=True, type=click.Path(exists=True), help="Span file, or directory of i2b2 XML.")
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
@click.option("--type/--no-type", "require_type", default=True, show_default=True)
@click.option("--position/--no-position", "require_position", default=True, show_default=True)
@click.option("--threshold", type=float, default=0.6, show_default=True)
@click.option("--containment", is_flag=True, help="Require one span to contain the other.")
@click.option("--type-map", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--all-or-nothing-granularity",
    "granularity",
    type=click.Choice(["per_document", "per_document_and_type"]),
    default="per_document",
    show_default=True,
)
@click.option("--types", help="Comma-separated types the all-or-nothing recall is restricted to.")
@click.option("--log-level", default="WARNING", show_default=True)
@_guard
def eval_cmd(gold, pred, report_path, require_type, require_position, threshold, containment, type_map, granularity, types, log_level):
    """Score predicted spans against gold spans."""
    criteria = MatchCriteria(
        require_type=require_type,
        require_position=require_position,
        similarity_threshold=threshold,
        containment=containment,
        type_map=read_type_map(type_map) if type_map else {},
    )
    wanted = [t.strip() for t in types.split(",") if t.strip()] if types else None
    report = pipeline.cmd_eval(gold, pred, report_path, criteria, granularity, wanted)
    click.echo(report.table())


if __name__ == "__main__":
    main()
