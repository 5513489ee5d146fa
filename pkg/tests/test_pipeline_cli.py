import json
import logging

import numpy as np
import pytest
from click.testing import CliRunner

import pipeline_fixtures as F
import worked_examples as W
from deidkit.audio import read_wav
from deidkit.cli import main
from deidkit.config import PipelineConfig
from deidkit.errors import ConfigError
from deidkit.evaluation import SpanLabel, write_spans
from deidkit.pipeline import _Item, build_agents, cmd_deid, plan_batches
from deidkit.schema import SchemaRegistry, record_from_dict, schema_from_dict

NO_SLEEP = lambda s: None  # noqa: E731
KEY = "pipeline-test-key"


@pytest.fixture
def env(monkeypatch):
    monkeypatch.setenv("DEIDKIT_DOMAIN_KEY", KEY)
    for var in ("DEIDKIT_PASSES", "DEIDKIT_AGENT", "DEIDKIT_BATCH_SIZE"):
        monkeypatch.delenv(var, raising=False)


def run(args):
    res = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    return res


def deid_args(tmp_path, extra=()):
    return [
        "deid",
        "--input", F.worked_input(tmp_path / "in"),
        "--output", tmp_path / "out",
        "--registry", F.registry(tmp_path / "reg"),
        "--agent", "scripted",
        "--script", F.worked_script(tmp_path),
        *extra,
    ]


def test_cli_deid_worked_example(tmp_path, env):
    res = run(deid_args(tmp_path))
    assert res.exit_code == 0, res.output
    rec = json.loads((tmp_path / "out" / "rec001" / "record.json").read_text())
    assert rec["note"] == W.DEID_NOTE
    assert rec["AGE"] == "[AGE]"
    assert list(rec) == ["dataType", "PatientId", "MRN", "AGE", "note"]
    report = json.loads((tmp_path / "out" / "rec001" / "report.json").read_text())
    assert report["fields"]["note"]["by_type"]["PERSON"] == 3


def test_cli_relex_worked_example_and_rerun(tmp_path, env):
    assert run(deid_args(tmp_path)).exit_code == 0
    idx = tmp_path / "index.jsonl"
    args = ["relex", "--input", tmp_path / "out", "--agent", "scripted", "--script", tmp_path / "script.json", "--index-path", idx]
    res = run(args)
    assert res.exit_code == 0, res.output
    out = json.loads((tmp_path / "out" / "rec001" / "relex.json").read_text())
    assert out["note"] == W.RELEX_NOTE and out["AGE"] == W.RELEX_AGE
    first = (tmp_path / "out" / "rec001" / "relex.json").read_bytes()
    lines = idx.read_text().count("\n")
    assert run(args).exit_code == 0
    assert (tmp_path / "out" / "rec001" / "relex.json").read_bytes() == first
    assert idx.read_text().count("\n") == lines


def test_second_corpus_shares_surrogate(tmp_path, env):
    assert run(deid_args(tmp_path)).exit_code == 0
    idx = tmp_path / "index.jsonl"
    script = tmp_path / "script.json"
    run(["relex", "--input", tmp_path / "out", "--agent", "scripted", "--script", script, "--index-path", idx])
    second = {"dataType": "admission", "patient_name": "John Doe", "patient_id": "B1", "gender": "male",
              "medical_history": "John Doe returned for review."}
    F.write_json(tmp_path / "in2" / "rec002.json", second)
    script2 = F.write_json(tmp_path / "script2.json", {"extract": {"1": {"PERSON": ["John Doe"]}}})
    common = ["--agent", "scripted", "--script", script2]
    assert run(["deid", "--input", tmp_path / "in2", "--output", tmp_path / "out2", "--registry", tmp_path / "reg", *common]).exit_code == 0
    assert run(["relex", "--input", tmp_path / "out2", "--index-path", idx, *common]).exit_code == 0
    out = json.loads((tmp_path / "out2" / "rec002" / "relex.json").read_text())
    assert out["medical_history"] == "Michael Johnson returned for review."
    assert out["patient_name"] == "Michael Johnson"


def test_empty_input_dir_exit_zero(tmp_path, env):
    (tmp_path / "in").mkdir()
    res = run(["deid", "--input", tmp_path / "in", "--output", tmp_path / "out", "--registry", F.registry(tmp_path / "reg"),
               "--agent", "scripted", "--script", F.worked_script(tmp_path)])
    assert res.exit_code == 0 and list((tmp_path / "out").iterdir()) == []


def test_extractor_down_fails_closed(tmp_path, env, caplog):
    class Down:
        calls = 0

        def extract(self, *a):
            Down.calls += 1
            raise ConnectionError("endpoint down")

    reg = SchemaRegistry.from_directory(F.registry(tmp_path / "reg"), KEY.encode())
    summary = cmd_deid(F.worked_input(tmp_path / "in"), tmp_path / "out", reg, PipelineConfig(), Down(), sleep=NO_SLEEP)
    assert summary.exit_code == 1 and summary.failed == {"rec001": "ExtractorFailure"}
    assert Down.calls == 3
    assert list((tmp_path / "out").iterdir()) == []
    assert "John" not in caplog.text


def test_cli_remote_endpoint_unreachable(tmp_path, env):
    args = ["deid", "--input", F.worked_input(tmp_path / "in"), "--output", tmp_path / "out", "--registry", F.registry(tmp_path / "reg"),
            "--agent", "remote", "--endpoint-url", "http://127.0.0.1:9", "--retries", "1", "--timeout", "0.5"]
    res = run(args)
    assert res.exit_code == 1
    assert not any((tmp_path / "out").iterdir())


def test_unknown_datatype_and_bad_json_are_per_record_failures(tmp_path, env):
    F.worked_input(tmp_path / "in")
    F.write_json(tmp_path / "in" / "zz.json", {"dataType": "unknownType"})
    (tmp_path / "in" / "broken.json").write_text("{")
    res = run(deid_args(tmp_path))
    assert res.exit_code == 1
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["rec001"]


def test_usage_errors(tmp_path, env):
    (tmp_path / "in").mkdir()
    res = CliRunner().invoke(main, ["deid", "--input", str(tmp_path / "in"), "--output", str(tmp_path / "o"), "--agent", "scripted",
                                    "--script", str(F.worked_script(tmp_path))])
    assert res.exit_code == 2
    res = CliRunner().invoke(main, ["deid", "--input", str(tmp_path / "in"), "--output", str(tmp_path / "o"),
                                    "--registry", str(F.registry(tmp_path / "reg")), "--agent", "remote"])
    assert res.exit_code == 2 and "endpoint_url" in res.output
    with pytest.raises(ConfigError):
        build_agents(PipelineConfig(agent="scripted"))


def test_determinism(tmp_path, env):
    for name in ("a", "b"):
        args = deid_args(tmp_path / name)
        assert run(args).exit_code == 0
    for f in ("record.json", "facts.json", "spans.json", "report.json"):
        assert (tmp_path / "a" / "out" / "rec001" / f).read_bytes() == (tmp_path / "b" / "out" / "rec001" / f).read_bytes()


def outputs(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("n", [2, 5])
def test_batching_equivalence(tmp_path, env, n):
    F.corpus(tmp_path / "in")
    reg = SchemaRegistry.from_directory(F.registry(tmp_path / "reg"), KEY.encode())
    base = cmd_deid(tmp_path / "in", tmp_path / "one", reg, PipelineConfig(), F.LookupExtractor())
    assert base.exit_code == 0 and len(base.processed) == 20

    class Counting(F.LookupExtractor):
        calls = 0

        def extract(self, *a):
            Counting.calls += 1
            return super().extract(*a)

    cfg = PipelineConfig(batch_size=n, max_workers=2)
    batched = cmd_deid(tmp_path / "in", tmp_path / "many", reg, cfg, Counting())
    assert batched.exit_code == 0
    assert outputs(tmp_path / "one") == outputs(tmp_path / "many")
    for rid in base.processed:
        note = json.loads((tmp_path / "one" / rid / "record.json").read_text())
        text = note.get("note") or note.get("medical_history")
        assert "[PERSON]" in text and "[TELEPHONE_NUMBER]" in text


def test_plan_batches_respects_budget():
    schema = schema_from_dict(W.SHORT_SCHEMA)
    items = [_Item(record_from_dict({**W.SHORT_RECORD, "medical_history": "w " * k}, f"r{k}"), schema) for k in (5, 5, 5, 20, 1)]
    assert [[it.record.record_id for it in b] for b in plan_batches(items, 3, 12)] == [["r5", "r5"], ["r5"], ["r20"], ["r1"]]
    assert [len(b) for b in plan_batches(items, 2, 1000)] == [2, 2, 1]


def test_cli_audio(tmp_path, env):
    wav, transcript, script = F.audio_inputs(tmp_path / "a")
    res = run(["audio", "--audio", wav, "--transcript", transcript, "--output", tmp_path / "out", "--agent", "scripted",
               "--script", script, "--margin", "0.3", "--passes", "1"])
    assert res.exit_code == 0, res.output
    intervals = json.loads((tmp_path / "out" / "visit.intervals.json").read_text())
    assert [(i["start_s"], i["end_s"]) for i in intervals] == [(3.93, 5.1), (7.12, 7.87), (12.27, 13.5)]
    muted = read_wav(tmp_path / "out" / "visit.muted.wav")
    sr = muted.sample_rate
    assert not muted.samples[int(4 * sr) : int(5 * sr)].any()
    assert np.array_equal(muted.samples[: int(3.9 * sr)], W.synth_clip().samples[: int(3.9 * sr)])


def test_cli_audio_classifier_failure_flagged(tmp_path, env):
    wav, transcript, script = F.audio_inputs(tmp_path / "a", fail=True)
    res = run(["audio", "--audio", wav, "--transcript", transcript, "--output", tmp_path / "out", "--agent", "scripted",
               "--script", script, "--margin", "0.3", "--passes", "1", "--retries", "1"])
    assert res.exit_code == 0 and "fail-closed" in res.output
    report = json.loads((tmp_path / "out" / "visit.report.json").read_text())
    assert report["classifier_failed"] is True


def test_cli_audio_silent_clip_no_muting(tmp_path, env):
    from deidkit.audio import AudioBuffer, write_wav

    write_wav(tmp_path / "quiet.wav", AudioBuffer(8000, np.zeros(16000, dtype=np.int16)))
    (tmp_path / "t.json").write_text("[]")
    script = F.write_json(tmp_path / "s.json", {})
    res = run(["audio", "--audio", tmp_path / "quiet.wav", "--transcript", tmp_path / "t.json", "--output", tmp_path / "o",
               "--agent", "scripted", "--script", script])
    assert res.exit_code == 0
    assert json.loads((tmp_path / "o" / "quiet.intervals.json").read_text()) == []


def test_cli_audio_unsupported_format(tmp_path, env):
    (tmp_path / "x.wav").write_bytes(b"RIFFjunk")
    (tmp_path / "t.json").write_text("[]")
    script = F.write_json(tmp_path / "s.json", {})
    res = CliRunner().invoke(main, ["audio", "--audio", str(tmp_path / "x.wav"), "--transcript", str(tmp_path / "t.json"),
                                    "--output", str(tmp_path / "o"), "--agent", "scripted", "--script", str(script)])
    assert res.exit_code == 2 and "UnsupportedAudioFormat" not in res.output and "error:" in res.output


def test_cli_eval(tmp_path):
    spans = [SpanLabel("d1", 0, 8, "John Doe", "PERSON"), SpanLabel("d1", 12, 14, "45", "AGE"),
             SpanLabel("d2", 0, 15, "Mrs. Mary Smith", "PERSON"), SpanLabel("d3", 3, 5, "76", "AGE")]
    write_spans(tmp_path / "gold.json", spans)
    write_spans(tmp_path / "pred.jsonl", spans)
    res = run(["eval", "--gold", tmp_path / "gold.json", "--pred", tmp_path / "pred.jsonl", "--report", tmp_path / "r.json"])
    assert res.exit_code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["overall"]["f1"] == 1.0 and report["overall"]["all_or_nothing_recall"] == 1.0
    write_spans(tmp_path / "pred2.json", spans[:1] + spans[2:])
    base = ["eval", "--gold", tmp_path / "gold.json", "--pred", tmp_path / "pred2.json", "--report", tmp_path / "r2.json"]
    run(base)
    assert json.loads((tmp_path / "r2.json").read_text())["overall"]["all_or_nothing_recall"] == pytest.approx(2 / 3)
    run(base + ["--all-or-nothing-granularity", "per_document_and_type"])
    r2 = json.loads((tmp_path / "r2.json").read_text())
    assert r2["granularity"] == "per_document_and_type" and r2["overall"]["all_or_nothing_recall"] == pytest.approx(3 / 4)
    (tmp_path / "bad.jsonl").write_text("{\n")
    res = CliRunner().invoke(main, ["eval", "--gold", str(tmp_path / "gold.json"), "--pred", str(tmp_path / "bad.jsonl")])
    assert res.exit_code == 2 and "bad.jsonl:1" in res.output


def test_logs_are_phi_free(tmp_path, env, caplog):
    caplog.set_level(logging.DEBUG)
    outs = [run(deid_args(tmp_path, ["--log-level", "DEBUG"]))]
    outs.append(run(["relex", "--input", tmp_path / "out", "--agent", "scripted", "--script", tmp_path / "script.json",
                     "--index-path", tmp_path / "i.jsonl", "--log-level", "DEBUG"]))
    wav, transcript, script = F.audio_inputs(tmp_path / "a", fail=True)
    outs.append(run(["audio", "--audio", wav, "--transcript", transcript, "--output", tmp_path / "ao", "--agent", "scripted",
                     "--script", script, "--retries", "1", "--log-level", "DEBUG"]))
    text = caplog.text + "".join(r.output for r in outs)
    for phi in F.WORKED_PHI + ["Dr. Smith", "Creekwood Hospital", KEY]:
        assert phi not in text
