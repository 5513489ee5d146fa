import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import eval_oracle as O
from deidkit.errors import SpanFileError
from deidkit.evaluation import (
    Granularity,
    MatchCriteria,
    SpanLabel,
    all_or_nothing_recall,
    evaluate,
    levenshtein_similarity,
    match_entities,
    precision_recall_f1,
    read_spans,
    read_type_map,
    scores_from_counts,
    write_spans,
)
from deidkit.i2b2 import parse_i2b2, read_i2b2_dir

VITALS = "Patient is 76 years old; oxygen saturation rate is 76 percent."


def test_similarity_examples():
    assert levenshtein_similarity("Mary Smith", "mary  smith") == 1.0
    assert abs(levenshtein_similarity("Mrs. Mary Smith", "Mary Smith") - 2 / 3) < 1e-9
    assert levenshtein_similarity("abc", "xyz") == 0.0
    assert levenshtein_similarity("", "") == 1.0


def test_match_examples():
    g = SpanLabel("d", 15, 17, "76", "AGE")
    assert len(match_entities([g], [g]).tp) == 1
    vit = VITALS.rindex("76")
    gold = [SpanLabel("d", VITALS.index("76"), VITALS.index("76") + 2, "76", "AGE")]
    pred = [SpanLabel("d", vit, vit + 2, "76", "AGE")]
    m = match_entities(gold, pred)
    assert (len(m.tp), len(m.fp), len(m.fn)) == (0, 1, 1)
    m = match_entities([SpanLabel("d", 0, 15, "Mrs. Mary Smith", "PERSON")], [SpanLabel("d", 5, 15, "Mary Smith", "PERSON")])
    assert len(m.tp) == 1


def test_type_and_position_switches():
    g = [SpanLabel("d", 0, 4, "Mary", "PERSON")]
    p = [SpanLabel("d", 50, 54, "Mary", "NAME")]
    assert not match_entities(g, p).tp
    assert not match_entities(g, p, MatchCriteria(require_position=False)).tp
    assert match_entities(g, p, MatchCriteria(require_position=False, type_map={"NAME": "PERSON"})).tp
    assert match_entities(g, p, MatchCriteria(require_position=False, require_type=False)).tp


def test_containment_option():
    g = [SpanLabel("d", 0, 10, "Mary Smith", "PERSON")]
    p = [SpanLabel("d", 5, 15, "Smith Mary", "PERSON")]
    assert match_entities(g, p, MatchCriteria(similarity_threshold=0.0)).tp
    assert not match_entities(g, p, MatchCriteria(similarity_threshold=0.0, containment=True)).tp


def test_prf_examples():
    s = scores_from_counts(2, 0, 0)
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
    s = scores_from_counts(3, 1, 2)
    assert s.precision == 0.75 and s.recall == 0.6 and abs(s.f1 - 2 * 0.75 * 0.6 / 1.35) < 1e-15
    s = scores_from_counts(0, 0, 5)
    assert (s.precision, s.recall, s.f1, s.precision_undefined, s.recall_undefined) == (0, 0, 0, True, False)


def test_aon_examples():
    a = SpanLabel("a", 0, 3, "Ann", "PERSON")
    b1, b2 = SpanLabel("b", 0, 3, "Ann", "PERSON"), SpanLabel("b", 10, 12, "76", "AGE")
    assert all_or_nothing_recall([a, b1, b2], [a, b1, b2]) == 1.0
    assert all_or_nothing_recall([a, b1, b2], [a, b1]) == 0.5
    assert all_or_nothing_recall([a, b1, b2], [a, b1], granularity="per_document_and_type") == pytest.approx(2 / 3)
    assert all_or_nothing_recall([a, b1, b2], [a, b1], types={"PERSON"}) == 1.0
    assert all_or_nothing_recall([], []) == 0.0


def test_hand_built_three_doc_report():
    gold = [
        SpanLabel("d1", 0, 8, "John Doe", "PERSON"),
        SpanLabel("d1", 12, 14, "45", "AGE"),
        SpanLabel("d2", 0, 15, "Mrs. Mary Smith", "PERSON"),
        SpanLabel("d3", 3, 5, "76", "AGE"),
    ]
    pred = [
        SpanLabel("d1", 0, 8, "John Doe", "PERSON"),
        SpanLabel("d2", 5, 15, "Mary Smith", "PERSON"),
        SpanLabel("d3", 40, 42, "76", "AGE"),
    ]
    r = evaluate(gold, pred)
    o = r.overall
    # by hand: tp 2 (John Doe, Mary Smith), fp 1 (misplaced 76), fn 2 (45, 76)
    assert (o.tp, o.fp, o.fn) == (2, 1, 2)
    assert (o.precision, o.recall) == (2 / 3, 0.5)
    assert o.all_or_nothing_recall == pytest.approx(1 / 3)
    assert r.per_type["PERSON"].recall == 1.0 and r.per_type["AGE"].recall == 0.0
    assert r.per_type["PERSON"].all_or_nothing_recall == 1.0
    assert r.per_type["AGE"].all_or_nothing_recall == 0.0
    table = r.table().splitlines()
    assert table[0].split()[0] == "Entity" and table[-1].startswith("OVERALL")
    assert json.loads(json.dumps(r.to_dict()))["overall"]["tp"] == 2


def test_matches_brute_force_seeded():
    rng = random.Random(1234)
    for _ in range(30):
        gold, pred = O.random_corpus(rng, max_docs=6, max_spans=12)
        check_against_oracle(gold, pred)


def check_against_oracle(gold, pred, tol=1e-12):
    tp, fp, fn, matched = O.brute_force(gold, pred)
    m = match_entities(gold, pred)
    s = precision_recall_f1(m)
    assert (s.tp, s.fp, s.fn) == (tp, fp, fn)
    for got, want in zip((s.precision, s.recall, s.f1), O.prf(tp, fp, fn)):
        assert abs(got - want) <= tol
    matched_ids = {id(g) for g, _ in m.tp}
    assert {id(gold[i]) for i in matched} == matched_ids
    for per_type in (False, True):
        gran = Granularity.PER_DOCUMENT_AND_TYPE if per_type else Granularity.PER_DOCUMENT
        assert abs(all_or_nothing_recall(gold, pred, granularity=gran, matching=m) - O.aon(gold, matched, per_type)) <= tol


# ---------------------------------------------------------------- properties


@given(st.text(max_size=20), st.text(max_size=20), st.text(max_size=20))
@settings(max_examples=200, deadline=None)
def test_similarity_properties(a, b, c):
    s = levenshtein_similarity(a, b)
    assert s == levenshtein_similarity(b, a) and 0.0 <= s <= 1.0
    assert (s == 1.0) == (" ".join(a.casefold().split()) == " ".join(b.casefold().split()))
    na, nb, nc = (" ".join(x.casefold().split()) for x in (a, b, c))
    assert O.edit_distance(na, nc) <= O.edit_distance(na, nb) + O.edit_distance(nb, nc)
    assert abs(s - O.similarity(a, b)) < 1e-12


@given(st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_invariants_on_random_corpora(seed):
    gold, pred = O.random_corpus(random.Random(seed), max_docs=5, max_spans=10)
    m = match_entities(gold, pred)
    s = precision_recall_f1(m)
    assert s.tp <= min(len(gold), len(pred)) and s.tp + s.fn == len(gold) and s.tp + s.fp == len(pred)
    if s.precision + s.recall > 0:
        assert min(s.precision, s.recall) - 1e-12 <= s.f1 <= max(s.precision, s.recall) + 1e-12
    # tightening never increases tp
    loose = len(match_entities(gold, pred, MatchCriteria(require_type=False, require_position=False, similarity_threshold=0.3)).tp)
    assert s.tp <= loose
    assert len(match_entities(gold, pred, MatchCriteria(similarity_threshold=0.9)).tp) <= s.tp
    # aon indicator <= unit recall, so macro aon <= macro recall
    per_doc = {}
    for g in gold:
        per_doc.setdefault(g.doc_id, [0, 0])[1] += 1
    for g, _ in m.tp:
        per_doc[g.doc_id][0] += 1
    if per_doc:
        macro_recall = sum(h / t for h, t in per_doc.values()) / len(per_doc)
        assert all_or_nothing_recall(gold, pred, matching=m) <= macro_recall + 1e-12
    check_against_oracle(gold, pred)


# ---------------------------------------------------------------- files


def test_span_files_round_trip_and_errors(tmp_path):
    spans = [SpanLabel("d", 0, 3, "Ann", "PERSON"), SpanLabel("e", 1, 3, "76", "AGE")]
    for name in ("s.json", "s.jsonl"):
        write_spans(tmp_path / name, spans)
        assert read_spans(tmp_path / name) == spans
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"doc_id": "d", "start": 0, "end": 3, "text": "x", "entity_type": "T"}\n{oops\n')
    with pytest.raises(SpanFileError, match=r"bad\.jsonl:2"):
        read_spans(bad)
    missing = tmp_path / "m.json"
    missing.write_text('[{"doc_id": "d"}]')
    with pytest.raises(SpanFileError, match="missing field"):
        read_spans(missing)
    with pytest.raises(SpanFileError):
        read_spans(tmp_path / "absent.json")
    (tmp_path / "tm.json").write_text('{"NAME": "PERSON"}')
    assert read_type_map(tmp_path / "tm.json") == {"NAME": "PERSON"}
    (tmp_path / "tm2.json").write_text("[1]")
    with pytest.raises(SpanFileError):
        read_type_map(tmp_path / "tm2.json")


I2B2 = """<?xml version="1.0" encoding="UTF-8" ?>
<deIdi2b2>
<TEXT><![CDATA[Record for John Doe, age 45, seen 2069-04-07.]]></TEXT>
<TAGS>
<NAME id="P0" start="11" end="19" text="John Doe" TYPE="PATIENT" comment="" />
<AGE id="P1" start="25" end="27" text="45" TYPE="AGE" comment="" />
<DATE id="P2" start="34" end="44" text="2069-04-07" TYPE="DATE" comment="" />
</TAGS>
</deIdi2b2>
"""


def test_i2b2_adapter(tmp_path):
    p = tmp_path / "110-01.xml"
    p.write_text(I2B2)
    text, spans = parse_i2b2(p)
    assert [(s.entity_type, s.text) for s in spans] == [("NAME", "John Doe"), ("AGE", "45"), ("DATE", "2069-04-07")]
    assert all(text[s.start : s.end] == s.text for s in spans)
    assert parse_i2b2(p, use_subtype=True)[1][0].entity_type == "PATIENT"
    assert {s.doc_id for s in read_i2b2_dir(tmp_path)} == {"110-01"}
    (tmp_path / "broken.xml").write_text("<deIdi2b2><TEXT>")
    with pytest.raises(SpanFileError):
        read_i2b2_dir(tmp_path)
