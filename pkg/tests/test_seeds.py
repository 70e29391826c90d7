from __future__ import annotations

import json
import random

import pytest

from tooldag.errors import FileUnreadable, FormatUnknown
from tooldag.seeds import (
    filter_multi_tool,
    infer_output_schema,
    ingest,
    ingest_with_report,
    load_builtin_seeds,
    make_record,
    partition,
    read_seed_records,
    write_seed_records,
)


def apigen_row(calls, query="q"):
    return {"query": query, "answers": json.dumps([{"name": n, "arguments": a} for n, a in calls])}


def write(tmp_path, rows, name="rows.json"):
    p = tmp_path / name
    p.write_text(json.dumps(rows))
    return p


def test_three_rows(tmp_path):
    rows = [apigen_row([("f", {"a": 1}), ("g", {"b": "x"}), ("h", {})]) for _ in range(3)]
    recs = ingest(write(tmp_path, rows), "apigen_style")
    assert len(recs) == 3
    assert recs[0].toolnames == ["f", "g", "h"]
    assert recs[0].extracted_tools[0].inputs[0].kind == "number"


def test_prose_answer_is_skipped(tmp_path):
    rows = [apigen_row([("f", {})]), {"query": "q", "answers": "Sure, the weather is nice."}]
    recs, skipped = ingest_with_report(write(tmp_path, rows), "apigen_style")
    assert len(recs) == 1 and [i for i, _ in skipped] == [1]


def test_toolace_python_calls(tmp_path):
    rows = [{"conversations": [
        {"from": "user", "value": "book it"},
        {"from": "assistant", "value": '[search(city="Rome", n=2), book(hotel_id="h1"), pay(amount=3.5)]'},
    ]}]
    (rec,) = ingest(write(tmp_path, rows), "toolace_style")
    assert rec.query == "book it"
    assert rec.answer_calls == (("search", {"city": "Rome", "n": 2}), ("book", {"hotel_id": "h1"}), ("pay", {"amount": 3.5}))


def test_jsonl_input(tmp_path):
    p = tmp_path / "rows.jsonl"
    p.write_text("\n".join(json.dumps(apigen_row([("f", {})])) for _ in range(2)))
    assert len(ingest(p, "apigen_style")) == 2


def test_errors(tmp_path):
    with pytest.raises(FileUnreadable):
        ingest(tmp_path / "missing.json", "apigen_style")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FileUnreadable):
        ingest(bad, "apigen_style")
    with pytest.raises(FormatUnknown):
        ingest(write(tmp_path, [], "x.json"), "mystery")
    with pytest.raises(FormatUnknown):
        ingest(write(tmp_path, {"meta": 1}, "y.json"), "apigen_style")


def test_filter_boundary():
    keep = make_record("s", "q", [("f", {}), ("g", {}), ("h", {})])
    drop = make_record("s", "q", [("f", {}), ("f", {}), ("g", {})])
    assert filter_multi_tool([keep, drop]) == [keep]


def test_filter_hand_labelled_fixture():
    calls = [
        ["f", "g", "h"], ["f", "f"], ["a", "b", "c", "d"], ["a"], ["x", "y", "x"],
        ["p", "q", "r"], [], ["m", "n"], ["u", "v", "w", "u"], ["k", "k", "k"],
    ]
    recs = [make_record("s", str(i), [(n, {}) for n in c]) for i, c in enumerate(calls)]
    kept = filter_multi_tool(recs)
    assert [r.query for r in kept] == ["0", "2", "5", "8"]
    assert filter_multi_tool(kept) == kept


def test_extracted_tools_are_distinct_and_match_calls():
    for rec in load_builtin_seeds():
        names = rec.toolnames
        assert len(names) == len(set(names))
        assert set(names) == {n for n, _ in rec.answer_calls}
        assert len(set(names)) >= 3


def test_partition_is_disjoint():
    recs = load_builtin_seeds()
    train, test = partition(recs, 0.25, random.Random(0))
    assert len(train) + len(test) == len(recs)
    assert not {id(r) for r in train} & {id(r) for r in test}
    assert len(test) == int(len(recs) * 0.25)


def test_output_schema_inference():
    tool = make_record("s", "q", [("get_weather", {"city": "x"})]).extracted_tools[0]
    a = infer_output_schema(tool, random.Random(1))
    b = infer_output_schema(tool, random.Random(1))
    assert a == b
    assert 4 <= len(a.outputs) <= 5
    assert len(set(a.output_names)) == len(a.outputs)
    assert not set(a.output_names) & set(a.input_names)


def test_distinct_tools_get_distinct_output_sets():
    rng = random.Random(3)
    seen = set()
    for i in range(1000):
        tool = make_record("s", "q", [(f"tool_{i}", {})]).extracted_tools[0]
        names = frozenset(infer_output_schema(tool, rng).output_names)
        assert names not in seen
        seen.add(names)


def test_seed_record_cache_round_trip(tmp_path):
    recs = load_builtin_seeds()[:5]
    p = tmp_path / "seeds.jsonl"
    write_seed_records(recs, p)
    assert read_seed_records(p) == recs
