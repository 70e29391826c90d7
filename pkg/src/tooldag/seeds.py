"""Seed tools harvested from existing function-calling corpora.

Tools are reconstructed from the calls in each row's answer, not from the
row's advertised tool list.  Supported layouts:

``apigen_style``
    rows with ``query`` and ``answers`` (a JSON list, or a string holding one,
    of ``{"name", "arguments"}`` objects).
``toolace_style``
    rows with ``conversations``; the first user turn is the query and the
    first assistant turn holds the calls, either as JSON or as a bracketed
    list of Python-style calls ``[f(a=1), g(b="x")]``.
``other``
    rows with ``query`` and ``answer`` or ``answers`` in the apigen shape.
"""

from __future__ import annotations

import ast
import json
import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

from .errors import FileUnreadable, FormatUnknown
from .model import FieldSchema, ToolSpec
from . import vocab
from .codec import tool_from_obj, tool_to_obj

log = logging.getLogger(__name__)

SOURCE_KINDS = ("apigen_style", "toolace_style", "other")


@dataclass(frozen=True)
class SeedRecord:
    source: str
    query: str
    answer_calls: tuple[tuple[str, dict], ...]
    extracted_tools: tuple[ToolSpec, ...]

    @property
    def toolnames(self) -> list[str]:
        return [t.name for t in self.extracted_tools]

    def arguments(self) -> dict[str, dict]:
        """Merged literal arguments per tool, first-seen value winning."""
        merged: dict[str, dict] = {}
        for name, args in self.answer_calls:
            slot = merged.setdefault(name, {})
            for k, v in args.items():
                slot.setdefault(k, v)
        return merged


def json_kind(value: Any) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, list):
        return "list"
    if isinstance(value, dict):
        return "object"
    return "string"


def make_record(source: str, query: str, calls: Sequence[tuple[str, dict]]) -> SeedRecord:
    """Normalise argument names and rebuild each distinct tool's input schema."""
    clean_calls = []
    for name, args in calls:
        clean = {}
        for k, v in args.items():
            key = vocab.ident(k)
            if key not in clean:
                clean[key] = v
        clean_calls.append((name, clean))
    tools: dict[str, dict[str, str]] = {}
    for name, args in clean_calls:
        fields = tools.setdefault(name, {})
        for k, v in args.items():
            fields.setdefault(k, json_kind(v))
    extracted = tuple(
        ToolSpec(
            name=name,
            description=f"{name.replace('_', ' ')} (taken from an answer call)",
            inputs=tuple(FieldSchema(k, kind, f"{k} argument") for k, kind in fields.items()),
            outputs=(),
            origin="seed",
        )
        for name, fields in tools.items()
    )
    return SeedRecord(source, query, tuple(clean_calls), extracted)


def _load_rows(path: Path) -> list:
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"{path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            return [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise FileUnreadable(f"{path}: neither JSON nor JSON-Lines ({exc})") from exc
    if isinstance(data, dict):
        for key in ("data", "rows", "records"):
            if isinstance(data.get(key), list):
                return data[key]
        raise FormatUnknown(f"{path}: top-level object without a row list")
    if not isinstance(data, list):
        raise FormatUnknown(f"{path}: expected a list of rows")
    return data


def _calls_from_json(answer: Any) -> list[tuple[str, dict]]:
    if isinstance(answer, str):
        answer = json.loads(answer)
    if isinstance(answer, dict):
        answer = [answer]
    if not isinstance(answer, list) or not answer:
        raise ValueError("answer is not a list of calls")
    calls = []
    for c in answer:
        if not isinstance(c, dict) or not isinstance(c.get("name"), str):
            raise ValueError("call without a name")
        args = c.get("arguments", c.get("parameters", {}))
        if isinstance(args, str):
            args = json.loads(args) if args.strip() else {}
        if not isinstance(args, dict):
            raise ValueError("call arguments are not an object")
        calls.append((c["name"], args))
    return calls


def _calls_from_python(text: str) -> list[tuple[str, dict]]:
    tree = ast.parse(text.strip(), mode="eval").body
    items = tree.elts if isinstance(tree, (ast.List, ast.Tuple)) else [tree]
    calls = []
    for node in items:
        if not isinstance(node, ast.Call) or node.args:
            raise ValueError("expected keyword-only calls")
        name = ast.unparse(node.func)
        calls.append((name, {kw.arg: ast.literal_eval(kw.value) for kw in node.keywords}))
    if not calls:
        raise ValueError("no calls")
    return calls


def _parse_row(row: Any, kind: str) -> tuple[str, list[tuple[str, dict]]]:
    if not isinstance(row, dict):
        raise ValueError("row is not an object")
    if kind == "toolace_style":
        turns = row.get("conversations") or []
        query = next((t.get("value", "") for t in turns if t.get("from") in ("user", "human")), None)
        answer = next((t.get("value", "") for t in turns if t.get("from") in ("assistant", "gpt")), None)
        if query is None or answer is None:
            raise ValueError("conversation lacks a user or assistant turn")
        try:
            calls = _calls_from_json(answer)
        except (ValueError, json.JSONDecodeError):
            try:
                calls = _calls_from_python(answer)
            except (SyntaxError, ValueError) as exc:
                raise ValueError(f"assistant turn is not a call list: {exc}") from None
        return query, calls
    query = row.get("query", "")
    answer = row.get("answers", row.get("answer"))
    if answer is None:
        raise ValueError("row has no answer field")
    return query, _calls_from_json(answer)


def ingest_with_report(path: Union[str, Path], source_kind: str) -> tuple[list[SeedRecord], list[tuple[int, str]]]:
    """Like :func:`ingest` but also return ``(row_index, reason)`` for every skipped row."""
    if source_kind not in SOURCE_KINDS:
        raise FormatUnknown(f"unknown source kind {source_kind!r}")
    rows = _load_rows(Path(path))
    records, skipped = [], []
    for i, row in enumerate(rows):
        try:
            query, calls = _parse_row(row, source_kind)
            records.append(make_record(source_kind, query, calls))
        except (ValueError, TypeError, json.JSONDecodeError, SyntaxError) as exc:
            log.info("skipping row %d of %s: %s", i, path, exc)
            skipped.append((i, str(exc)))
    return records, skipped


def ingest(path: Union[str, Path], source_kind: str) -> list[SeedRecord]:
    return ingest_with_report(path, source_kind)[0]


def filter_multi_tool(records: Iterable[SeedRecord], min_distinct: int = 3) -> list[SeedRecord]:
    """Keep records whose answer uses at least ``min_distinct`` distinct tools."""
    return [r for r in records if len({name for name, _ in r.answer_calls}) >= min_distinct]


def partition(records: Sequence[SeedRecord], test_fraction: float, rng: random.Random):
    """Split records into disjoint (train, test) lists by shuffled position."""
    if not 0 <= test_fraction <= 1:
        raise ValueError("test_fraction must lie in [0, 1]")
    order = list(range(len(records)))
    rng.shuffle(order)
    n_test = int(len(records) * test_fraction)
    test_idx = set(order[:n_test])
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


_KIND_WEIGHTS = (("string", 4), ("number", 3), ("boolean", 1), ("list", 1), ("object", 1))


def random_kind(rng: random.Random) -> str:
    kinds, weights = zip(*_KIND_WEIGHTS)
    return rng.choices(kinds, weights=weights)[0]


def random_outputs(rng: random.Random, stem: Optional[str] = None, bounds: tuple[int, int] = (4, 5),
                   avoid: Iterable[str] = ()) -> tuple[FieldSchema, ...]:
    """Draw 4-5 uniquely named output fields (the bounds are configurable)."""
    n = rng.randint(*bounds)
    taken = set(avoid)
    fields = []
    while len(fields) < n:
        noun = rng.choice(vocab.NOUNS)
        name = f"{stem}_{noun}_{vocab.suffix(rng)}" if stem and not fields else f"{noun}_{vocab.suffix(rng)}"
        if name in taken:
            continue
        taken.add(name)
        fields.append(FieldSchema(name, random_kind(rng), f"{noun.replace('_', ' ')} reported by the tool"))
    return tuple(fields)


def infer_output_schema(tool: ToolSpec, rng: random.Random, bounds: tuple[int, int] = (4, 5)) -> ToolSpec:
    """Give a seed tool an invented output schema."""
    if tool.origin != "seed":
        raise ValueError(f"{tool.name} is not a seed tool")
    stem = "_".join(vocab.stems(tool.name)[:2])
    return replace(tool, outputs=random_outputs(rng, stem=stem, bounds=bounds, avoid=tool.input_names))


def record_to_obj(r: SeedRecord) -> dict:
    return {
        "source": r.source,
        "query": r.query,
        "answer_calls": [{"name": n, "arguments": a} for n, a in r.answer_calls],
        "extracted_tools": [tool_to_obj(t) for t in r.extracted_tools],
    }


def record_from_obj(obj: dict) -> SeedRecord:
    return SeedRecord(
        source=obj["source"],
        query=obj["query"],
        answer_calls=tuple((c["name"], c["arguments"]) for c in obj["answer_calls"]),
        extracted_tools=tuple(tool_from_obj(t) for t in obj["extracted_tools"]),
    )


def write_seed_records(records: Iterable[SeedRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_obj(r), ensure_ascii=False) + "\n")


def read_seed_records(path: Union[str, Path]) -> list[SeedRecord]:
    with open(path, encoding="utf-8") as fh:
        return [record_from_obj(json.loads(line)) for line in fh if line.strip()]


def builtin_seed_path() -> Path:
    return Path(__file__).with_name("data") / "seed_fixture.json"


def load_builtin_seeds() -> list[SeedRecord]:
    """Bundled apigen-style fixture so the pipeline runs offline."""
    return filter_multi_tool(ingest(builtin_seed_path(), "apigen_style"))
