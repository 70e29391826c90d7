"""Parsing and serialization for task lists, tagged transcripts and corpus files."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

from .errors import (
    BadFieldType,
    BadRefSyntax,
    BadTaskId,
    DecodeError,
    MalformedJson,
    MissingField,
    MissingTag,
    UnclosedTag,
    UnknownTag,
)
from .model import (
    FieldSchema,
    Observation,
    PlanDag,
    PlanTask,
    ScenarioKind,
    SymbolicRef,
    TASK_ID_RE,
    ToolCall,
    ToolSpec,
    Transcript,
    Turn,
    topological_layers,
)

log = logging.getLogger(__name__)

REF_RE = re.compile(r"\$([0-9]+)\.([A-Za-z_][A-Za-z0-9_]*)")
TAGS = ("think", "DAG", "tool_call", "obs", "response")
TASK_FIELDS = ("task_id", "toolname", "payload", "dependencies")

_OPEN_RE = re.compile(r"<(" + "|".join(TAGS) + r")>")
_ANY_TAG_RE = re.compile(r"</?([A-Za-z_][A-Za-z0-9_]*)>")
_DAG_WRAP_RE = re.compile(r"\s*<DAG>(.*)</DAG>\s*", re.S)


# --- task lists -------------------------------------------------------------


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(name):
    raise ValueError(f"non-standard constant {name}")


def _finite_float(text):
    value = float(text)
    if math.isinf(value):
        raise ValueError(f"number {text} overflows")
    return value


def loads_strict(text: str) -> Any:
    """``json.loads`` that rejects duplicate keys and NaN/Infinity."""
    try:
        return json.loads(
            text, object_pairs_hook=_reject_duplicates, parse_constant=_reject_constant, parse_float=_finite_float
        )
    except json.JSONDecodeError as exc:
        raise MalformedJson(exc.pos, exc.msg) from None
    except (ValueError, RecursionError) as exc:
        raise MalformedJson(0, str(exc)) from None


def decode_value(value: Any) -> Any:
    """Turn a raw payload value into a SymbolicRef when it matches the ref grammar."""
    if isinstance(value, str):
        m = REF_RE.fullmatch(value)
        if m:
            ordinal = int(m.group(1))
            if ordinal < 1:
                raise BadRefSyntax(value)
            return SymbolicRef(ordinal, m.group(2))
    return value


def parse_ref(text: str) -> SymbolicRef:
    ref = decode_value(text)
    if not isinstance(ref, SymbolicRef):
        raise BadRefSyntax(text)
    return ref


def encode_value(value: Any) -> Any:
    if isinstance(value, SymbolicRef):
        return str(value)
    return _sorted_json(value)


def _sorted_json(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _sorted_json(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_sorted_json(v) for v in value]
    return value


def plan_from_obj(obj: Any) -> PlanDag:
    """Build a PlanDag from an already-decoded JSON task list."""
    if not isinstance(obj, list):
        raise MalformedJson(0, "task list must be a JSON array")
    tasks = []
    for i, raw in enumerate(obj):
        if not isinstance(raw, dict):
            raise BadFieldType(i, "task", "an object")
        for name in TASK_FIELDS:
            if name not in raw:
                raise MissingField(i, name)
        tid = raw["task_id"]
        if not isinstance(tid, str) or not TASK_ID_RE.fullmatch(tid):
            raise BadTaskId(tid)
        if not isinstance(raw["toolname"], str):
            raise BadFieldType(i, "toolname", "a string")
        payload = raw["payload"]
        if not isinstance(payload, dict):
            raise BadFieldType(i, "payload", "an object")
        deps = raw["dependencies"]
        if not isinstance(deps, list):
            raise BadFieldType(i, "dependencies", "an array")
        for d in deps:
            if not isinstance(d, str) or not TASK_ID_RE.fullmatch(d):
                raise BadTaskId(d)
        tasks.append(
            PlanTask(
                task_id=tid,
                toolname=raw["toolname"],
                payload={k: decode_value(v) for k, v in payload.items()},
                dependencies=tuple(deps),
            )
        )
    return PlanDag(tuple(tasks))


def plan_to_obj(dag: PlanDag) -> list[dict]:
    return [
        {
            "task_id": t.task_id,
            "toolname": t.toolname,
            "payload": {k: encode_value(t.payload[k]) for k in sorted(t.payload)},
            "dependencies": list(t.dependencies),
        }
        for t in dag.tasks
    ]


def parse_plan(text: Union[str, bytes]) -> PlanDag:
    """Parse a task list, either a bare JSON array or the body of a ``<DAG>`` tag.

    Raises a :class:`~tooldag.errors.PlanFormatError` subclass on bad input and
    nothing else.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(exc.start, "invalid UTF-8") from None
    m = _DAG_WRAP_RE.fullmatch(text)
    if m:
        text = m.group(1)
    return plan_from_obj(loads_strict(text))


def serialize_plan(dag: PlanDag) -> str:
    return json.dumps(plan_to_obj(dag), separators=(",", ":"), ensure_ascii=False, allow_nan=False)


# --- tagged transcripts -------------------------------------------------------


@dataclass(frozen=True)
class TagSegment:
    tag: str
    body: str
    span: tuple[int, int]


def parse_transcript(text: str, expect_think: bool = False) -> list[TagSegment]:
    """Extract ``<tag>...</tag>`` blocks for the five recognised tags.

    Text between blocks is skipped.  Inside a block, any tag-shaped token other
    than the matching close tag raises :class:`UnknownTag`.
    """
    segments: list[TagSegment] = []
    pos = 0
    while True:
        m = _OPEN_RE.search(text, pos)
        if m is None:
            break
        tag = m.group(1)
        start = m.end()
        inner = _ANY_TAG_RE.search(text, start)
        if inner is None:
            raise UnclosedTag(tag, m.start())
        if inner.group(0) != f"</{tag}>":
            raise UnknownTag(inner.group(1), inner.start())
        segments.append(TagSegment(tag, text[start:inner.start()], (start, inner.start())))
        pos = inner.end()
    if expect_think and not any(s.tag == "think" for s in segments):
        raise MissingTag("think")
    return segments


def render_turn(turn: Turn, include_think: bool = True) -> str:
    """Render the assistant side of a turn in the tagged format.

    Calls and observations are grouped by DAG layer, one ``<tool_call>`` /
    ``<obs>`` pair per layer.
    """
    parts = []
    if include_think:
        parts.append(f"<think>{turn.think or ''}</think>")
    parts.append(f"<DAG>{serialize_plan(turn.dag)}</DAG>")
    layer_of = {}
    for i, layer in enumerate(topological_layers(turn.dag)):
        for tid in layer:
            layer_of[tid] = i
    groups: dict[int, tuple[list, list]] = {}
    for call in turn.tool_calls:
        groups.setdefault(layer_of.get(call.task_id, 0), ([], []))[0].append(call_to_obj(call))
    for obs in turn.observations:
        groups.setdefault(layer_of.get(obs.task_id, 0), ([], []))[1].append(observation_to_obj(obs))
    for i in sorted(groups):
        calls, obs = groups[i]
        parts.append(f"<tool_call>{_dumps(calls)}</tool_call>")
        parts.append(f"<obs>{_dumps(obs)}</obs>")
    if turn.response is not None:
        parts.append(f"<response>{turn.response}</response>")
    return "\n".join(parts)


# --- corpus records -----------------------------------------------------------


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def tool_to_obj(tool: ToolSpec) -> dict:
    return {
        "name": tool.name,
        "description": tool.description,
        "inputs": [{"name": f.name, "kind": f.kind, "description": f.description} for f in tool.inputs],
        "outputs": [{"name": f.name, "kind": f.kind, "description": f.description} for f in tool.outputs],
        "origin": tool.origin,
    }


def tool_from_obj(obj: dict) -> ToolSpec:
    return ToolSpec(
        name=obj["name"],
        description=obj.get("description", ""),
        inputs=tuple(FieldSchema(**f) for f in obj.get("inputs", [])),
        outputs=tuple(FieldSchema(**f) for f in obj.get("outputs", [])),
        origin=obj.get("origin", "synthetic"),
    )


def call_to_obj(call: ToolCall) -> dict:
    return {"task_id": call.task_id, "toolname": call.toolname, "payload": _sorted_json(dict(call.payload))}


def observation_to_obj(obs: Observation) -> dict:
    out = {"task_id": obs.task_id, "status": obs.status}
    if obs.ok:
        out["value"] = _sorted_json(obs.value)
    return out


def turn_to_obj(turn: Turn) -> dict:
    return {
        "user_query": turn.user_query,
        "think": turn.think,
        "dag": plan_to_obj(turn.dag),
        "tool_calls": [call_to_obj(c) for c in turn.tool_calls],
        "observations": [observation_to_obj(o) for o in turn.observations],
        "response": turn.response,
        "scenario": turn.scenario.value if turn.scenario else None,
    }


def turn_from_obj(obj: dict) -> Turn:
    return Turn(
        user_query=obj["user_query"],
        think=obj.get("think"),
        dag=plan_from_obj(obj["dag"]),
        tool_calls=tuple(ToolCall(c["task_id"], c["toolname"], c.get("payload", {})) for c in obj.get("tool_calls", [])),
        observations=tuple(
            Observation(o["task_id"], o.get("status", "ok"), o.get("value")) for o in obj.get("observations", [])
        ),
        response=obj.get("response"),
        scenario=ScenarioKind(obj["scenario"]) if obj.get("scenario") else None,
    )


def transcript_to_obj(t: Transcript) -> dict:
    return {
        "sample_id": t.sample_id,
        "system_tools": [tool_to_obj(x) for x in t.system_tools],
        "turns": [turn_to_obj(x) for x in t.turns],
        "meta": dict(t.meta),
    }


def transcript_from_obj(obj: dict) -> Transcript:
    if not isinstance(obj, dict):
        raise ValueError("corpus line must be a JSON object")
    return Transcript(
        sample_id=str(obj["sample_id"]),
        system_tools=tuple(tool_from_obj(x) for x in obj["system_tools"]),
        turns=tuple(turn_from_obj(x) for x in obj["turns"]),
        meta=obj.get("meta", {}),
    )


def dumps_transcript(t: Transcript) -> str:
    return _dumps(transcript_to_obj(t))


def read_corpus(path: Union[str, Path], on_error: str = "raise") -> Iterator[Transcript]:
    """Stream transcripts from a JSON-Lines file.

    ``on_error`` is ``"raise"`` (abort with :class:`DecodeError`) or ``"skip"``
    (log and continue).  Blank lines are ignored.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield transcript_from_obj(json.loads(line))
            except Exception as exc:  # noqa: BLE001 - any decode failure is per-line
                err = DecodeError(lineno, f"{type(exc).__name__}: {exc}")
                if on_error == "raise":
                    raise err from exc
                log.warning("skipping %s", err)


def write_corpus(transcripts: Iterable[Transcript], path: Union[str, Path]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(dumps_transcript(t) + "\n")
            n += 1
    return n
