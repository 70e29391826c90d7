"""Layered rule-based verification of plans, calls and observations.

Layers run in a fixed order (json, ast, symbolic, adherence, observation) and
:func:`validate_sample` stops at the first layer that reports anything.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .codec import loads_strict, plan_from_obj, serialize_plan, transcript_from_obj
from .errors import PlanFormatError
from .model import (
    Observation,
    PlanDag,
    SymbolicRef,
    ToolSpec,
    Transcript,
    Turn,
    json_equal,
    topological_layers,
    validate_structure,
)

LAYERS = ("json", "ast", "symbolic", "adherence", "observation")


@dataclass(frozen=True)
class Violation:
    layer: str
    message: str
    task_id: Optional[str] = None
    code: str = ""
    turn_index: Optional[int] = None

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"unknown layer {self.layer!r}")
        if not self.message:
            raise ValueError("violation message must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)


def _index(tools) -> dict[str, ToolSpec]:
    if isinstance(tools, Mapping):
        return dict(tools)
    return {t.name: t for t in tools}


def check_json(text: str) -> list[Violation]:
    try:
        json.loads(text)
    except (json.JSONDecodeError, TypeError, RecursionError) as exc:
        return [Violation("json", f"invalid JSON: {exc}", code="BadJson")]
    return []


def check_ast(dag: PlanDag, tools, lenient: bool = False, prior_task_ids: Iterable[str] = ()) -> list[Violation]:
    """Tool names must exist and payload keys must match the tool's inputs.

    Structural problems other than dangling refs (left to the symbolic layer)
    are reported here too.  With ``lenient`` extra payload keys are allowed.
    """
    index = _index(tools)
    out = [
        Violation("ast", v.message, v.task_id, v.kind)
        for v in validate_structure(dag, prior_task_ids)
        if v.kind != "DanglingRef"
    ]
    for task in dag.tasks:
        tool = index.get(task.toolname)
        if tool is None:
            out.append(Violation("ast", f"tool {task.toolname!r} is not available", task.task_id, "UnknownTool"))
            continue
        names = set(tool.input_names)
        if not lenient:
            for key in sorted(set(task.payload) - names):
                out.append(Violation("ast", f"{task.toolname} has no parameter {key!r}", task.task_id, "BadArgName"))
        for key in tool.input_names:
            if key not in task.payload:
                out.append(Violation("ast", f"{task.toolname} is missing parameter {key!r}", task.task_id, "MissingArg"))
    return out


def check_symbolic_refs(dag: PlanDag, tools, prior_dags: Sequence[PlanDag] = ()) -> list[Violation]:
    """Every ref must point at a known task whose tool outputs the referenced key."""
    index = _index(tools)
    out = []
    prior: dict[str, Any] = {}
    for d in prior_dags:
        for t in d.tasks:
            prior[t.task_id] = t
    for task in dag.tasks:
        for key, ref in task.refs():
            source = dag.get(ref.task_id)
            if source is not None:
                if ref.task_id not in task.dependencies:
                    out.append(Violation("symbolic", f"{key}={ref} reads {ref.task_id} without depending on it",
                                         task.task_id, "UndeclaredDependency"))
                    continue
            else:
                source = prior.get(ref.task_id)
            if source is None:
                out.append(Violation("symbolic", f"{key}={ref} points at an unknown task", task.task_id, "DanglingRef"))
                continue
            tool = index.get(source.toolname)
            if tool is None or ref.output_key not in tool.output_names:
                out.append(Violation("symbolic", f"{key}={ref}: {source.toolname} has no output {ref.output_key!r}",
                                     task.task_id, "UnknownOutputKey"))
    return out


def check_adherence(turn: Turn, prior_observations: Optional[Mapping[str, Observation]] = None) -> list[Violation]:
    """Calls must follow the plan: one per task, dependency order, values matching.

    Tasks downstream of a failed observation may have no call.
    """
    prior = dict(prior_observations or {})
    out = []
    dag = turn.dag
    seen: dict[str, int] = {}
    for i, call in enumerate(turn.tool_calls):
        task = dag.get(call.task_id)
        if task is None:
            out.append(Violation("adherence", f"call for {call.task_id} is not in the plan", call.task_id, "ExtraCall"))
            continue
        if call.task_id in seen:
            out.append(Violation("adherence", f"{call.task_id} called twice", call.task_id, "DuplicateCall"))
            continue
        seen[call.task_id] = i
        if call.toolname != task.toolname:
            out.append(Violation("adherence", f"called {call.toolname}, plan says {task.toolname}",
                                 call.task_id, "WrongTool"))
        for dep in task.dependencies:
            if dep not in seen:
                out.append(Violation("adherence", f"{call.task_id} ran before its dependency {dep}",
                                     call.task_id, "OrderViolation"))
        if set(call.payload) != set(task.payload):
            out.append(Violation("adherence", "call arguments differ from the planned payload",
                                 call.task_id, "PayloadKeys"))
    current = {o.task_id: o for o in turn.observations}
    for call in turn.tool_calls:
        task = dag.get(call.task_id)
        if task is None:
            continue
        for key, planned in task.payload.items():
            if key not in call.payload:
                continue
            actual = call.payload[key]
            if isinstance(planned, SymbolicRef):
                source = current.get(planned.task_id) if dag.get(planned.task_id) else prior.get(planned.task_id)
                if source is None or not source.ok or not isinstance(source.value, Mapping) \
                        or planned.output_key not in source.value:
                    out.append(Violation("adherence", f"{key}={planned} has no observed value to use",
                                         call.task_id, "UnresolvedValue"))
                elif not json_equal(actual, source.value[planned.output_key]):
                    out.append(Violation("adherence", f"{key} does not carry the value observed for {planned}",
                                         call.task_id, "ValueMismatch"))
            elif not json_equal(actual, planned):
                out.append(Violation("adherence", f"{key} differs from the planned literal", call.task_id,
                                     "LiteralMismatch"))

    failed = {o.task_id for o in turn.observations if not o.ok}
    try:
        layers = topological_layers(dag)
    except Exception:  # cycles are reported by the ast layer
        layers = [dag.task_ids]
    blocked: set[str] = set()
    for layer in layers:
        for tid in layer:
            task = dag.get(tid)
            if any(d in failed or d in blocked for d in task.dependencies):
                blocked.add(tid)
                continue
            if tid not in seen:
                out.append(Violation("adherence", f"no call for planned task {tid}", tid, "MissingCall"))
    for tid in blocked & set(seen):
        out.append(Violation("adherence", f"{tid} ran although a dependency failed", tid, "RanAfterFailure"))
    return out


_KIND_TYPES = {
    "string": lambda v: isinstance(v, str),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}


def check_observation(turn: Turn, tools) -> list[Violation]:
    """Observations pair 1:1 with calls and ok values match the output schema."""
    index = _index(tools)
    out = []
    calls = {c.task_id: c for c in turn.tool_calls}
    seen = set()
    for obs in turn.observations:
        if obs.task_id not in calls:
            out.append(Violation("observation", f"observation for {obs.task_id} has no call", obs.task_id, "Orphan"))
            continue
        if obs.task_id in seen:
            out.append(Violation("observation", f"{obs.task_id} observed twice", obs.task_id, "Duplicate"))
            continue
        seen.add(obs.task_id)
        if not obs.ok:
            continue
        tool = index.get(calls[obs.task_id].toolname)
        if tool is None:
            out.append(Violation("observation", "observation for an unknown tool", obs.task_id, "UnknownTool"))
            continue
        if not isinstance(obs.value, dict):
            out.append(Violation("observation", "ok observation must be a JSON object", obs.task_id, "NotObject"))
            continue
        expected = set(tool.output_names)
        got = set(obs.value)
        for key in sorted(expected - got):
            out.append(Violation("observation", f"missing output {key!r}", obs.task_id, "MissingKey"))
        for key in sorted(got - expected):
            out.append(Violation("observation", f"unexpected output {key!r}", obs.task_id, "ExtraKey"))
        for f in tool.outputs:
            if f.name in obs.value and not _KIND_TYPES[f.kind](obs.value[f.name]):
                out.append(Violation("observation", f"{f.name} should be a {f.kind}", obs.task_id, "KindMismatch"))
    for tid in calls:
        if tid not in seen:
            out.append(Violation("observation", f"call {tid} has no observation", tid, "MissingObservation"))
    return out


def _turn_layers(transcript: Transcript, lenient: bool):
    """Yield per-layer violation lists, in layer order, for every turn."""
    tools = {t.name: t for t in transcript.system_tools}
    results = {layer: [] for layer in LAYERS[1:]}
    prior_dags: list[PlanDag] = []
    prior_obs: dict[str, Observation] = {}
    for i, turn in enumerate(transcript.turns):
        prior_ids = [tid for d in prior_dags for tid in d.task_ids]
        tag = lambda vs: [Violation(v.layer, v.message, v.task_id, v.code, i) for v in vs]  # noqa: E731
        results["ast"] += tag(check_ast(turn.dag, tools, lenient, prior_ids))
        results["symbolic"] += tag(check_symbolic_refs(turn.dag, tools, prior_dags))
        results["adherence"] += tag(check_adherence(turn, prior_obs))
        results["observation"] += tag(check_observation(turn, tools))
        prior_dags.append(turn.dag)
        for o in turn.observations:
            prior_obs[o.task_id] = o
    return results


def validate_sample(transcript: Transcript, lenient: bool = False) -> list[Violation]:
    """Run every layer in order; return the violations of the first failing layer."""
    json_v = []
    for i, turn in enumerate(transcript.turns):
        for v in check_json(serialize_plan(turn.dag)):
            json_v.append(Violation(v.layer, v.message, v.task_id, v.code, i))
    if json_v:
        return json_v
    results = _turn_layers(transcript, lenient)
    for layer in LAYERS[1:]:
        if results[layer]:
            return results[layer]
    return []


def validate_record(record: Union[str, Mapping], lenient: bool = False) -> list[Violation]:
    """Validate one corpus record, raw line or decoded object.

    Text-valued ``dag``, ``tool_calls`` and ``observations`` fields (as a model
    would emit them) are JSON-checked before decoding.
    """
    if isinstance(record, str):
        bad = check_json(record)
        if bad:
            return bad
        record = json.loads(record)
    if not isinstance(record, Mapping):
        return [Violation("json", "record is not a JSON object", code="NotObject")]
    record = dict(record)
    turns = []
    for i, raw in enumerate(record.get("turns") or []):
        raw = dict(raw) if isinstance(raw, Mapping) else raw
        if isinstance(raw, dict):
            for key in ("dag", "tool_calls", "observations"):
                if isinstance(raw.get(key), str):
                    try:
                        raw[key] = loads_strict(raw[key])
                    except PlanFormatError as exc:
                        return [Violation("json", f"turn {i} {key}: {exc}", code="BadJson", turn_index=i)]
        turns.append(raw)
    record["turns"] = turns
    try:
        transcript = transcript_from_obj(record)
    except PlanFormatError as exc:
        return [Violation("json", f"bad task list: {exc}", code=type(exc).__name__)]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        return [Violation("json", f"record does not match the corpus schema: {exc!r}", code="Schema")]
    return validate_sample(transcript, lenient)
