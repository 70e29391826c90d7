"""In-memory types for tools, plan DAGs, observations and transcripts.

Payload values are either plain JSON values (literals) or :class:`SymbolicRef`
instances.  A ref only ever appears as a top-level payload value.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

from .errors import CycleDetected

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
TASK_ID_RE = re.compile(r"task_([1-9][0-9]*)")

FIELD_KINDS = ("string", "number", "boolean", "list", "object")
TOOL_ORIGINS = ("seed", "synthetic", "distractor")
OBS_STATUSES = ("ok", "timeout", "runtime_error")


class ScenarioKind(str, Enum):
    IRRELEVANT = "irrelevant"
    DEPENDENT = "dependent"
    TOOL_ERROR = "tool_error"


@dataclass(frozen=True)
class FieldSchema:
    name: str
    kind: str
    description: str = ""

    def __post_init__(self):
        if not IDENT_RE.fullmatch(self.name):
            raise ValueError(f"field name {self.name!r} is not an identifier")
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    inputs: tuple[FieldSchema, ...] = ()
    outputs: tuple[FieldSchema, ...] = ()
    origin: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.origin not in TOOL_ORIGINS:
            raise ValueError(f"unknown tool origin {self.origin!r}")
        for label, fields in (("input", self.inputs), ("output", self.outputs)):
            names = [f.name for f in fields]
            if len(set(names)) != len(names):
                raise ValueError(f"{self.name}: duplicate {label} names")

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.inputs)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.outputs)

    def output(self, name: str) -> Optional[FieldSchema]:
        for f in self.outputs:
            if f.name == name:
                return f
        return None


@dataclass(frozen=True)
class SymbolicRef:
    """Binding of a parameter to ``output_key`` of task ``task_<task_ordinal>``."""

    task_ordinal: int
    output_key: str

    def __post_init__(self):
        if self.task_ordinal < 1:
            raise ValueError("task ordinals are positive")

    @property
    def task_id(self) -> str:
        return task_id(self.task_ordinal)

    def __str__(self) -> str:
        return f"${self.task_ordinal}.{self.output_key}"


def task_id(ordinal: int) -> str:
    return f"task_{ordinal}"


def task_ordinal(tid: str) -> int:
    m = TASK_ID_RE.fullmatch(tid)
    if m is None:
        raise ValueError(f"bad task id {tid!r}")
    return int(m.group(1))


@dataclass(frozen=True)
class PlanTask:
    task_id: str
    toolname: str
    payload: Mapping[str, Any] = field(default_factory=dict)
    dependencies: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "payload", dict(self.payload))
        object.__setattr__(self, "dependencies", tuple(self.dependencies))

    @property
    def ordinal(self) -> int:
        return task_ordinal(self.task_id)

    def refs(self) -> list[tuple[str, SymbolicRef]]:
        return [(k, v) for k, v in self.payload.items() if isinstance(v, SymbolicRef)]


@dataclass(frozen=True)
class PlanDag:
    tasks: tuple[PlanTask, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def task_ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]

    def get(self, tid: str) -> Optional[PlanTask]:
        for t in self.tasks:
            if t.task_id == tid:
                return t
        return None

    def edges(self) -> list[tuple[str, str]]:
        """Dependency edges ``(parent, child)`` between tasks of this DAG."""
        ids = set(self.task_ids)
        return [(d, t.task_id) for t in self.tasks for d in t.dependencies if d in ids]

    @property
    def toolnames(self) -> set[str]:
        return {t.toolname for t in self.tasks}


@dataclass(frozen=True)
class Observation:
    task_id: str
    status: str = "ok"
    value: Any = None

    def __post_init__(self):
        if self.status not in OBS_STATUSES:
            raise ValueError(f"unknown observation status {self.status!r}")
        if self.status != "ok" and self.value is not None:
            raise ValueError("failed observations carry no value")

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class ToolCall:
    task_id: str
    toolname: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "payload", dict(self.payload))


@dataclass(frozen=True)
class Turn:
    user_query: str
    dag: PlanDag
    think: Optional[str] = None
    tool_calls: tuple[ToolCall, ...] = ()
    observations: tuple[Observation, ...] = ()
    response: Optional[str] = None
    scenario: Optional[ScenarioKind] = None

    def __post_init__(self):
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        object.__setattr__(self, "observations", tuple(self.observations))
        if self.scenario is not None:
            object.__setattr__(self, "scenario", ScenarioKind(self.scenario))


@dataclass(frozen=True)
class Transcript:
    sample_id: str
    system_tools: tuple[ToolSpec, ...]
    turns: tuple[Turn, ...]
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "system_tools", tuple(self.system_tools))
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "meta", dict(self.meta))

    def tool(self, name: str) -> Optional[ToolSpec]:
        for t in self.system_tools:
            if t.name == name:
                return t
        return None

    @property
    def scenario(self) -> Optional[ScenarioKind]:
        for turn in self.turns:
            if turn.scenario is not None:
                return turn.scenario
        return None


def json_equal(a: Any, b: Any, rel_tol: float = 1e-9) -> bool:
    """JSON value equality: exact for ints, relative tolerance for other numbers."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        return math.isclose(a, b, rel_tol=rel_tol, abs_tol=0.0)
    if isinstance(a, SymbolicRef) or isinstance(b, SymbolicRef):
        return a == b
    if isinstance(a, str) or isinstance(b, str) or a is None or b is None:
        return type(a) is type(b) and a == b
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(json_equal(x, y, rel_tol) for x, y in zip(a, b))
    if isinstance(a, Mapping) and isinstance(b, Mapping):
        return a.keys() == b.keys() and all(json_equal(a[k], b[k], rel_tol) for k in a)
    return False


def payload_equal(a: Mapping[str, Any], b: Mapping[str, Any]) -> bool:
    return a.keys() == b.keys() and all(json_equal(a[k], b[k]) for k in a)


def topological_layers(dag: PlanDag) -> list[list[str]]:
    """Group task ids by the length of their longest dependency chain.

    Dependencies on tasks outside ``dag`` are ignored.  Within a layer, tasks
    keep their stored order.
    """
    ids = dag.task_ids
    known = set(ids)
    deps = {t.task_id: [d for d in t.dependencies if d in known] for t in dag.tasks}
    depth: dict[str, int] = {}
    visiting: set[str] = set()

    def visit(tid: str, stack: list[str]) -> int:
        if tid in depth:
            return depth[tid]
        if tid in visiting:
            raise CycleDetected(stack[stack.index(tid):])
        visiting.add(tid)
        stack.append(tid)
        d = 1 + max((visit(p, stack) for p in deps[tid]), default=-1)
        stack.pop()
        visiting.discard(tid)
        depth[tid] = d
        return d

    for tid in ids:
        visit(tid, [])
    n_layers = 1 + max(depth.values(), default=-1)
    layers: list[list[str]] = [[] for _ in range(n_layers)]
    for tid in ids:
        layers[depth[tid]].append(tid)
    return layers


@dataclass(frozen=True)
class StructureViolation:
    kind: str
    task_id: Optional[str]
    message: str


def validate_structure(dag: PlanDag, prior_task_ids: Iterable[str] = ()) -> list[StructureViolation]:
    """Return every broken PlanDag invariant; an empty list means the DAG is valid.

    ``prior_task_ids`` are tasks from earlier turns that refs may address
    without a declared dependency.
    """
    out: list[StructureViolation] = []
    prior = set(prior_task_ids)
    seen: set[str] = set()
    position = {}
    for i, t in enumerate(dag.tasks):
        if not TASK_ID_RE.fullmatch(t.task_id):
            out.append(StructureViolation("BadTaskId", t.task_id, f"malformed task id {t.task_id!r}"))
        if t.task_id in seen:
            out.append(StructureViolation("DuplicateTaskId", t.task_id, f"{t.task_id} appears twice"))
        seen.add(t.task_id)
        position.setdefault(t.task_id, i)

    for i, t in enumerate(dag.tasks):
        if len(set(t.dependencies)) != len(t.dependencies):
            out.append(StructureViolation("DuplicateDependency", t.task_id, "repeated dependency"))
        for d in t.dependencies:
            if d == t.task_id:
                out.append(StructureViolation("SelfDependency", t.task_id, "task depends on itself"))
            elif d not in position:
                out.append(StructureViolation("UnknownDependency", t.task_id, f"dependency {d} not in plan"))
            elif position[d] > i:
                out.append(StructureViolation("OrderViolation", t.task_id, f"dependency {d} listed after {t.task_id}"))
        for key, ref in t.refs():
            target = ref.task_id
            if target in t.dependencies and target in position:
                continue
            if target not in position and target in prior:
                continue
            out.append(StructureViolation("DanglingRef", t.task_id, f"{key}={ref} is not backed by a dependency"))

    try:
        topological_layers(dag)
    except CycleDetected as exc:
        out.append(StructureViolation("CycleDetected", exc.task_ids[0], str(exc)))
    return out
