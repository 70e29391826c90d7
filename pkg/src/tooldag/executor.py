"""Mock execution of plan DAGs against synthetic tools."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional, Union

from .errors import NoFailure, UnknownTool, UnresolvableRef
from .model import Observation, PlanDag, PlanTask, SymbolicRef, ToolCall, ToolSpec, topological_layers

FAULT_KINDS = ("timeout", "runtime_error")


@dataclass(frozen=True)
class ExecutionPolicy:
    fault: Optional[tuple[str, str]] = None  # (task_id, kind)
    value_seed: int = 0

    def __post_init__(self):
        if self.fault is not None and self.fault[1] not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.fault[1]!r}")


def _task_rng(value_seed: int, task: PlanTask) -> random.Random:
    digest = hashlib.sha256(f"{task.task_id}\x00{task.toolname}".encode()).digest()
    return random.Random(value_seed ^ int.from_bytes(digest[:8], "big"))


def fake_value(kind: str, rng: random.Random) -> Any:
    if kind == "number":
        return rng.randint(0, 10_000)
    if kind == "boolean":
        return rng.random() < 0.5
    if kind == "list":
        return [f"{rng.getrandbits(32):08x}" for _ in range(rng.randint(1, 3))]
    if kind == "object":
        return {"id": f"{rng.getrandbits(32):08x}", "n": rng.randint(0, 99)}
    return f"{rng.getrandbits(48):012x}"


def _tool_index(tools: Union[Mapping[str, ToolSpec], Iterable[ToolSpec]]) -> dict[str, ToolSpec]:
    if isinstance(tools, Mapping):
        return dict(tools)
    return {t.name: t for t in tools}


def execute(
    dag: PlanDag,
    tools,
    prior_observations: Optional[Mapping[str, Observation]] = None,
    policy: ExecutionPolicy = ExecutionPolicy(),
) -> tuple[list[ToolCall], list[Observation]]:
    """Run ``dag`` layer by layer and return ``(tool_calls, observations)``.

    Refs resolve against this run's observations first, then
    ``prior_observations``.  A faulted task emits its call and a failed
    observation; its transitive dependents are skipped entirely.
    """
    index = _tool_index(tools)
    prior = dict(prior_observations or {})
    if policy.fault is not None and dag.get(policy.fault[0]) is None:
        raise ValueError(f"fault target {policy.fault[0]} is not in the plan")
    for t in dag.tasks:
        if t.toolname not in index:
            raise UnknownTool(t.toolname)

    done: dict[str, Observation] = {}
    blocked: set[str] = set()
    calls, observations = [], []
    for layer in topological_layers(dag):
        for tid in layer:
            task = dag.get(tid)
            if any(d in blocked or (d in done and not done[d].ok) for d in task.dependencies):
                blocked.add(tid)
                continue
            payload = {k: _resolve(task, v, done, prior) for k, v in task.payload.items()}
            calls.append(ToolCall(tid, task.toolname, payload))
            if policy.fault is not None and policy.fault[0] == tid:
                obs = Observation(tid, policy.fault[1])
            else:
                rng = _task_rng(policy.value_seed, task)
                obs = Observation(tid, "ok", {f.name: fake_value(f.kind, rng) for f in index[task.toolname].outputs})
            done[tid] = obs
            observations.append(obs)
    return calls, observations


def _resolve(task: PlanTask, value: Any, done: Mapping[str, Observation], prior: Mapping[str, Observation]) -> Any:
    if not isinstance(value, SymbolicRef):
        return value
    source = done.get(value.task_id) or prior.get(value.task_id)
    if source is None or not source.ok or not isinstance(source.value, Mapping) or value.output_key not in source.value:
        raise UnresolvableRef(task.task_id, value)
    return source.value[value.output_key]


def unfinished_subgraph(dag: PlanDag, observations: Iterable[Observation]) -> PlanDag:
    """Induced sub-plan over failed and never-run tasks, ids unchanged.

    Dependencies on completed tasks are dropped; refs to them stay in place
    and become cross-turn refs.
    """
    by_id = {o.task_id: o for o in observations}
    keep = [t for t in dag.tasks if t.task_id not in by_id or not by_id[t.task_id].ok]
    if not keep:
        raise NoFailure("every task completed")
    kept = {t.task_id for t in keep}
    return PlanDag(
        tuple(PlanTask(t.task_id, t.toolname, t.payload, tuple(d for d in t.dependencies if d in kept)) for t in keep)
    )
