"""Populate DAG templates with synthetic tools and build the gold plan."""

from __future__ import annotations

import random
from dataclasses import replace
from typing import Any, Iterable, Mapping, Optional, Sequence

from . import vocab
from .errors import InfeasibleTemplate, PoolTooSmall
from .model import FieldSchema, PlanDag, PlanTask, SymbolicRef, ToolSpec, task_id
from .seeds import infer_output_schema, random_kind, random_outputs
from .templates import DagTemplate


def random_literal(kind: str, rng: random.Random) -> Any:
    if kind == "number":
        return rng.randint(1, 500)
    if kind == "boolean":
        return rng.random() < 0.5
    if kind == "list":
        return [rng.choice(vocab.NOUNS) for _ in range(2)]
    if kind == "object":
        return {"name": rng.choice(vocab.NOUNS)}
    return f"{rng.choice(vocab.DOMAINS)}-{rng.randrange(1000):03d}"


def new_tool_name(rng: random.Random, taken: set[str]) -> str:
    while True:
        name = f"{rng.choice(vocab.DOMAINS)}_{rng.choice(vocab.VERBS)}_{rng.getrandbits(16):04x}"
        if name not in taken:
            taken.add(name)
            return name


def _describe(name: str, inputs: Sequence[FieldSchema]) -> str:
    domain, verb = name.split("_")[:2]
    if not inputs:
        return f"Runs the {verb} step over {domain} records."
    params = ", ".join(f"`{f.name}` ({f.kind})" for f in inputs)
    return f"Runs the {verb} step over {domain} records using {params}."


def _input_name(rng: random.Random, avoid: set[str]) -> str:
    while True:
        name = f"{rng.choice(vocab.PARAMS)}_{vocab.suffix(rng)}"
        if name not in avoid:
            avoid.add(name)
            return name


def bind_tool(
    sources: Sequence[tuple[int, ToolSpec]],
    rng: random.Random,
    taken: set[str],
    *,
    max_inputs: int = 3,
    output_bounds: tuple[int, int] = (4, 5),
) -> tuple[ToolSpec, dict[str, SymbolicRef]]:
    """Create a tool whose every input reads an output of one of ``sources``.

    ``sources`` pairs a task ordinal with the tool run by that task.  Each
    source feeds at least one input; bound input names never equal the output
    name they read.
    """
    available = [(ordinal, f) for ordinal, tool in sources for f in tool.outputs]
    for ordinal, tool in sources:
        if not tool.outputs:
            raise InfeasibleTemplate(f"parent {tool.name} has no outputs to bind")
    n_inputs = rng.randint(1, min(max_inputs, len(available)))
    n_inputs = max(n_inputs, len(sources))

    chosen: list[tuple[int, FieldSchema]] = []
    used: set[tuple[int, str]] = set()
    for ordinal, tool in sources:
        f = rng.choice(tool.outputs)
        chosen.append((ordinal, f))
        used.add((ordinal, f.name))
    rest = [(o, f) for o, f in available if (o, f.name) not in used]
    rng.shuffle(rest)
    chosen.extend(rest[: n_inputs - len(chosen)])

    avoid = {f.name for _, f in available}
    inputs, payload = [], {}
    for ordinal, f in chosen:
        name = _input_name(rng, avoid)
        inputs.append(FieldSchema(name, f.kind, f"takes a {f.kind} value"))
        payload[name] = SymbolicRef(ordinal, f.name)
    name = new_tool_name(rng, taken)
    outputs = random_outputs(rng, bounds=output_bounds, avoid={f.name for f in inputs})
    return ToolSpec(name, _describe(name, inputs), tuple(inputs), outputs, "synthetic"), payload


def populate(
    template: DagTemplate,
    seed_tools: Sequence[ToolSpec],
    rng: random.Random,
    *,
    first_ordinal: int = 1,
    seed_args: Optional[Mapping[str, Mapping[str, Any]]] = None,
    seed_payloads: Optional[Sequence[Mapping[str, Any]]] = None,
    reserved_names: Iterable[str] = (),
    max_inputs: int = 3,
    output_bounds: tuple[int, int] = (4, 5),
) -> tuple[list[ToolSpec], PlanDag]:
    """Fill ``template`` with tools and derive its gold plan.

    Layer-0 nodes take ``seed_tools`` in order.  Their payloads come from
    ``seed_payloads`` when given (used for cross-turn bridges), else from the
    literal ``seed_args`` observed in the seed answer, topped up with random
    literals.  Every later node gets a freshly synthesised tool bound to its
    template parents.  Task ordinals run from ``first_ordinal`` in
    layer-major order.
    """
    if len(seed_tools) != template.layers[0]:
        raise InfeasibleTemplate(f"template wants {template.layers[0]} seed tools, got {len(seed_tools)}")
    seed_args = seed_args or {}
    taken = set(reserved_names) | {t.name for t in seed_tools}
    nodes = template.nodes()
    ordinal_of = {node: first_ordinal + i for i, node in enumerate(nodes)}
    tool_of: dict = {}
    tasks = []
    for node in nodes:
        layer, idx = node
        if layer == 0:
            tool = seed_tools[idx]
            if not tool.outputs:
                tool = infer_output_schema(tool, rng, bounds=output_bounds)
            if seed_payloads is not None:
                payload = dict(seed_payloads[idx])
            else:
                given = seed_args.get(tool.name, {})
                payload = {f.name: given[f.name] if f.name in given else random_literal(f.kind, rng) for f in tool.inputs}
            deps: tuple[str, ...] = ()
        else:
            parents = sorted(template.parents(node))
            sources = [(ordinal_of[p], tool_of[p]) for p in parents]
            tool, payload = bind_tool(sources, rng, taken, max_inputs=max_inputs, output_bounds=output_bounds)
            deps = tuple(task_id(ordinal_of[p]) for p in parents)
        tool_of[node] = tool
        tasks.append(PlanTask(task_id(ordinal_of[node]), tool.name, payload, deps))
    return [tool_of[n] for n in nodes], PlanDag(tuple(tasks))


def synth_distractors(count: int, rng: random.Random, taken: Iterable[str] = ()) -> list[ToolSpec]:
    """Standalone synthetic tools for padding the system prompt."""
    taken = set(taken)
    out = []
    for _ in range(count):
        name = new_tool_name(rng, taken)
        avoid: set[str] = set()
        inputs = [FieldSchema(_input_name(rng, avoid), random_kind(rng), "free parameter") for _ in range(rng.randint(1, 3))]
        out.append(ToolSpec(name, _describe(name, inputs), tuple(inputs), random_outputs(rng, avoid=avoid), "distractor"))
    return out


def inject_distractors(tools: Sequence[ToolSpec], pool: Sequence[ToolSpec], count: int, rng: random.Random) -> list[ToolSpec]:
    """Add ``count`` tools drawn from ``pool`` and shuffle the result."""
    relevant = {t.name for t in tools}
    clash = relevant & {t.name for t in pool}
    if clash:
        raise ValueError(f"distractor pool overlaps relevant tools: {sorted(clash)}")
    if count > len(pool):
        raise PoolTooSmall(f"need {count} distractors, pool has {len(pool)}")
    picked = [replace(t, origin="distractor") for t in rng.sample(list(pool), count)]
    out = list(tools) + picked
    rng.shuffle(out)
    return out
