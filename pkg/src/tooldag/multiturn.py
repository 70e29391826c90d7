"""Second-turn continuations: irrelevant, dependent and tool-error follow-ups."""

from __future__ import annotations

import random
from dataclasses import replace
from fractions import Fraction
from typing import Any, Callable, Mapping, Optional, Sequence

from .errors import BadProportions, ScenarioInfeasible
from .executor import FAULT_KINDS, ExecutionPolicy, execute, unfinished_subgraph
from .model import Observation, PlanDag, ScenarioKind, ToolSpec, Transcript, Turn
from .query import FallbackQueryClient
from .synth import bind_tool, populate
from .templates import TemplateConfig, sample_template

QueryFn = Callable[[PlanDag, Sequence[ToolSpec]], str]


def summarize(calls, observations) -> str:
    """Deterministic assistant reply describing what ran and what failed."""
    if not observations:
        return "No tools were needed."
    ok = [o for o in observations if o.ok]
    failed = [o for o in observations if not o.ok]
    names = {c.task_id: c.toolname for c in calls}
    parts = [f"Ran {len(observations)} tool call(s)."]
    if failed:
        parts.append(
            "Could not finish: " + ", ".join(f"{names.get(o.task_id, o.task_id)} ({o.status})" for o in failed) + "."
        )
    if ok:
        last = ok[-1]
        key = sorted(last.value)[0] if last.value else None
        if key is not None:
            parts.append(f"Latest result from {names.get(last.task_id)}: {key} = {last.value[key]!r}.")
    return " ".join(parts)


def next_ordinal(turns: Sequence[Turn]) -> int:
    return 1 + max((t.ordinal for turn in turns for t in turn.dag.tasks), default=0)


def prior_observations(turns: Sequence[Turn]) -> dict[str, Observation]:
    out: dict[str, Observation] = {}
    for turn in turns:
        for o in turn.observations:
            out[o.task_id] = o
    return out


def _default_query(gold, tools):
    return FallbackQueryClient().generate(gold, tools)


def extend(
    transcript: Transcript,
    scenario: ScenarioKind,
    fresh_seed_tools: Sequence[ToolSpec],
    rng: random.Random,
    *,
    template_cfg: TemplateConfig = TemplateConfig(),
    fresh_seed_args: Optional[Mapping[str, Mapping[str, Any]]] = None,
    query_fn: Optional[QueryFn] = None,
    value_seed: int = 0,
) -> Transcript:
    """Append a second turn encoding ``scenario``.

    New relevant tools are appended to ``system_tools``.  A tool-error
    continuation on a one-task turn is still produced and flagged in
    ``meta["flags"]``.
    """
    scenario = ScenarioKind(scenario)
    if not transcript.turns:
        raise ScenarioInfeasible("transcript has no completed turn")
    query_fn = query_fn or _default_query
    turns = list(transcript.turns)
    meta = dict(transcript.meta)
    tools = list(transcript.system_tools)
    taken = {t.name for t in tools}
    first = next_ordinal(turns)

    if scenario is ScenarioKind.TOOL_ERROR:
        prev = turns[-1]
        target = rng.choice(prev.dag.task_ids)
        kind = rng.choice(FAULT_KINDS)
        before = prior_observations(turns[:-1])
        calls1, obs1 = execute(prev.dag, tools, before, ExecutionPolicy((target, kind), value_seed))
        turns[-1] = replace(prev, tool_calls=tuple(calls1), observations=tuple(obs1), response=summarize(calls1, obs1))
        gold = unfinished_subgraph(prev.dag, obs1)
        if len(prev.dag) == 1:
            meta["flags"] = sorted(set(meta.get("flags", [])) | {"tool_error_single_task"})
        calls2, obs2 = execute(gold, tools, prior_observations(turns), ExecutionPolicy(None, value_seed))
        failed_tool = prev.dag.get(target).toolname
        query = f"The {failed_tool.replace('_', ' ')} step failed with a {kind.replace('_', ' ')}. " \
                f"Please finish what is left: {query_fn(gold, tools)}"
        layers = None
    else:
        cfg = replace(template_cfg, rng_seed=rng.getrandbits(63))
        if scenario is ScenarioKind.IRRELEVANT:
            used = {name for turn in turns for name in turn.dag.toolnames}
            if not fresh_seed_tools or used & {t.name for t in fresh_seed_tools}:
                raise ScenarioInfeasible("irrelevant turn needs fresh seed tools unused so far")
            template = sample_template(cfg, len(fresh_seed_tools))
            new_tools, gold = populate(
                template, fresh_seed_tools, rng, first_ordinal=first, seed_args=fresh_seed_args, reserved_names=taken
            )
            prior = {}
        else:
            prior = prior_observations(turns)
            sources = [
                (t.ordinal, next(x for x in tools if x.name == t.toolname))
                for turn in turns
                for t in turn.dag.tasks
                if t.task_id in prior and prior[t.task_id].ok
            ]
            if not sources:
                raise ScenarioInfeasible("no completed task to depend on")
            n_bridges = rng.randint(1, min(3, template_cfg.width_max))
            bridges, payloads = [], []
            for _ in range(n_bridges):
                tool, payload = bind_tool([rng.choice(sources)], rng, taken)
                bridges.append(tool)
                payloads.append(payload)
            template = sample_template(cfg, n_bridges)
            new_tools, gold = populate(
                template, bridges, rng, first_ordinal=first, seed_payloads=payloads, reserved_names=taken
            )
        present = {t.name for t in tools}
        for t in new_tools:
            if t.name not in present:
                tools.append(t)
                present.add(t.name)
        calls2, obs2 = execute(gold, tools, prior, ExecutionPolicy(None, value_seed))
        query = query_fn(gold, tools)
        layers = list(template.layers)

    turn2 = Turn(
        user_query=query,
        dag=gold,
        tool_calls=tuple(calls2),
        observations=tuple(obs2),
        response=summarize(calls2, obs2),
        scenario=scenario,
    )
    meta.setdefault("turn_templates", [])
    meta["turn_templates"] = list(meta["turn_templates"]) + [layers]
    return replace(transcript, system_tools=tuple(tools), turns=tuple(turns) + (turn2,), meta=meta)


def normalise_proportions(multi_turn: Any) -> dict[ScenarioKind, Fraction]:
    """Accept an aggregate share (split evenly) or a per-scenario mapping."""
    if isinstance(multi_turn, Mapping):
        props = {ScenarioKind(k): Fraction(str(v)) for k, v in multi_turn.items()}
    else:
        total = Fraction(str(multi_turn or 0))
        props = {k: total / 3 for k in ScenarioKind}
    if any(p < 0 for p in props.values()) or sum(props.values()) > 1:
        raise BadProportions(f"scenario proportions must be non-negative and sum to <= 1: {multi_turn}")
    return props


def scenario_mix(n_samples: int, proportions: Any) -> list[Optional[ScenarioKind]]:
    """Deterministic scenario (or ``None`` for single-turn) per sample index.

    The multi-turn total is ``floor(n * share)``; it is split across kinds by
    largest remainder and spread evenly over the index range.
    """
    if n_samples < 0:
        raise BadProportions("negative sample count")
    props = normalise_proportions(proportions)
    share = sum(props.values())
    total = int(n_samples * share)
    if total == 0:
        return [None] * n_samples
    kinds = [k for k in ScenarioKind if props.get(k, 0) > 0]
    quotas = {k: total * props[k] / share for k in kinds}
    counts = {k: int(q) for k, q in quotas.items()}
    leftovers = sorted(kinds, key=lambda k: (-(quotas[k] - counts[k]), list(ScenarioKind).index(k)))
    for k in leftovers[: total - sum(counts.values())]:
        counts[k] += 1
    # interleave kinds: the j-th of kind k sits at fraction (j + 0.5) / count_k
    seq = sorted(
        ((Fraction(2 * j + 1, 2 * counts[k]), list(ScenarioKind).index(k), k) for k in kinds for j in range(counts[k])),
    )
    kind_iter = iter(k for _, _, k in seq)
    share_n = Fraction(total, n_samples)
    out: list[Optional[ScenarioKind]] = []
    for i in range(n_samples):
        if int((i + 1) * share_n) > int(i * share_n):
            out.append(next(kind_iter))
        else:
            out.append(None)
    return out
