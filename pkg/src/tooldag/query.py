"""User-query generation and system-prompt rendering.

Queries come either from a chat-completion endpoint (:class:`RemoteQueryClient`)
or from a deterministic template (:class:`FallbackQueryClient`).
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Union

import httpx

from .errors import RemoteUnavailable
from .model import PlanDag, SymbolicRef, ToolSpec, topological_layers

log = logging.getLogger(__name__)

ROLE_PREAMBLE = (
    "You are an assistant that solves user requests by planning and issuing tool calls, "
    "then answering in a structured way."
)


def _tool_entry(tool: ToolSpec) -> dict:
    return {
        "name": tool.name,
        "description": tool.description,
        "parameters": {f.name: {"type": f.kind, "description": f.description} for f in tool.inputs},
        "returns": {f.name: {"type": f.kind, "description": f.description} for f in tool.outputs},
    }


def build_system_prompt(tools: Sequence[ToolSpec]) -> str:
    """Render the system prompt: preamble, tool list, per-turn steps, task-list format."""
    tool_lines = "\n".join(json.dumps(_tool_entry(t), ensure_ascii=False) for t in tools)
    return "\n".join(
        [
            ROLE_PREAMBLE,
            "",
            "## Available Tools",
            "You may call the following tools:",
            tool_lines,
            "",
            "## Steps for each turn",
            "1. Think: inside <think></think>, gather the context from earlier turns and decide which tools apply.",
            "2. DAG: inside <DAG></DAG>, write the task list for this turn in the format below.",
            "3. Respond: inside <response></response>, answer the user if a reply is needed, staying consistent with earlier turns.",
            "",
            "## Task list format",
            "A JSON array of tasks in dependency order. Each task has exactly four fields:",
            '  "task_id": "task_<N>", numbered across the whole conversation',
            '  "toolname": the tool to call',
            '  "payload": an object of parameter values; "$<N>.<key>" passes output <key> of task_<N>',
            '  "dependencies": the task ids whose outputs this task reads in the current turn',
            'Example: [{"task_id":"task_3","toolname":"t","payload":{"a":1,"b":"$1.k","c":"$2.m"},'
            '"dependencies":["task_1","task_2"]}]',
        ]
    )


# --- fallback ----------------------------------------------------------------

_OPENERS = ("Please", "Could you", "I need you to", "Can you")
_THENS = ("then", "after that", "next", "once that is done")


def _fmt_literal(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def _purpose(toolname: str) -> str:
    return toolname.replace("_", " ").replace(".", " ").strip()


@dataclass
class FallbackQueryClient:
    """Deterministic template queries; ``seed`` only picks connective wording."""

    seed: int = 0

    def generate(self, gold: PlanDag, tools: Sequence[ToolSpec], shots: Sequence[dict] = ()) -> str:
        rng = random.Random(self.seed)
        order = [tid for layer in topological_layers(gold) for tid in layer]
        clauses = []
        for tid in order:
            task = gold.get(tid)
            literals = [(k, v) for k, v in sorted(task.payload.items()) if not isinstance(v, SymbolicRef)]
            reads_prior = any(isinstance(v, SymbolicRef) and gold.get(v.task_id) is None for v in task.payload.values())
            clause = _purpose(task.toolname)
            if literals:
                clause += " with " + ", ".join(f"{k} {_fmt_literal(v)}" for k, v in literals)
            if reads_prior:
                clause += " using the results from before"
            elif task.dependencies:
                clause += " on those results"
            clauses.append(clause)
        if not clauses:
            return "Nothing else is needed for now."
        text = f"{rng.choice(_OPENERS)} {clauses[0]}"
        for c in clauses[1:]:
            text += f", {rng.choice(_THENS)} {c}"
        return text + "."


# --- remote --------------------------------------------------------------------


@dataclass
class EndpointConfig:
    endpoint_url: str
    model: str
    temperature: float = 0.7
    max_in_flight: int = 4
    api_key_env: str = "TOOLDAG_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0


class ChatClient:
    """Minimal chat-completion client with bounded retries and an in-flight cap.

    ``endpoint_url`` is the full URL that accepts the POST.
    """

    def __init__(self, cfg: EndpointConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(max(1, cfg.max_in_flight))
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: list[dict], temperature: Optional[float] = None) -> str:
        body = {
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature if temperature is None else temperature,
        }
        delay = self.cfg.backoff
        last: Union[Exception, str] = "no attempt"
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            try:
                with self._gate:
                    resp = self._http.post(self.cfg.endpoint_url, json=body)
            except httpx.HTTPError as exc:
                last = exc
                log.warning("chat request failed (attempt %d): %r", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("chat endpoint returned %s (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise RemoteUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise RemoteUnavailable(f"unexpected response body: {exc}") from exc
        raise RemoteUnavailable(f"gave up after {self.cfg.retries + 1} attempts: {last}")


def describe_plan(gold: PlanDag, tools: Sequence[ToolSpec]) -> str:
    """Plan summary for the query-writing prompt.

    Lists each step's tool, purpose and literal arguments.  Ref wiring and
    dependency lists are left out on purpose.
    """
    index = {t.name: t for t in tools}
    lines = []
    for n, task in enumerate(gold.tasks, 1):
        tool = index.get(task.toolname)
        desc = tool.description if tool else ""
        literals = {k: v for k, v in sorted(task.payload.items()) if not isinstance(v, SymbolicRef)}
        derived = sorted(k for k, v in task.payload.items() if isinstance(v, SymbolicRef))
        line = f"Step {n}: {task.toolname} - {desc}"
        if literals:
            line += f" Arguments: {json.dumps(literals, ensure_ascii=False)}."
        if derived:
            line += f" Inputs {', '.join(derived)} come from earlier results."
        lines.append(line)
    return "\n".join(lines)


@dataclass
class RemoteQueryClient:
    chat: ChatClient
    shots_limit: int = 3
    instructions: str = field(
        default=(
            "Write one natural user request that can only be satisfied by running the plan below. "
            "Mention every argument value verbatim. Do not mention tool names or step numbers. "
            "Reply with the request only."
        )
    )

    def generate(self, gold: PlanDag, tools: Sequence[ToolSpec], shots: Sequence[dict] = ()) -> str:
        messages = [{"role": "system", "content": self.instructions}]
        for shot in list(shots)[: self.shots_limit]:
            messages.append({"role": "user", "content": shot["plan"]})
            messages.append({"role": "assistant", "content": shot["query"]})
        messages.append({"role": "user", "content": describe_plan(gold, tools)})
        text = self.chat.complete(messages).strip()
        if not text:
            raise RemoteUnavailable("endpoint returned an empty query")
        return text


def generate_query(gold: PlanDag, tools: Sequence[ToolSpec], shots: Sequence[dict], client) -> str:
    """Produce the user query for ``gold`` with whichever client is configured."""
    return client.generate(gold, tools, shots)
