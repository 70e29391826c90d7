from __future__ import annotations

import json
import threading
import time
from pathlib import Path

import httpx
import pytest

from tooldag.errors import RemoteUnavailable
from tooldag.model import FieldSchema, PlanDag, PlanTask, SymbolicRef, ToolSpec
from tooldag.query import (
    ChatClient,
    EndpointConfig,
    FallbackQueryClient,
    RemoteQueryClient,
    build_system_prompt,
    describe_plan,
    generate_query,
)

DATA = Path(__file__).parent / "data"


def two_tools():
    return [
        ToolSpec("get_weather", "Current weather for a city.", (FieldSchema("city", "string", "city name"),),
                 (FieldSchema("temp_c", "number", "temperature in C"), FieldSchema("summary", "string", "short text")),
                 "seed"),
        ToolSpec("plan_trip", "Plan a trip from a forecast.",
                 (FieldSchema("forecast", "string", "forecast text"), FieldSchema("days", "number", "trip length")),
                 (FieldSchema("itinerary", "list", "day plans"),), "synthetic"),
    ]


def two_step_plan():
    return PlanDag((
        PlanTask("task_1", "get_weather", {"city": "Lisbon"}, ()),
        PlanTask("task_2", "plan_trip", {"forecast": SymbolicRef(1, "summary"), "days": 3}, ("task_1",)),
    ))


def test_system_prompt_golden():
    assert build_system_prompt(two_tools()) == (DATA / "system_prompt_two_tools.txt").read_text()


def test_system_prompt_sections():
    text = build_system_prompt([])
    for needle in ("## Available Tools", "1. Think", "2. DAG", "3. Respond", "## Task list format"):
        assert needle in text


def test_fallback_single_task_golden():
    dag = PlanDag((PlanTask("task_1", "get_weather", {"city": "Lisbon"}, ()),))
    q = FallbackQueryClient(seed=0).generate(dag, two_tools())
    assert q == "Can you get weather with city Lisbon."


def test_fallback_mentions_literals_and_is_deterministic(small_corpus):
    for t in small_corpus:
        for turn in t.turns:
            q1 = FallbackQueryClient(seed=4).generate(turn.dag, t.system_tools)
            assert q1 == FallbackQueryClient(seed=4).generate(turn.dag, t.system_tools)
            for task in turn.dag.tasks:
                for v in task.payload.values():
                    if not isinstance(v, SymbolicRef):
                        shown = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
                        assert shown in q1


def test_describe_plan_hides_wiring():
    text = describe_plan(two_step_plan(), two_tools())
    assert "Lisbon" in text and "3" in text
    assert "$1" not in text and "task_1" not in text and "dependencies" not in text


def ok_response(content):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


def client(handler, **kw):
    cfg = EndpointConfig("http://stub/v1/chat/completions", "m", backoff=0.01, **kw)
    return ChatClient(cfg, transport=httpx.MockTransport(handler), sleep=lambda s: None)


def test_remote_returns_canned_query_and_sends_shots(monkeypatch):
    monkeypatch.setenv("TOOLDAG_API_KEY", "secret")
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return ok_response("  Plan me a 3-day trip to Lisbon.  ")

    shots = [{"plan": f"p{i}", "query": f"q{i}"} for i in range(5)]
    q = generate_query(two_step_plan(), two_tools(), shots, RemoteQueryClient(client(handler)))
    assert q == "Plan me a 3-day trip to Lisbon."
    assert seen["auth"] == "Bearer secret"
    msgs = seen["body"]["messages"]
    assert len(msgs) == 1 + 2 * 3 + 1
    assert "task_1" not in msgs[-1]["content"]
    assert seen["body"]["model"] == "m"


def test_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else ok_response("fine")

    assert client(handler).complete([{"role": "user", "content": "x"}]) == "fine"
    assert len(calls) == 3


def test_gives_up_after_bounded_retries():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("down")

    c = ChatClient(EndpointConfig("http://stub/x", "m", retries=3, backoff=0.5),
                   transport=httpx.MockTransport(handler), sleep=sleeps.append)
    with pytest.raises(RemoteUnavailable):
        c.complete([])
    assert len(calls) == 4 and sleeps == [0.5, 1.0, 2.0]


def test_client_errors_are_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="no key")

    with pytest.raises(RemoteUnavailable):
        client(handler).complete([])
    assert len(calls) == 1


def test_bad_body_and_empty_query():
    with pytest.raises(RemoteUnavailable):
        client(lambda r: httpx.Response(200, json={"nope": 1})).complete([])
    with pytest.raises(RemoteUnavailable):
        RemoteQueryClient(client(lambda r: ok_response("   "))).generate(two_step_plan(), two_tools())


def test_in_flight_cap():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return ok_response("x")

    c = client(handler, max_in_flight=2)
    threads = [threading.Thread(target=c.complete, args=([],)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2
