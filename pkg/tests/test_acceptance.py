"""Acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with its runtime, shown
even under output capture.  Run with ``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import json
import random
import subprocess
import sys
import time
from collections import Counter
from contextlib import contextmanager
from pathlib import Path

import pytest

from tooldag.codec import parse_plan, read_corpus, serialize_plan, transcript_to_obj
from tooldag.errors import PlanFormatError
from tooldag.executor import execute
from tooldag.harness import evaluate_corpus
from tooldag.model import PlanDag, PlanTask, ScenarioKind, SymbolicRef
from tooldag.pipeline import Generator, PipelineConfig
from tooldag.query import ChatClient, EndpointConfig
from tooldag.reward import RewardConfig, acc_step, acc_user_query, ged, r_dag
from tooldag.validator import LAYERS, validate_record, validate_sample

from oracles import MUTATION_OPERATORS, brute_ged, mutate, random_dag
from stub_endpoint import counted_responder, serve

TABLE_COLUMNS = ("type", "data_count", "multi_turn_proportion", "average_height", "average_width", "success_rate")
EMPTY = PlanDag(())


@pytest.fixture
def criterion(request):
    """Yields a recorder; prints one verdict line when the test body finishes."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    @contextmanager
    def run(number: int, title: str, budget: float | None = None):
        start = time.perf_counter()
        detail: dict = {}
        ok = False
        try:
            yield detail
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            timing = f"{elapsed:.2f}s" + (f" / budget {budget:.0f}s" if budget else "")
            if ok and budget is not None and elapsed >= budget:
                ok = False
                detail["over_budget"] = True
            extra = " ".join(f"{k}={v}" for k, v in detail.items())
            line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({timing}) {extra}".rstrip()
            with capman.global_and_fixture_disabled():
                print("\n" + line)
        assert ok, line

    return run


def cli(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "tooldag", *args], capture_output=True, text=True)


def test_1_reward_identities(criterion):
    with criterion(1, "r_dag identities on 1000 gold DAGs and 1000 random pairs", budget=10) as d:
        rng = random.Random(101)
        golds = [random_dag(rng, rng.randint(1, 7)) for _ in range(1000)]
        assert all(r_dag(g, g) == 1 for g in golds)
        assert all(r_dag(EMPTY, g) == 0 for g in golds)
        values = []
        for _ in range(1000):
            p, g = random_dag(rng, rng.randint(0, 7)), random_dag(rng, rng.randint(1, 7))
            values.append(r_dag(p, g))
        assert all(0 <= v <= 1 for v in values)
        d["pairs_min"], d["pairs_max"] = round(min(values), 4), round(max(values), 4)


def test_2_ged_matches_enumeration(criterion):
    with criterion(2, "exact GED equals brute-force enumeration on 1000 pairs (<=6 nodes)", budget=60) as d:
        rng = random.Random(202)
        mismatches = 0
        for _ in range(1000):
            g1 = random_dag(rng, rng.randint(0, 6), toolnames=("a", "b"), keys=("x",))
            g2 = random_dag(rng, rng.randint(0, 6), toolnames=("a", "b"), keys=("x",))
            mismatches += ged(g1, g2, mode="exact").distance != brute_ged(g1, g2)
        d["mismatches"] = mismatches
        assert mismatches == 0


def test_3_chain_worked_value(criterion):
    with criterion(3, "chain fixture A->B vs A->B' gives ged 1 and r_dag 5/6") as d:
        a = PlanTask("task_1", "A", {"x": 1}, ())
        gold = PlanDag((a, PlanTask("task_2", "B", {"src": SymbolicRef(1, "out"), "p": "v1"}, ("task_1",))))
        pred = PlanDag((a, PlanTask("task_2", "B", {"src": SymbolicRef(1, "out"), "p": "v2"}, ("task_1",))))
        res = ged(pred, gold)
        d["ged"], d["r_dag"] = res.distance, r_dag(pred, gold)
        assert res.distance == 1 and res.exact
        assert r_dag(pred, gold) == 5 / 6


def test_4_corpus_statistics(criterion, tmp_path):
    with criterion(4, "200-sample generate: height 2.5+-0.15, width 3.4+-0.3, multi-turn 30%+-2%",
                   budget=300) as d:
        cfg = tmp_path / "table.yaml"
        cfg.write_text("samples: 200\nseed: 7\nmulti_turn: 0.3\n"
                       "template: {height_min: 2, height_max: 3, width_min: 2, width_max: 4, first_layer_size: 4}\n"
                       "query: {mode: fallback}\n")
        out = tmp_path / "train.jsonl"
        res = cli("generate", "--config", str(cfg), "--out", str(out))
        assert res.returncode == 0, res.stderr
        stats = json.loads(res.stdout)
        h, w, mt = stats["average_height"]["mean"], stats["average_width"]["mean"], stats["multi_turn_proportion"]
        d["height"], d["width"], d["multi_turn"] = round(h, 3), round(w, 3), round(mt, 3)
        assert stats["data_count"] == 200
        assert abs(h - 2.5) <= 0.15
        assert abs(w - 3.4) <= 0.3
        assert abs(mt - 0.30) <= 0.02


@pytest.fixture(scope="module")
def corpus_200():
    return Generator(PipelineConfig(samples=200, seed=55, multi_turn=0.5)).run().transcripts


def test_5_mutation_suite(criterion, corpus_200):
    with criterion(5, "6 operators x 200 mutants all detected, clean samples pass", budget=120) as d:
        records = [transcript_to_obj(t) for t in corpus_200]
        clean_fail = sum(bool(validate_record(json.dumps(r))) for r in records)
        clean_fail += sum(bool(validate_sample(t)) for t in corpus_200)
        d["clean_failures"] = clean_fail
        missed = Counter()
        for op in MUTATION_OPERATORS:
            rng = random.Random(f"accept/{op}")
            made = 0
            while made < 200:
                mutant = mutate(rng.choice(records), op, rng)
                if mutant is None:
                    continue
                made += 1
                vs = validate_record(json.dumps(mutant))
                if not vs or vs[0].layer not in LAYERS:
                    missed[op] += 1
        d["missed"] = dict(missed) or 0
        assert clean_fail == 0
        assert not missed


@pytest.fixture(scope="module")
def corpus_multi():
    return Generator(PipelineConfig(samples=100, seed=21, multi_turn=1.0)).run().transcripts


def test_6_multiturn_properties(criterion, corpus_multi):
    with criterion(6, "multi-turn structure over a 100-sample multi-turn corpus") as d:
        assert len(corpus_multi) == 100
        kinds = Counter()
        for t in corpus_multi:
            first, second = t.turns[0], t.turns[-1]
            kind = second.scenario
            kinds[kind.value] += 1
            prior_ids = {tid for turn in t.turns[:-1] for tid in turn.dag.task_ids}
            if kind is ScenarioKind.DEPENDENT:
                assert any(r.task_id in prior_ids for task in second.dag.tasks for _, r in task.refs())
            elif kind is ScenarioKind.TOOL_ERROR:
                ids = set(second.dag.task_ids)
                assert ids <= set(first.dag.task_ids)
                assert set(second.dag.edges()) == {e for e in first.dag.edges() if set(e) <= ids}
                done = {o.task_id: o for o in first.observations if o.ok}
                calls, obs = execute(second.dag, t.system_tools, prior_observations=done)
                assert all(o.ok for o in obs) and {o.task_id for o in obs} == ids
            elif kind is ScenarioKind.IRRELEVANT:
                assert not first.dag.toolnames & second.dag.toolnames
            else:
                pytest.fail(f"{t.sample_id} has no scenario on its last turn")
        d.update(kinds)
        assert set(kinds) == {k.value for k in ScenarioKind}


def test_7_codec_round_trip_and_fuzz(criterion):
    with criterion(7, "parse(serialize(p)) == p on 1000 plans, 10^5-case byte fuzz") as d:
        rng = random.Random(707)
        for _ in range(1000):
            dag = random_dag(rng, rng.randint(0, 10), first_ordinal=rng.randint(1, 9))
            assert parse_plan(serialize_plan(dag)) == dag
        corpus = [serialize_plan(random_dag(rng, rng.randint(1, 5))).encode() for _ in range(50)]
        rejected = 0
        for i in range(100_000):
            if i % 2:
                data = bytes(rng.randrange(256) for _ in range(rng.randint(0, 64)))
            else:
                # mutate a valid plan so the fuzz reaches past the JSON layer
                data = bytearray(rng.choice(corpus))
                for _ in range(rng.randint(1, 4)):
                    data[rng.randrange(len(data))] = rng.randrange(256)
                data = bytes(data)
            try:
                parse_plan(data)
            except PlanFormatError:
                rejected += 1
        d["fuzz_rejected"] = rejected


def test_8_metric_semantics(criterion, tmp_path):
    with criterion(8, "acc_user_query <=> r_dag == 1, acc_step fixtures, stub pass@1 analytic") as d:
        rng = random.Random(808)
        equal = 0
        for i in range(1000):
            n = rng.randint(1, 5)
            state = rng.getstate()
            gold = random_dag(rng, n, toolnames=("a", "b"))
            if i % 2:
                twin = random.Random()
                twin.setstate(state)
                pred = random_dag(twin, n, toolnames=("a", "b"), first_ordinal=rng.randint(1, 9))
            else:
                pred = random_dag(rng, rng.randint(1, 5), toolnames=("a", "b"))
            hit = acc_user_query(pred, gold)
            assert (hit == 1) == (r_dag(pred, gold) == 1)
            equal += hit
        d["equal_pairs"] = equal

        steps = [PlanTask(f"task_{i}", f"t{i}", {"a": i}, (f"task_{i - 1}",) if i > 1 else ()) for i in range(1, 5)]
        gold = PlanDag(tuple(steps))
        twins = PlanDag((PlanTask("task_1", "t", {"a": 1}, ()), PlanTask("task_2", "t", {"a": 1}, ())))
        fixtures = [
            (gold, gold, 1.0),
            (PlanDag((PlanTask("task_1", "t1", {"a": 1}, ()), PlanTask("task_2", "t3", {"a": 3}, ()),
                      PlanTask("task_3", "t2", {"a": 99}, ()))), gold, 2 / 4),
            (EMPTY, gold, 0.0),
            (PlanDag(twins.tasks[:1]), twins, 1 / 2),
            (PlanDag(tuple(steps[:3]) + (PlanTask("task_9", "zz", {}, ()),)), gold, 3 / 4),
        ]
        assert [acc_step(p, g) for p, g, _ in fixtures] == [want for _, _, want in fixtures]

        corpus = Generator(PipelineConfig(samples=6, seed=8, multi_turn=0.5)).run().transcripts
        runs = 10
        quota = lambda u: (3 * u) % (runs + 1)  # noqa: E731
        units = sum(len(t.turns) for t in corpus)
        want = sum(quota(u) / runs for u in range(units)) / units
        with serve(counted_responder(corpus, quota)) as url:
            chat = ChatClient(EndpointConfig(url, "stub", retries=0))
            got = evaluate_corpus(corpus, chat, runs=runs, k=1).summary()["pass@1"]["mean"]
        d["pass@1"], d["analytic"] = round(got, 6), round(want, 6)
        assert abs(got - want) <= 1e-12


def test_9_end_to_end_cli(criterion, tmp_path):
    with criterion(9, "generate -> validate -> score(gold as pred) via the CLI") as d:
        cfg = tmp_path / "smoke.yaml"
        cfg.write_text("samples: 20\nseed: 9\nmulti_turn: 0.3\nreward: {alpha: 1.0}\n")
        out = tmp_path / "smoke.jsonl"
        gen = cli("generate", "--config", str(cfg), "--out", str(out))
        assert gen.returncode == 0, gen.stderr
        stats = json.loads(Path(f"{out}.stats.json").read_text())
        missing = [c for c in TABLE_COLUMNS if c not in stats]
        d["missing_columns"] = missing or 0
        assert not missing
        val = cli("validate", "--corpus", str(out))
        assert val.returncode == 0, val.stdout + val.stderr
        summary = tmp_path / "summary.json"
        sc = cli("score", "--pred", str(out), "--gold", str(out), "--summary", str(summary))
        assert sc.returncode == 0, sc.stderr
        overall = json.loads(summary.read_text())["overall"]
        d["turns"] = overall["n"]
        assert overall["n"] == sum(len(t.turns) for t in read_corpus(out))
        for m in ("r_format", "r_dag", "acc_step", "acc_user_query"):
            assert overall[m] == 1, m
        assert overall["r_total"] == 2  # r_format + alpha * r_dag with alpha 1
