"""End-to-end corpus generation: seeds, templates, tools, queries, execution, checks.

Every random choice for sample ``i`` comes from one ``random.Random`` seeded
with ``f"{seed}/{i}/{attempt}"``, so a config reproduces its corpus exactly.
"""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import yaml

from .errors import InvalidConfig, RemoteUnavailable, ScenarioInfeasible, ToolDagError
from .executor import ExecutionPolicy, execute
from .model import PlanDag, PlanTask, ScenarioKind, Transcript, Turn, task_id
from .multiturn import extend, normalise_proportions, scenario_mix, summarize
from .query import ChatClient, EndpointConfig, FallbackQueryClient, RemoteQueryClient, describe_plan
from .seeds import SeedRecord, filter_multi_tool, infer_output_schema, ingest, load_builtin_seeds, partition
from .synth import inject_distractors, populate, synth_distractors
from .templates import TemplateConfig, layer_stats, sample_template
from .validator import validate_sample

log = logging.getLogger(__name__)


@dataclass
class QueryConfig:
    mode: str = "fallback"
    endpoint_url: Optional[str] = None
    model: Optional[str] = None
    temperature: float = 0.7
    max_in_flight: int = 4
    shots: int = 3
    api_key_env: str = "TOOLDAG_API_KEY"


@dataclass
class PipelineConfig:
    samples: int = 20
    seed: int = 0
    split: str = "train"
    test_fraction: float = 0.0
    seed_corpus: list = field(default_factory=list)
    template: TemplateConfig = field(default_factory=TemplateConfig)
    output_fields: tuple[int, int] = (4, 5)
    distractors: Optional[int] = None
    multi_turn: Any = 0.0
    query: QueryConfig = field(default_factory=QueryConfig)
    alpha: float = 1.0
    max_attempts: int = 3
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "PipelineConfig":
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)} | {"reward"}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            if "template" in raw:
                raw["template"] = TemplateConfig(**(raw["template"] or {}))
            if "query" in raw:
                raw["query"] = QueryConfig(**(raw["query"] or {}))
            if "reward" in raw:
                raw["alpha"] = float((raw.pop("reward") or {}).get("alpha", 1.0))
            if "output_fields" in raw:
                lo, hi = raw["output_fields"]
                raw["output_fields"] = (int(lo), int(hi))
            cfg = cls(**raw)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.samples < 0:
            raise InvalidConfig("samples must be >= 0")
        if self.split not in ("train", "test"):
            raise InvalidConfig("split must be 'train' or 'test'")
        if self.max_attempts < 1:
            raise InvalidConfig("max_attempts must be >= 1")
        if self.query.mode not in ("fallback", "remote"):
            raise InvalidConfig("query.mode must be 'fallback' or 'remote'")
        if self.query.mode == "remote" and not (self.query.endpoint_url and self.query.model):
            raise InvalidConfig("remote query mode needs endpoint_url and model")
        lo, hi = self.output_fields
        if not 1 <= lo <= hi:
            raise InvalidConfig("output_fields must be [lo, hi] with 1 <= lo <= hi")
        try:
            normalise_proportions(self.multi_turn)
        except (ToolDagError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from exc


def load_config(path: Union[str, Path]) -> PipelineConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise InvalidConfig("config must be a mapping")
    return PipelineConfig.from_dict(raw)


def load_seeds(cfg: PipelineConfig) -> list[SeedRecord]:
    """Filtered seed records for the configured split."""
    if cfg.seed_corpus:
        records = []
        for src in cfg.seed_corpus:
            records.extend(ingest(src["path"], src.get("kind", "apigen_style")))
        records = filter_multi_tool(records)
    else:
        records = load_builtin_seeds()
    if cfg.test_fraction:
        train, test = partition(records, cfg.test_fraction, random.Random(cfg.seed))
        records = train if cfg.split == "train" else test
    if not records:
        raise InvalidConfig("no usable seed records (need answers with >= 3 distinct tools)")
    return records


def sample_key(seed: int, index: int, attempt: int = 0) -> str:
    # seed and index stay separate so nearby seeds do not reshuffle one corpus
    return f"{seed}/{index}/{attempt}"


def sample_rng(seed: int, index: int, attempt: int = 0) -> random.Random:
    return random.Random(sample_key(seed, index, attempt))


@dataclass
class GenerationResult:
    transcripts: list[Transcript]
    attempts: list[int]
    requested: int
    split: str = "train"

    def stats(self) -> dict:
        return corpus_stats(self.transcripts, requested=self.requested, attempts=sum(self.attempts),
                            split=self.split)


class Generator:
    def __init__(self, cfg: PipelineConfig, seeds: Optional[Sequence[SeedRecord]] = None, chat: Optional[ChatClient] = None):
        self.cfg = cfg
        self.seeds = list(seeds) if seeds is not None else load_seeds(cfg)
        self.remote = None
        if cfg.query.mode == "remote":
            chat = chat or ChatClient(EndpointConfig(
                cfg.query.endpoint_url, cfg.query.model, cfg.query.temperature,
                cfg.query.max_in_flight, cfg.query.api_key_env,
            ))
            self.remote = RemoteQueryClient(chat, shots_limit=cfg.query.shots)

    # -- pieces ------------------------------------------------------------------

    def _seed_tools(self, record: SeedRecord):
        return list(record.extracted_tools[: self.cfg.template.first_layer_size])

    def _query(self, gold: PlanDag, tools, rng: random.Random, meta: dict) -> str:
        fallback = FallbackQueryClient(seed=rng.getrandbits(32))
        if self.remote is None:
            return fallback.generate(gold, tools)
        try:
            return self.remote.generate(gold, tools, self._shots(rng))
        except RemoteUnavailable as exc:
            log.warning("remote query generation failed, using fallback: %s", exc)
            meta["query_fallback"] = True
            return fallback.generate(gold, tools)

    def _shots(self, rng: random.Random) -> list[dict]:
        """Seed rows as exemplars: their flat call list paired with the real query."""
        picks = rng.sample(self.seeds, min(self.cfg.query.shots, len(self.seeds)))
        shots = []
        for rec in picks:
            tasks = [PlanTask(task_id(i + 1), name, args) for i, (name, args) in enumerate(rec.answer_calls)]
            shots.append({"plan": describe_plan(PlanDag(tasks), rec.extracted_tools), "query": rec.query})
        return shots

    def _distractor_pool(self, exclude: set[str], rng: random.Random, need: int):
        seen, pool = set(exclude), []
        for rec in self.seeds:
            for t in rec.extracted_tools:
                if t.name not in seen:
                    seen.add(t.name)
                    pool.append(t)
        picked = rng.sample(pool, min(need, len(pool)))
        picked = [infer_output_schema(t, rng, bounds=self.cfg.output_fields) for t in picked]
        if len(picked) < need:
            picked += synth_distractors(need - len(picked), rng, seen)
        return picked

    # -- one sample ------------------------------------------------------------------

    def build(self, index: int, scenario: Optional[ScenarioKind], attempt: int = 0) -> Transcript:
        cfg = self.cfg
        rng = sample_rng(cfg.seed, index, attempt)
        record = rng.choice(self.seeds)
        seed_tools = self._seed_tools(record)
        template = sample_template(replace(cfg.template, rng_seed=rng.getrandbits(63)), len(seed_tools))
        tools, gold = populate(template, seed_tools, rng, seed_args=record.arguments(),
                               output_bounds=cfg.output_fields)
        value_seed = rng.getrandbits(63)
        calls, obs = execute(gold, tools, {}, ExecutionPolicy(None, value_seed))
        meta = {
            "seed_source": record.source,
            "seed_query": record.query,
            "template_layers": list(template.layers),
            "template_height": template.height,
            "template_width": template.width,
            "generation_seed": sample_key(cfg.seed, index, attempt),
            "value_seed": value_seed,
            "split": cfg.split,
            "turn_templates": [list(template.layers)],
        }
        query = self._query(gold, tools, rng, meta)
        turn = Turn(query, gold, None, calls, obs, summarize(calls, obs))
        transcript = Transcript(f"{cfg.split}-{index:06d}", tools, (turn,), meta)

        if scenario is not None:
            fresh_tools, fresh_args = [], None
            if scenario is ScenarioKind.IRRELEVANT:
                used = {t.name for t in tools}
                options = [r for r in self.seeds if not used & set(r.toolnames)]
                if not options:
                    raise ScenarioInfeasible("no seed record with unused tools")
                fresh = rng.choice(options)
                fresh_tools, fresh_args = self._seed_tools(fresh), fresh.arguments()
            qmeta: dict = {}
            transcript = extend(
                transcript, scenario, fresh_tools, rng,
                template_cfg=cfg.template, fresh_seed_args=fresh_args, value_seed=value_seed,
                query_fn=lambda g, ts: self._query(g, ts, rng, qmeta),
            )
            if qmeta:
                transcript = replace(transcript, meta={**transcript.meta, **qmeta})

        relevant = list(transcript.system_tools)
        count = len(relevant) if cfg.distractors is None else cfg.distractors
        pool = self._distractor_pool({t.name for t in relevant}, rng, count)
        system_tools = inject_distractors(relevant, pool, count, rng)
        return replace(transcript, system_tools=tuple(system_tools))

    def generate_one(self, index: int, scenario: Optional[ScenarioKind]) -> tuple[Optional[Transcript], int]:
        """Build and validate, retrying up to ``max_attempts`` times."""
        for attempt in range(self.cfg.max_attempts):
            try:
                transcript = self.build(index, scenario, attempt)
            except ToolDagError as exc:
                log.info("sample %d attempt %d failed to build: %s", index, attempt, exc)
                continue
            violations = validate_sample(transcript)
            if not violations:
                meta = {**transcript.meta, "attempts": attempt + 1}
                return replace(transcript, meta=meta), attempt + 1
            log.info("sample %d attempt %d rejected: %s", index, attempt, violations[0].message)
        return None, self.cfg.max_attempts

    def run(self) -> GenerationResult:
        plan = scenario_mix(self.cfg.samples, self.cfg.multi_turn)
        jobs = list(enumerate(plan))
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                results = list(pool.map(lambda job: self.generate_one(*job), jobs))
        else:
            results = [self.generate_one(i, s) for i, s in jobs]
        transcripts = [t for t, _ in results if t is not None]
        return GenerationResult(transcripts, [a for _, a in results], self.cfg.samples, self.cfg.split)


def corpus_stats(transcripts: Sequence[Transcript], requested: Optional[int] = None,
                 attempts: Optional[int] = None, split: Optional[str] = None) -> dict:
    """Dataset summary: count, multi-turn share, template height/width, success rate.

    ``success_rate`` is validated samples over generation attempts;
    ``sample_yield`` is validated samples over requested samples.
    """
    n = len(transcripts)
    multi = sum(1 for t in transcripts if len(t.turns) > 1)
    layers = [t.meta["template_layers"] for t in transcripts if t.meta.get("template_layers")]
    if layers:
        st = layer_stats(layers)
        height = {"mean": st.height_mean, "std": st.height_std}
        width = {"mean": st.width_mean, "std": st.width_std}
    else:
        height = {"mean": 0.0, "std": 0.0}
        width = {"mean": 0.0, "std": 0.0}
    if attempts is None:
        attempts = sum(int(t.meta.get("attempts", 1)) for t in transcripts)
    scenarios = {k.value: 0 for k in ScenarioKind}
    for t in transcripts:
        if t.scenario is not None:
            scenarios[t.scenario.value] += 1
    if split is None:
        splits = {t.meta.get("split") for t in transcripts}
        split = splits.pop() if len(splits) == 1 else "mixed"
    return {
        "type": split or "",
        "data_count": n,
        "multi_turn_proportion": multi / n if n else 0.0,
        "average_height": height,
        "average_width": width,
        "success_rate": n / attempts if attempts else 0.0,
        "sample_yield": (n / requested if requested else 0.0) if requested is not None else None,
        "scenario_counts": scenarios,
    }
