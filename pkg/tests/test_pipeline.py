from __future__ import annotations

import json

import httpx
import pytest

from tooldag.codec import dumps_transcript
from tooldag.errors import InvalidConfig
from tooldag.pipeline import Generator, PipelineConfig, corpus_stats, load_config
from tooldag.query import ChatClient, EndpointConfig
from tooldag.seeds import load_builtin_seeds, record_to_obj
from tooldag.templates import layer_stats
from tooldag.validator import validate_sample

TABLE_COLUMNS = {"type", "data_count", "multi_turn_proportion", "average_height", "average_width", "success_rate"}


def test_generation_is_reproducible():
    cfg = PipelineConfig(samples=8, seed=5, multi_turn=0.5)
    a = [dumps_transcript(t) for t in Generator(cfg).run().transcripts]
    b = [dumps_transcript(t) for t in Generator(cfg).run().transcripts]
    assert a == b
    c = [dumps_transcript(t) for t in Generator(PipelineConfig(samples=8, seed=6, multi_turn=0.5)).run().transcripts]
    assert a != c


def test_workers_do_not_change_output():
    serial = Generator(PipelineConfig(samples=10, seed=2, multi_turn=0.3)).run().transcripts
    threaded = Generator(PipelineConfig(samples=10, seed=2, multi_turn=0.3, workers=4)).run().transcripts
    assert [t.sample_id for t in threaded] == [t.sample_id for t in serial]
    assert [dumps_transcript(t) for t in threaded] == [dumps_transcript(t) for t in serial]


def test_every_emitted_sample_validates_and_has_distractors():
    result = Generator(PipelineConfig(samples=20, seed=1, multi_turn=0.5)).run()
    assert len(result.transcripts) == 20
    for t in result.transcripts:
        assert not validate_sample(t)
        relevant = [x for x in t.system_tools if x.origin != "distractor"]
        distractors = [x for x in t.system_tools if x.origin == "distractor"]
        assert len(distractors) == len(relevant)
        assert t.meta["template_layers"][0] >= 1


def test_distractor_count_override():
    (t,) = Generator(PipelineConfig(samples=1, distractors=0)).run().transcripts
    assert not any(x.origin == "distractor" for x in t.system_tools)
    (t,) = Generator(PipelineConfig(samples=1, distractors=60)).run().transcripts
    assert sum(x.origin == "distractor" for x in t.system_tools) == 60


def test_stats_columns_and_values():
    result = Generator(PipelineConfig(samples=30, seed=4, multi_turn=0.3)).run()
    stats = result.stats()
    assert TABLE_COLUMNS <= set(stats)
    assert stats["data_count"] == 30
    assert stats["multi_turn_proportion"] == pytest.approx(9 / 30)
    st = layer_stats([t.meta["template_layers"] for t in result.transcripts])
    assert stats["average_height"] == {"mean": st.height_mean, "std": st.height_std}
    assert stats["average_width"] == {"mean": st.width_mean, "std": st.width_std}
    assert 0 < stats["success_rate"] <= 1
    assert corpus_stats(result.transcripts)["average_height"] == stats["average_height"]


def test_zero_samples():
    result = Generator(PipelineConfig(samples=0)).run()
    assert result.transcripts == []
    stats = result.stats()
    assert stats["data_count"] == 0 and stats["multi_turn_proportion"] == 0
    assert stats["average_height"] == {"mean": 0.0, "std": 0.0}
    assert stats["success_rate"] == 0


def test_config_loading(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("samples: 3\nseed: 9\nmulti_turn: {dependent: 0.5}\ntemplate: {height_max: 4}\nreward: {alpha: 0.5}\n")
    cfg = load_config(p)
    assert cfg.samples == 3 and cfg.template.height_max == 4 and cfg.alpha == 0.5
    p.write_text("samples: 3\nbogus: 1\n")
    with pytest.raises(InvalidConfig):
        load_config(p)
    p.write_text("template: {height_min: 5, height_max: 2}\n")
    with pytest.raises(InvalidConfig):
        load_config(p)
    p.write_text("multi_turn: 1.4\n")
    with pytest.raises(InvalidConfig):
        load_config(p)
    p.write_text("query: {mode: remote}\n")
    with pytest.raises(InvalidConfig):
        load_config(p)
    p.write_text(json.dumps({"samples": 2}))
    assert load_config(p).samples == 2
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "missing.yaml")


def test_test_split_uses_disjoint_seeds():
    train = Generator(PipelineConfig(samples=1, test_fraction=0.25, split="train"))
    test = Generator(PipelineConfig(samples=1, test_fraction=0.25, split="test"))
    def keys(g):
        return {json.dumps(record_to_obj(r), sort_keys=True) for r in g.seeds}

    assert not keys(train) & keys(test)
    assert len(train.seeds) + len(test.seeds) == len(load_builtin_seeds())
    assert len(test.seeds) == round(0.25 * len(load_builtin_seeds()))


def test_remote_queries_and_fallback_on_failure():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json={"choices": [{"message": {"content": "remote query text"}}]})

    cfg = PipelineConfig.from_dict({"samples": 2, "query": {"mode": "remote", "endpoint_url": "http://stub/x", "model": "m"}})
    chat = ChatClient(EndpointConfig("http://stub/x", "m"), transport=httpx.MockTransport(handler), sleep=lambda s: None)
    result = Generator(cfg, chat=chat).run()
    assert [t.turns[0].user_query for t in result.transcripts] == ["remote query text"] * 2
    assert len(seen[0]["messages"]) == 1 + 2 * 3 + 1

    down = ChatClient(EndpointConfig("http://stub/x", "m", retries=0),
                      transport=httpx.MockTransport(lambda r: httpx.Response(503)), sleep=lambda s: None)
    result = Generator(cfg, chat=down).run()
    assert len(result.transcripts) == 2
    assert all(t.meta.get("query_fallback") for t in result.transcripts)
