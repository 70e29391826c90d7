from __future__ import annotations

import pytest

from tooldag.pipeline import Generator, PipelineConfig


@pytest.fixture(scope="session")
def small_corpus():
    """Twelve validated samples, half of them multi-turn."""
    return Generator(PipelineConfig(samples=12, seed=3, multi_turn=0.5)).run().transcripts


@pytest.fixture(scope="session")
def multi_corpus():
    """One hundred samples, every one of them multi-turn."""
    return Generator(PipelineConfig(samples=100, seed=21, multi_turn=1.0)).run().transcripts
