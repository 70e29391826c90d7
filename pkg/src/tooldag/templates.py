"""Random layered DAG templates with controllable height and width."""

from __future__ import annotations

import json
import random
import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import EmptyInput, InvalidConfig

Node = tuple[int, int]  # (layer, index), both zero-based


@dataclass(frozen=True)
class TemplateConfig:
    height_min: int = 2
    height_max: int = 3
    width_min: int = 2
    width_max: int = 4
    first_layer_size: int = 4
    edge_density: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("height_min", "height_max", "width_min", "width_max", "first_layer_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if self.height_min > self.height_max:
            raise InvalidConfig("height_min > height_max")
        if self.width_min > self.width_max:
            raise InvalidConfig("width_min > width_max")
        if not 0 < self.edge_density <= 1:
            raise InvalidConfig("edge_density must lie in (0, 1]")


@dataclass(frozen=True)
class DagTemplate:
    layers: tuple[int, ...]
    edges: tuple[tuple[Node, Node], ...] = field(default=())

    @property
    def height(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> float:
        return sum(self.layers) / len(self.layers) if self.layers else 0.0

    def nodes(self) -> list[Node]:
        return [(k, i) for k, size in enumerate(self.layers) for i in range(size)]

    def parents(self, node: Node) -> list[Node]:
        return [a for a, b in self.edges if b == node]

    def children(self, node: Node) -> list[Node]:
        return [b for a, b in self.edges if a == node]

    def to_json(self) -> str:
        return json.dumps({"layers": list(self.layers), "edges": [list(map(list, e)) for e in self.edges]})


def sample_template(cfg: TemplateConfig, seed_tool_count: Optional[int] = None) -> DagTemplate:
    """Draw a layered template; layer 0 holds the seed tools.

    Each node past layer 0 gets one parent from the previous layer plus extra
    parents from any earlier layer with probability ``edge_density``.  Nodes
    left without children get one edge into the next layer.
    """
    if seed_tool_count is None:
        seed_tool_count = cfg.first_layer_size
    if seed_tool_count < 1:
        raise InvalidConfig("seed_tool_count must be >= 1")
    rng = random.Random(cfg.rng_seed)
    height = rng.randint(cfg.height_min, cfg.height_max)
    layers = [seed_tool_count] + [rng.randint(cfg.width_min, cfg.width_max) for _ in range(height - 1)]

    edges: set[tuple[Node, Node]] = set()
    for k in range(1, height):
        for i in range(layers[k]):
            child = (k, i)
            edges.add(((k - 1, rng.randrange(layers[k - 1])), child))
            for pk in range(k):
                for pi in range(layers[pk]):
                    if rng.random() < cfg.edge_density:
                        edges.add(((pk, pi), child))
    for k in range(height - 1):
        for i in range(layers[k]):
            if not any(a == (k, i) for a, _ in edges):
                edges.add(((k, i), (k + 1, rng.randrange(layers[k + 1]))))
    return DagTemplate(tuple(layers), tuple(sorted(edges)))


@dataclass(frozen=True)
class TemplateStats:
    height_mean: float
    height_std: float
    width_mean: float
    width_std: float


def template_stats(templates: Sequence[DagTemplate]) -> TemplateStats:
    """Mean and sample standard deviation of template height and width."""
    if not templates:
        raise EmptyInput("template_stats needs at least one template")
    return layer_stats([list(t.layers) for t in templates])


def layer_stats(layer_sizes: Sequence[Sequence[int]]) -> TemplateStats:
    """Same as :func:`template_stats` but from bare layer-size lists."""
    if not layer_sizes:
        raise EmptyInput("no templates")
    heights = [len(x) for x in layer_sizes]
    widths = [sum(x) / len(x) for x in layer_sizes]

    def std(xs):
        return statistics.stdev(xs) if len(xs) > 1 else 0.0

    return TemplateStats(statistics.fmean(heights), std(heights), statistics.fmean(widths), std(widths))
