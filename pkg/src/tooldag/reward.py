"""Graph-edit-distance reward for predicted plans, plus evaluation metrics.

Nodes are tool calls; two calls are equivalent when tool name, parameter
names and parameter values all agree.  Refs are compared by what they point
at (source tool name and output key), never by raw task number, so
renumbered plans still match.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .codec import parse_plan, parse_transcript
from .errors import PlanFormatError, TooLarge, TranscriptFormatError
from .model import PlanDag, PlanTask, SymbolicRef, json_equal, validate_structure

Resolver = Callable[[SymbolicRef], tuple]


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 1.0
    node_cost_insert: float = 1.0
    node_cost_delete: float = 1.0
    node_cost_substitute: float = 1.0
    edge_cost_insert: float = 1.0
    edge_cost_delete: float = 1.0
    max_exact_nodes: int = 12

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        for name in ("node_cost_insert", "node_cost_delete", "node_cost_substitute",
                     "edge_cost_insert", "edge_cost_delete"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class GedResult:
    distance: float
    edit_ops: tuple = ()
    exact: bool = True


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: int
    r_dag: float
    r_total: float
    ged: Optional[float]
    edit_ops: tuple = ()
    exact: bool = True
    pred_valid: bool = True


# --- node equivalence ---------------------------------------------------------


def make_resolver(dag: PlanDag, prior_dags: Sequence[PlanDag] = ()) -> Resolver:
    """Map a ref to ``(source toolname, output key)`` using ``dag`` then earlier turns."""
    table: dict[str, str] = {}
    for d in prior_dags:
        for t in d.tasks:
            table[t.task_id] = t.toolname
    for t in dag.tasks:
        table[t.task_id] = t.toolname

    def resolve(ref: SymbolicRef) -> tuple:
        name = table.get(ref.task_id)
        if name is None:
            return ("?", ref.task_ordinal, ref.output_key)
        return (name, ref.output_key)

    return resolve


def node_equivalent(a: PlanTask, b: PlanTask, resolve_a: Resolver, resolve_b: Resolver) -> bool:
    if a.toolname != b.toolname or a.payload.keys() != b.payload.keys():
        return False
    for k, va in a.payload.items():
        vb = b.payload[k]
        ra, rb = isinstance(va, SymbolicRef), isinstance(vb, SymbolicRef)
        if ra != rb:
            return False
        if ra:
            if resolve_a(va) != resolve_b(vb):
                return False
        elif not json_equal(va, vb):
            return False
    return True


# --- graph edit distance ---------------------------------------------------------


class _Graph:
    def __init__(self, dag: PlanDag):
        self.ids = dag.task_ids
        self.tasks = list(dag.tasks)
        pos = {tid: i for i, tid in enumerate(self.ids)}
        self.edges = {(pos[a], pos[b]) for a, b in dag.edges()}
        self.n = len(self.ids)


def _sub_matrix(g1: _Graph, g2: _Graph, r1: Resolver, r2: Resolver, cost: float) -> list[list[float]]:
    return [[0.0 if node_equivalent(a, b, r1, r2) else cost for b in g2.tasks] for a in g1.tasks]


def _mapping_cost(g1: _Graph, g2: _Graph, sub, mapping: Sequence[int], cfg: RewardConfig) -> float:
    total = 0.0
    for i, x in enumerate(mapping):
        total += cfg.node_cost_delete if x < 0 else sub[i][x]
    image = set(x for x in mapping if x >= 0)
    total += cfg.node_cost_insert * (g2.n - len(image))
    mapped_edges = set()
    for i, j in g1.edges:
        x, y = mapping[i], mapping[j]
        if x >= 0 and y >= 0 and (x, y) in g2.edges:
            mapped_edges.add((x, y))
        else:
            total += cfg.edge_cost_delete
    total += cfg.edge_cost_insert * (len(g2.edges) - len(mapped_edges))
    return total


def _edit_ops(g1: _Graph, g2: _Graph, sub, mapping: Sequence[int]) -> tuple:
    ops = []
    for i, x in enumerate(mapping):
        if x < 0:
            ops.append(("delete_node", g1.ids[i]))
        elif sub[i][x] > 0:
            ops.append(("relabel_node", g1.ids[i], g2.ids[x]))
    image = {x for x in mapping if x >= 0}
    ops.extend(("insert_node", g2.ids[x]) for x in range(g2.n) if x not in image)
    kept = set()
    for i, j in sorted(g1.edges):
        x, y = mapping[i], mapping[j]
        if x >= 0 and y >= 0 and (x, y) in g2.edges:
            kept.add((x, y))
        else:
            ops.append(("delete_edge", g1.ids[i], g1.ids[j]))
    ops.extend(("insert_edge", g2.ids[x], g2.ids[y]) for x, y in sorted(g2.edges - kept))
    return tuple(ops)


def _assignment_mapping(g1: _Graph, g2: _Graph, sub, cfg: RewardConfig) -> list[int]:
    """Bipartite node assignment with a degree-difference edge estimate."""
    n1, n2 = g1.n, g2.n
    if n1 == 0:
        return []
    big = 1e9
    deg1 = [sum(1 for e in g1.edges if i in e) for i in range(n1)]
    deg2 = [sum(1 for e in g2.edges if x in e) for x in range(n2)]
    edge_unit = 0.5 * min(cfg.edge_cost_delete, cfg.edge_cost_insert)
    cost = np.zeros((n1 + n2, n1 + n2))
    for i in range(n1):
        for x in range(n2):
            cost[i, x] = sub[i][x] + edge_unit * abs(deg1[i] - deg2[x])
        cost[i, n2:] = big
        cost[i, n2 + i] = cfg.node_cost_delete + 0.5 * cfg.edge_cost_delete * deg1[i]
    for x in range(n2):
        cost[n1:, x] = big
        cost[n1 + x, x] = cfg.node_cost_insert + 0.5 * cfg.edge_cost_insert * deg2[x]
    rows, cols = linear_sum_assignment(cost)
    mapping = [-1] * n1
    for r, c in zip(rows, cols):
        if r < n1 and c < n2:
            mapping[r] = int(c)
    return mapping


def _branch_and_bound(g1: _Graph, g2: _Graph, sub, cfg: RewardConfig, seed_mapping: list[int]):
    n1, n2 = g1.n, g2.n
    best_cost = _mapping_cost(g1, g2, sub, seed_mapping, cfg)
    best_map = list(seed_mapping)
    if best_cost == 0:
        return best_cost, best_map
    e1 = g1.edges
    e2 = g2.edges
    equiv = [[sub[i][x] == 0 for x in range(n2)] for i in range(n1)]
    mapping = [-1] * n1
    used = [False] * n2
    cdel, cins, csub = cfg.node_cost_delete, cfg.node_cost_insert, cfg.node_cost_substitute
    edel, eins = cfg.edge_cost_delete, cfg.edge_cost_insert

    def lower_bound(i: int) -> float:
        r1 = n1 - i
        free = [x for x in range(n2) if not used[x]]
        r2 = len(free)
        a1 = sum(1 for u in range(i, n1) if any(equiv[u][x] for x in free))
        a2 = sum(1 for x in free if any(equiv[u][x] for u in range(i, n1)))
        cap = min(a1, a2)
        node_lb = min((r1 - m) * cdel + (r2 - m) * cins + max(0, m - cap) * csub for m in range(min(r1, r2) + 1))
        open1 = sum(1 for a, b in e1 if a >= i or b >= i)
        open2 = sum(1 for a, b in e2 if not used[a] or not used[b])
        edge_lb = max(0, open1 - open2) * edel + max(0, open2 - open1) * eins
        return node_lb + edge_lb

    def step_cost(i: int, x: int) -> float:
        c = cdel if x < 0 else sub[i][x]
        for j in range(i):
            y = mapping[j]
            both = x >= 0 and y >= 0
            if (j, i) in e1:
                c += 0.0 if both and (y, x) in e2 else edel
            if (i, j) in e1:
                c += 0.0 if both and (x, y) in e2 else edel
            if both:
                if (y, x) in e2 and (j, i) not in e1:
                    c += eins
                if (x, y) in e2 and (i, j) not in e1:
                    c += eins
        return c

    def completion() -> float:
        c = cins * sum(1 for x in range(n2) if not used[x])
        c += eins * sum(1 for a, b in e2 if not used[a] or not used[b])
        return c

    def rec(i: int, cost: float) -> None:
        nonlocal best_cost, best_map
        if i == n1:
            total = cost + completion()
            if total < best_cost:
                best_cost, best_map = total, list(mapping)
            return
        if cost + lower_bound(i) >= best_cost:
            return
        options = sorted(((step_cost(i, x), x) for x in [*range(n2), -1] if x < 0 or not used[x]),
                         key=lambda t: (t[0], t[1] < 0, t[1]))
        for c, x in options:
            if cost + c >= best_cost:
                continue
            mapping[i] = x
            if x >= 0:
                used[x] = True
            rec(i + 1, cost + c)
            if x >= 0:
                used[x] = False
            mapping[i] = -1

    rec(0, 0.0)
    return best_cost, best_map


def ged(g1: PlanDag, g2: PlanDag, cfg: RewardConfig = RewardConfig(), *,
        prior_dags: Sequence[PlanDag] = (), prior_dags_2: Optional[Sequence[PlanDag]] = None,
        mode: str = "auto") -> GedResult:
    """Graph edit distance between two plans.

    ``mode="exact"`` raises :class:`TooLarge` above ``cfg.max_exact_nodes``;
    ``"auto"`` then falls back to an assignment-based upper bound flagged
    ``exact=False``.  ``prior_dags`` resolve cross-turn refs (``prior_dags_2``
    for the second plan, defaulting to the same history).
    """
    if mode not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown mode {mode!r}")
    a, b = _Graph(g1), _Graph(g2)
    r1 = make_resolver(g1, prior_dags)
    r2 = make_resolver(g2, prior_dags if prior_dags_2 is None else prior_dags_2)
    sub = _sub_matrix(a, b, r1, r2, cfg.node_cost_substitute)
    seed = _assignment_mapping(a, b, sub, cfg)
    too_large = max(a.n, b.n) > cfg.max_exact_nodes
    if mode == "exact" and too_large:
        raise TooLarge(f"{max(a.n, b.n)} nodes exceeds max_exact_nodes={cfg.max_exact_nodes}")
    if mode == "approx" or too_large:
        return GedResult(_mapping_cost(a, b, sub, seed, cfg), _edit_ops(a, b, sub, seed), exact=False)
    cost, mapping = _branch_and_bound(a, b, sub, cfg, seed)
    return GedResult(cost, _edit_ops(a, b, sub, mapping), exact=True)


def ged_to_empty(g: PlanDag, cfg: RewardConfig = RewardConfig()) -> float:
    return len(g) * cfg.node_cost_delete + len(g.edges()) * cfg.edge_cost_delete


def is_valid_prediction(pred: PlanDag, prior_dags: Sequence[PlanDag] = ()) -> bool:
    prior_ids = [tid for d in prior_dags for tid in d.task_ids]
    return not validate_structure(pred, prior_ids)


def r_dag(pred: PlanDag, gold: PlanDag, cfg: RewardConfig = RewardConfig(),
          prior_dags: Sequence[PlanDag] = ()) -> float:
    """``1 - GED(pred, gold) / (GED(pred, empty) + GED(gold, empty))``, 1 when both are empty.

    Structurally invalid predictions score 0.
    """
    return _r_dag_with_ged(pred, gold, cfg, prior_dags)[0]


def _r_dag_with_ged(pred, gold, cfg, prior_dags):
    if not is_valid_prediction(pred, prior_dags):
        return 0.0, None
    result = ged(pred, gold, cfg, prior_dags=prior_dags)
    denom = ged_to_empty(pred, cfg) + ged_to_empty(gold, cfg)
    if denom == 0:
        return 1.0, result
    return min(1.0, max(0.0, 1.0 - result.distance / denom)), result


_FORMAT_RE = re.compile(r"T D(?: C O)*(?: R)?")
_TAG_LETTER = {"think": "T", "DAG": "D", "tool_call": "C", "obs": "O", "response": "R"}


def r_format(text: str) -> int:
    """1 when the tags read think, DAG, (tool_call, obs)*, optional response."""
    try:
        segments = parse_transcript(text)
    except TranscriptFormatError:
        return 0
    seq = " ".join(_TAG_LETTER[s.tag] for s in segments)
    return 1 if _FORMAT_RE.fullmatch(seq) else 0


def extract_plan(text: str) -> Optional[PlanDag]:
    """The plan inside the single ``<DAG>`` block, or ``None``."""
    try:
        segments = parse_transcript(text)
    except TranscriptFormatError:
        return None
    dags = [s for s in segments if s.tag == "DAG"]
    if len(dags) != 1:
        return None
    try:
        return parse_plan(dags[0].body)
    except PlanFormatError:
        return None


def r_total(text: str, gold: PlanDag, cfg: RewardConfig = RewardConfig(),
            prior_dags: Sequence[PlanDag] = ()) -> RewardBreakdown:
    fmt = r_format(text)
    pred = extract_plan(text)
    if pred is None:
        return RewardBreakdown(fmt, 0.0, float(fmt), None, pred_valid=False)
    score, result = _r_dag_with_ged(pred, gold, cfg, prior_dags)
    if result is None:
        return RewardBreakdown(fmt, 0.0, float(fmt), None, pred_valid=False)
    return RewardBreakdown(fmt, score, fmt + cfg.alpha * score, result.distance, result.edit_ops, result.exact)


# --- metrics ---------------------------------------------------------------------


def _max_matching(adj: list[list[int]], n_right: int) -> int:
    match_right = [-1] * n_right

    def augment(u: int, seen: list[bool]) -> bool:
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                if match_right[v] < 0 or augment(match_right[v], seen):
                    match_right[v] = u
                    return True
        return False

    return sum(1 for u in range(len(adj)) if augment(u, [False] * n_right))


def acc_step(pred: PlanDag, gold: PlanDag, prior_dags: Sequence[PlanDag] = ()) -> float:
    """Share of gold calls matched one-to-one by an equivalent predicted call.

    Dependencies are ignored.  An empty gold plan scores 1 only against an
    empty prediction.
    """
    if len(gold) == 0:
        return 1.0 if len(pred) == 0 else 0.0
    rg, rp = make_resolver(gold, prior_dags), make_resolver(pred, prior_dags)
    adj = [[j for j, p in enumerate(pred.tasks) if node_equivalent(g, p, rg, rp)] for g in gold.tasks]
    return _max_matching(adj, len(pred)) / len(gold)


def acc_user_query(pred: PlanDag, gold: PlanDag, cfg: RewardConfig = RewardConfig(),
                   prior_dags: Sequence[PlanDag] = ()) -> int:
    if not is_valid_prediction(pred, prior_dags):
        return 0
    return 1 if ged(pred, gold, cfg, prior_dags=prior_dags).distance == 0 else 0


def pass_at_k(outcomes: Sequence[int], k: int) -> float:
    """Unbiased pass@k estimate from ``n = len(outcomes)`` runs."""
    n = len(outcomes)
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    c = sum(1 for o in outcomes if o)
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


@dataclass
class TurnScore:
    sample_id: str
    turn_index: int
    r_format: int
    r_dag: float
    r_total: float
    ged: Optional[float]
    acc_step: float
    acc_user_query: int
    scenario: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "turn_index": self.turn_index,
            "r_format": self.r_format,
            "r_dag": self.r_dag,
            "r_total": self.r_total,
            "ged": self.ged,
            "acc_step": self.acc_step,
            "acc_user_query": self.acc_user_query,
        }


def score_output(text: str, gold: PlanDag, cfg: RewardConfig = RewardConfig(),
                 prior_dags: Sequence[PlanDag] = (), sample_id: str = "", turn_index: int = 0,
                 scenario: Optional[str] = None) -> TurnScore:
    """All per-turn rewards and metrics for one model output."""
    br = r_total(text, gold, cfg, prior_dags)
    pred = extract_plan(text)
    step = 0.0 if pred is None else acc_step(pred, gold, prior_dags)
    uq = 1 if br.pred_valid and br.ged == 0 else 0
    return TurnScore(sample_id, turn_index, br.r_format, br.r_dag, br.r_total, br.ged, step, uq, scenario)
