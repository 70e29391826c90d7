"""Corpus-level scoring and endpoint evaluation behind the CLI."""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .codec import render_turn, transcript_from_obj
from .errors import RemoteUnavailable
from .model import PlanDag, Transcript
from .query import build_system_prompt
from .reward import RewardConfig, TurnScore, acc_user_query, extract_plan, pass_at_k, score_output

log = logging.getLogger(__name__)

METRICS = ("r_format", "r_dag", "r_total", "acc_step", "acc_user_query")


def load_predictions(path: Union[str, Path]) -> dict[tuple[str, int], str]:
    """Model outputs keyed by ``(sample_id, turn_index)``.

    Lines are either ``{"sample_id", "turn_index", "output"}`` records or full
    corpus records, whose turns are rendered back into tagged text.
    """
    out: dict[tuple[str, int], str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                log.warning("prediction line %d is not JSON, skipped", lineno)
                continue
            if not isinstance(obj, dict) or "sample_id" not in obj:
                log.warning("prediction line %d has no sample_id, skipped", lineno)
                continue
            sid = str(obj["sample_id"])
            if "turns" in obj:
                try:
                    t = transcript_from_obj(obj)
                except Exception as exc:  # noqa: BLE001
                    log.warning("prediction line %d is not a corpus record: %s", lineno, exc)
                    continue
                for i, turn in enumerate(t.turns):
                    out[(sid, i)] = render_turn(turn)
            else:
                out[(sid, int(obj.get("turn_index", 0)))] = str(obj.get("output", ""))
    return out


def score_corpus(preds: Mapping[tuple[str, int], str], gold: Iterable[Transcript],
                 cfg: RewardConfig = RewardConfig()) -> list[TurnScore]:
    """Score every gold turn; a missing prediction scores as empty output."""
    rows = []
    for t in gold:
        prior: list[PlanDag] = []
        for i, turn in enumerate(t.turns):
            text = preds.get((t.sample_id, i), "")
            scenario = turn.scenario.value if turn.scenario else None
            rows.append(score_output(text, turn.dag, cfg, prior, t.sample_id, i, scenario))
            prior.append(turn.dag)
    return rows


def _means(rows: Sequence[TurnScore]) -> dict:
    agg = {"n": len(rows)}
    for m in METRICS:
        agg[m] = statistics.fmean(getattr(r, m) for r in rows) if rows else 0.0
    return agg


def aggregate(rows: Sequence[TurnScore]) -> dict:
    """Overall means plus one row per scenario kind present among the turns."""
    by: dict[str, list[TurnScore]] = {}
    for r in rows:
        if r.scenario:
            by.setdefault(r.scenario, []).append(r)
    return {"overall": _means(rows), "by_scenario": {k: _means(v) for k, v in sorted(by.items())}}


def format_table(agg: dict) -> str:
    head = f"{'group':<14}{'n':>6}" + "".join(f"{m:>16}" for m in METRICS)
    lines = [head]
    groups = [("overall", agg["overall"])] + list(agg["by_scenario"].items())
    for name, row in groups:
        lines.append(f"{name:<14}{row['n']:>6}" + "".join(f"{row[m]:>16.4f}" for m in METRICS))
    return "\n".join(lines)


# --- endpoint evaluation ---------------------------------------------------------------


def conversation(t: Transcript, turn_index: int) -> list[dict]:
    """Chat messages asking for turn ``turn_index`` given gold earlier turns."""
    messages = [{"role": "system", "content": build_system_prompt(t.system_tools)}]
    for turn in t.turns[:turn_index]:
        messages.append({"role": "user", "content": turn.user_query})
        messages.append({"role": "assistant", "content": render_turn(turn)})
    messages.append({"role": "user", "content": t.turns[turn_index].user_query})
    return messages


@dataclass
class UnitResult:
    sample_id: str
    turn_index: int
    scenario: Optional[str]
    outcomes: list[int]
    failures: int
    pass_k: Optional[float] = None
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "turn_index": self.turn_index,
            "scenario": self.scenario,
            "outcomes": self.outcomes,
            "endpoint_failures": self.failures,
            "pass_at_k": self.pass_k,
            "flagged": self.flagged,
        }


@dataclass
class EvalReport:
    k: int
    runs: int
    units: list[UnitResult] = field(default_factory=list)

    def summary(self) -> dict:
        def stats(units):
            vals = [u.pass_k for u in units if not u.flagged]
            return {
                "n": len(vals),
                "mean": statistics.fmean(vals) if vals else 0.0,
                "std": statistics.stdev(vals) if len(vals) > 1 else 0.0,
            }

        by: dict[str, list[UnitResult]] = {}
        for u in self.units:
            if u.scenario:
                by.setdefault(u.scenario, []).append(u)
        return {
            "k": self.k,
            "runs": self.runs,
            f"pass@{self.k}": stats(self.units),
            "by_scenario": {s: stats(v) for s, v in sorted(by.items())},
            "flagged": [f"{u.sample_id}#{u.turn_index}" for u in self.units if u.flagged],
        }


def evaluate_corpus(transcripts: Iterable[Transcript], chat, runs: int = 10, k: int = 1,
                    temperature: float = 0.1, cfg: RewardConfig = RewardConfig()) -> EvalReport:
    """Query ``chat`` ``runs`` times per turn and estimate pass@k on acc_user_query.

    A failed request counts as an incorrect run.  Turns where every request
    failed are flagged and left out of the estimate.
    """
    if not 1 <= k <= runs:
        raise ValueError(f"need 1 <= k <= runs, got k={k}, runs={runs}")
    report = EvalReport(k, runs)
    for t in transcripts:
        prior: list[PlanDag] = []
        for i, turn in enumerate(t.turns):
            messages = conversation(t, i)
            outcomes, failures = [], 0
            for _ in range(runs):
                try:
                    text = chat.complete(messages, temperature)
                except RemoteUnavailable as exc:
                    log.warning("%s turn %d: endpoint failed: %s", t.sample_id, i, exc)
                    failures += 1
                    outcomes.append(0)
                    continue
                pred = extract_plan(text)
                outcomes.append(0 if pred is None else acc_user_query(pred, turn.dag, cfg, prior))
            unit = UnitResult(t.sample_id, i, turn.scenario.value if turn.scenario else None, outcomes, failures)
            if failures == runs:
                unit.flagged = True
            else:
                unit.pass_k = pass_at_k(outcomes, k)
            report.units.append(unit)
            prior.append(turn.dag)
    return report
