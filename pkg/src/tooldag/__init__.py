"""Synthetic multi-turn tool-calling data with DAG plans, plus rule checks and graph rewards."""

from .codec import parse_plan, parse_transcript, read_corpus, render_turn, serialize_plan, write_corpus
from .model import FieldSchema, Observation, PlanDag, PlanTask, ScenarioKind, SymbolicRef, ToolCall, ToolSpec, Transcript, Turn
from .pipeline import Generator, PipelineConfig, load_config
from .reward import RewardConfig, acc_step, acc_user_query, ged, pass_at_k, r_dag, r_format, r_total
from .validator import Violation, validate_sample

__version__ = "0.1.0"

__all__ = [
    "FieldSchema", "Generator", "Observation", "PipelineConfig", "PlanDag", "PlanTask", "RewardConfig", "ScenarioKind", "SymbolicRef",
    "ToolCall", "ToolSpec", "Transcript", "Turn", "Violation",
    "acc_step", "acc_user_query", "ged", "load_config", "parse_plan", "parse_transcript", "pass_at_k", "r_dag", "r_format",
    "r_total", "read_corpus", "render_turn", "serialize_plan", "validate_sample", "write_corpus",
]
