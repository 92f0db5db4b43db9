"""Confidence-gated small/large language model cascade toolkit."""

from .backends import BackendSpec, ScriptedProfile, build_prompt, count_tokens_fallback, make_backend
from .cascade import CascadeDecision, CascadeEngine, CascadePolicy, avg_prob_confidence, decide, router_confidence
from .costs import CostBreakdown, CostConfig, llm_cost, slm_or_router_cost, system_cost
from .harness import AggregateReport, RunConfig, aggregate, emit_report, load_dataset, run_eval, sweep
from .metrics import PredictionRecord, auroc, calibration_report, ece, pass_at_1
from .parser import ParsedResponse, RawResponse, extract_answer, extract_confidence, parse
from .rewards import RewardConfig, RolloutGroup, composite_reward, confidence_reward, score_group

__version__ = "0.1.0"

__all__ = [
    "AggregateReport", "BackendSpec", "CascadeDecision", "CascadeEngine", "CascadePolicy", "CostBreakdown",
    "CostConfig", "ParsedResponse", "PredictionRecord", "RawResponse", "RewardConfig", "RolloutGroup",
    "RunConfig", "ScriptedProfile", "aggregate", "auroc", "avg_prob_confidence", "build_prompt",
    "calibration_report", "composite_reward", "confidence_reward", "count_tokens_fallback", "decide", "ece",
    "emit_report", "extract_answer", "extract_confidence", "llm_cost", "load_dataset", "make_backend", "parse",
    "pass_at_1", "router_confidence", "run_eval", "score_group", "slm_or_router_cost", "sweep", "system_cost",
]
