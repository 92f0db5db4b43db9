"""Confidence-gated SLM -> LLM cascade.

The SLM answers first; if the confidence attached to its answer falls below
the threshold, the original question goes to the LLM instead. With an
external router the router is asked first and exactly one of SLM/LLM runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .backends import Backend, build_prompt
from .costs import DIRECT, ROUTED, CostBreakdown, CostConfig, TokenUsage, llm_cost, slm_or_router_cost, system_cost
from .parser import ParsedResponse, RawResponse, parse

VERBALIZED = "verbalized"
AVG_TOKEN_PROB = "avg_token_prob"
EXTERNAL_ROUTER = "external_router"
SOURCES = (VERBALIZED, AVG_TOKEN_PROB, EXTERNAL_ROUTER)
MAX_THRESHOLD = 1.1

_NUMBER = re.compile(r"(?<![\w.])\d*\.?\d+")


@dataclass(frozen=True)
class CascadePolicy:
    threshold: float = 0.69
    source: str = VERBALIZED
    llm_instruction: bool = True

    def __post_init__(self):
        check_threshold(self.threshold)
        if self.source not in SOURCES:
            raise ValueError(f"confidence source must be one of {SOURCES}")

    @property
    def mode(self) -> str:
        return ROUTED if self.source == EXTERNAL_ROUTER else DIRECT

    @property
    def missing_confidence_action(self) -> str:
        return "defer"

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "source": self.source, "llm_instruction": self.llm_instruction}

    @classmethod
    def from_dict(cls, data: Mapping) -> "CascadePolicy":
        return cls(**{k: data[k] for k in ("threshold", "source", "llm_instruction") if k in data})


@dataclass(frozen=True)
class StageOutput:
    raw: RawResponse
    parsed: Optional[ParsedResponse] = None
    probability: Optional[float] = None

    @property
    def usage(self) -> TokenUsage:
        return TokenUsage(self.raw.prompt_tokens, self.raw.completion_tokens)


@dataclass(frozen=True)
class CascadeDecision:
    question_id: str
    mode: str
    confidence_used: Optional[float]
    deferred: bool
    final_answer: Optional[str]
    costs: CostBreakdown
    slm: Optional[StageOutput] = None
    llm: Optional[StageOutput] = None
    router: Optional[StageOutput] = None
    repeat: int = 0

    @property
    def slm_parsed(self) -> Optional[ParsedResponse]:
        """SLM output the decision paid for (None in routed mode after deferral)."""
        if self.slm is None or (self.mode == ROUTED and self.deferred):
            return None
        return self.slm.parsed

    @property
    def llm_parsed(self) -> Optional[ParsedResponse]:
        return self.llm.parsed if (self.deferred and self.llm is not None) else None

    @property
    def answered_by(self) -> str:
        return "llm" if self.deferred else "slm"


class CascadeFault(RuntimeError):
    """A stage failed; whatever ran before it is kept for the log."""

    def __init__(self, stage: str, cause: BaseException, stages: Mapping[str, StageOutput],
                 deferred: Optional[bool] = None, confidence: Optional[float] = None):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.stages = dict(stages)
        self.deferred = deferred
        self.confidence = confidence


def check_threshold(threshold: float) -> None:
    if not 0.0 <= threshold <= MAX_THRESHOLD:
        raise ValueError(f"threshold {threshold!r} outside [0, {MAX_THRESHOLD}]")


def decide(confidence: Optional[float], threshold: float) -> bool:
    """Return True to defer. A missing confidence defers; a tie keeps."""
    check_threshold(threshold)
    return confidence is None or confidence < threshold


def avg_prob_confidence(token_probs: Sequence[float]) -> float:
    if not token_probs:
        raise ValueError("average token probability of an empty sequence")
    return sum(token_probs) / len(token_probs)


def parse_router_probability(text: str) -> float:
    """First number in [0, 1] appearing in the router's reply; 0.0 if none."""
    for match in _NUMBER.finditer(text or ""):
        value = float(match.group())
        if 0.0 <= value <= 1.0:
            return value
    return 0.0


def router_confidence(question: str, router: Backend, question_id: Optional[str] = None, repeat: int = 0) -> float:
    raw = router.complete(build_prompt(question, "router"), question_id=question_id, repeat=repeat)
    return parse_router_probability(raw.text)


def charged_costs(mode: str, deferred: Optional[bool], stages: Mapping[str, StageOutput], config: CostConfig) -> CostBreakdown:
    """Cost of the charged stages that actually completed.

    Used for faulted pipelines, where a stage the decision would pay for may
    be missing; a missing stage contributes nothing.
    """
    def usage(name):
        return stages[name].usage if name in stages else None

    slm, llm, router = usage("slm"), usage("llm"), usage("router")
    router_part = slm_or_router_cost(*router, config, router=True) if router and mode == ROUTED else 0.0
    if mode == DIRECT:
        slm_part = slm_or_router_cost(*slm, config) if slm else 0.0
        llm_part = llm_cost(*llm, config) if (deferred and llm) else 0.0
    else:
        slm_part = slm_or_router_cost(*slm, config) if (deferred is False and slm) else 0.0
        llm_part = llm_cost(*llm, config) if (deferred and llm) else 0.0
    return CostBreakdown(slm_part, llm_part, router_part)


class CascadeEngine:
    """Stateless per query; backends must tolerate concurrent calls."""

    def __init__(self, slm: Backend, llm: Backend, policy: CascadePolicy,
                 cost_config: CostConfig, router: Optional[Backend] = None,
                 check_language: bool = True):
        if policy.source == EXTERNAL_ROUTER and router is None:
            raise ValueError("external_router source needs a router backend")
        self.slm = slm
        self.llm = llm
        self.router = router
        self.policy = policy
        self.cost_config = cost_config
        self.check_language = check_language

    def _solve(self, backend: Backend, question: str, qid: str, repeat: int, instruction: bool = True) -> StageOutput:
        prompt = build_prompt(question, "solver") if instruction else question
        raw = backend.complete(prompt, question_id=qid, repeat=repeat)
        return StageOutput(raw, parse(raw, prompt=prompt, check_language=self.check_language))

    def _confidence(self, out: StageOutput) -> Optional[float]:
        if self.policy.source == VERBALIZED:
            return out.parsed.confidence
        probs = out.raw.token_probs
        return avg_prob_confidence(probs) if probs else None

    def answer(self, question_id: str, question: str, repeat: int = 0, record_both: bool = False,
               threshold: Optional[float] = None) -> CascadeDecision:
        """Run one query through the cascade.

        ``record_both`` also runs the stage the decision did not need, so the
        log supports offline threshold sweeps; that extra call is never charged.
        """
        t = self.policy.threshold if threshold is None else threshold
        check_threshold(t)
        stages: dict[str, StageOutput] = {}
        mode = self.policy.mode
        llm_instr = self.policy.llm_instruction

        def run(name, fn, deferred=None, confidence=None):
            try:
                stages[name] = fn()
            except Exception as exc:
                raise CascadeFault(name, exc, stages, deferred, confidence) from exc
            return stages[name]

        if mode == DIRECT:
            slm_out = run("slm", lambda: self._solve(self.slm, question, question_id, repeat))
            confidence = self._confidence(slm_out)
            deferred = decide(confidence, t)
            if deferred or record_both:
                run("llm", lambda: self._solve(self.llm, question, question_id, repeat, llm_instr), deferred, confidence)
        else:
            def ask_router():
                raw = self.router.complete(build_prompt(question, "router"), question_id=question_id, repeat=repeat)
                return StageOutput(raw, probability=parse_router_probability(raw.text))

            confidence = run("router", ask_router).probability
            deferred = decide(confidence, t)
            if not deferred or record_both:
                run("slm", lambda: self._solve(self.slm, question, question_id, repeat), deferred, confidence)
            if deferred or record_both:
                run("llm", lambda: self._solve(self.llm, question, question_id, repeat, llm_instr), deferred, confidence)

        costs = system_cost(
            deferred, mode, self.cost_config,
            slm=stages["slm"].usage if "slm" in stages else None,
            llm=stages["llm"].usage if "llm" in stages else None,
            router=stages["router"].usage if "router" in stages else None,
        )
        final = stages["llm"].parsed.answer if deferred else stages["slm"].parsed.answer
        return CascadeDecision(
            question_id=question_id,
            mode=mode,
            confidence_used=confidence,
            deferred=deferred,
            final_answer=final,
            costs=costs,
            slm=stages.get("slm"),
            llm=stages.get("llm"),
            router=stages.get("router"),
            repeat=repeat,
        )
