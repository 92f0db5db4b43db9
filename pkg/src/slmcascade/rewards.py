"""Composite reward for calibrated-confidence RL: correctness + format +
confidence term, scored per response or per rollout group.

A trainer calls :func:`score_group` once per question with the N sampled
responses and gets back one :class:`RewardBreakdown` per response.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .parser import ParsedResponse

Verifier = Callable[[str, str], bool]

GROUP_VARIANTS = ("L1", "L2", "KL")
SAMPLE_VARIANTS = ("sample_L1", "sample_L2", "sample_KL")
VARIANTS = GROUP_VARIANTS + SAMPLE_VARIANTS
VARIANT_ALIASES = {"brier": "sample_L2", "Brier": "sample_L2"}
KL_SIGNS = ("calibration_consistent", "as_printed")

_MATH_DELIMS = (("$$", "$$"), ("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"))
_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class RewardConfig:
    variant: str = "L1"
    epsilon: float = 0.01
    kl_sign: str = "calibration_consistent"
    missing_confidence_reward: float = -1.0

    def __post_init__(self):
        variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if variant not in VARIANTS:
            raise ValueError(f"unknown reward variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", variant)
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.kl_sign not in KL_SIGNS:
            raise ValueError(f"kl_sign must be one of {KL_SIGNS}")
        if not -1.0 <= self.missing_confidence_reward <= 0.0:
            raise ValueError("missing_confidence_reward must lie in [-1, 0]")

    @property
    def sample_level(self) -> bool:
        return self.variant in SAMPLE_VARIANTS

    @property
    def distance(self) -> str:
        return self.variant.removeprefix("sample_")


@dataclass(frozen=True)
class RolloutGroup:
    question: str
    gold_answer: str
    responses: tuple[ParsedResponse, ...]

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        if not self.responses:
            raise ValueError("a rollout group needs at least one response")

    @property
    def n(self) -> int:
        return len(self.responses)


@dataclass(frozen=True)
class RewardBreakdown:
    r_correct: float
    r_format: float
    r_confidence: float
    total: float

    def to_dict(self) -> dict:
        return {
            "r_correct": self.r_correct,
            "r_format": self.r_format,
            "r_confidence": self.r_confidence,
            "total": self.total,
        }


def _strip_delimiters(s: str) -> str:
    for left, right in _MATH_DELIMS:
        if len(s) >= len(left) + len(right) and s.startswith(left) and s.endswith(right):
            return s[len(left):len(s) - len(right)].strip()
    return s


def normalize_answer(s: str) -> str:
    return _strip_delimiters(s.strip()).casefold()


def default_verifier(answer: str, gold: str) -> bool:
    """Normalizing exact match: trim, drop one layer of math delimiters,
    case-fold; plain numbers compare by value."""
    a, g = normalize_answer(answer), normalize_answer(gold)
    if _NUMBER.fullmatch(a) and _NUMBER.fullmatch(g):
        return float(a) == float(g)
    return a == g


def correctness(answer: Optional[str], gold: str, verifier: Verifier = default_verifier) -> int:
    if not gold:
        raise ValueError("gold answer must be non-empty")
    if answer is None:
        return 0
    return int(bool(verifier(answer, gold)))


def format_reward(parsed: ParsedResponse) -> float:
    checks = (parsed.has_boxed, parsed.has_confidence_macro, parsed.language_consistent)
    return sum(checks) / len(checks)


def estimate_group_accuracy(group: RolloutGroup, verifier: Verifier = default_verifier) -> float:
    hits = sum(correctness(r.answer, group.gold_answer, verifier) for r in group.responses)
    return hits / group.n


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise ValueError(f"{name}={value!r} outside [0, 1]")


def confidence_reward(
    config: RewardConfig,
    p: Optional[float],
    y_c: Optional[float],
    correct: Optional[bool] = None,
) -> float:
    """Confidence term of the reward.

    Group-level variants compare ``y_c`` with the estimated accuracy ``p``;
    sample-level variants replace ``p`` by the 0/1 correctness of the response
    itself, so ``correct`` is required for them and ``p`` is ignored.
    """
    if config.sample_level:
        if correct is None:
            raise ValueError(f"{config.variant} needs the response's correctness")
        target = 1.0 if correct else 0.0
    else:
        if p is None:
            raise ValueError(f"{config.variant} needs the group accuracy p")
        target = float(p)
    _check_unit("p", target)
    if y_c is None:
        return config.missing_confidence_reward
    _check_unit("y_c", y_c)

    kind = config.distance
    if kind == "L1":
        return -abs(target - y_c)
    if kind == "L2":
        return -((target - y_c) ** 2)
    eps = config.epsilon
    log_eps = math.log(eps)
    printed = (
        target * math.log(max(y_c, eps)) / log_eps
        + (1.0 - target) * math.log(max(1.0 - y_c, eps)) / log_eps
    )
    return printed if config.kl_sign == "as_printed" else -printed


def composite_reward(
    parsed: ParsedResponse,
    p_hat: Optional[float],
    gold: str,
    config: RewardConfig,
    verifier: Verifier = default_verifier,
) -> RewardBreakdown:
    if p_hat is not None:
        _check_unit("p_hat", p_hat)
    r_correct = correctness(parsed.answer, gold, verifier)
    r_format = format_reward(parsed)
    r_conf = confidence_reward(config, p_hat, parsed.confidence, correct=bool(r_correct))
    return RewardBreakdown(float(r_correct), r_format, r_conf, r_correct + r_format + r_conf)


def score_group(
    group: RolloutGroup,
    config: RewardConfig,
    verifier: Verifier = default_verifier,
) -> list[RewardBreakdown]:
    """Score every response of one rollout group.

    Under group-level variants all responses share a single accuracy
    estimate, whatever their own correctness.
    """
    p_hat = None if config.sample_level else estimate_group_accuracy(group, verifier)
    return [composite_reward(r, p_hat, group.gold_answer, config, verifier) for r in group.responses]


def score_groups(
    groups: Sequence[RolloutGroup],
    config: RewardConfig,
    verifier: Verifier = default_verifier,
) -> list[list[RewardBreakdown]]:
    return [score_group(g, config, verifier) for g in groups]
