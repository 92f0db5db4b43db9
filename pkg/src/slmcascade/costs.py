"""Token cost accounting in SLM-input-token units.

Output tokens cost ``output_multiplier`` input tokens; a model's price
scales with its parameter count relative to the SLM.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

DIRECT = "direct"
ROUTED = "routed"
MODES = (DIRECT, ROUTED)


class AccountingError(ValueError):
    """A stage that was charged has no recorded token usage."""


class TokenUsage(NamedTuple):
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class CostConfig:
    output_multiplier: float = 4.0
    slm_params: float = 7.0
    llm_params: float = 32.0
    router_params: Optional[float] = None

    def __post_init__(self):
        if self.output_multiplier <= 0:
            raise ValueError("output_multiplier must be positive")
        for name in ("slm_params", "llm_params", "router_params"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def llm_ratio(self) -> float:
        return self.llm_params / self.slm_params

    @property
    def router_ratio(self) -> float:
        if self.router_params is None:
            return 1.0
        return self.router_params / self.slm_params

    def to_dict(self) -> dict:
        return {
            "output_multiplier": self.output_multiplier,
            "slm_params": self.slm_params,
            "llm_params": self.llm_params,
            "router_params": self.router_params,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CostConfig":
        return cls(**{k: data[k] for k in ("output_multiplier", "slm_params", "llm_params", "router_params") if k in data})


@dataclass(frozen=True)
class CostBreakdown:
    slm_cost: float = 0.0
    llm_cost: float = 0.0
    router_cost: float = 0.0

    @property
    def total(self) -> float:
        return self.slm_cost + self.llm_cost + self.router_cost

    def to_dict(self) -> dict:
        return {
            "slm_cost": self.slm_cost,
            "llm_cost": self.llm_cost,
            "router_cost": self.router_cost,
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CostBreakdown":
        return cls(data.get("slm_cost", 0.0), data.get("llm_cost", 0.0), data.get("router_cost", 0.0))


def _base(n_prompt: int, n_out: int, config: CostConfig) -> float:
    if n_prompt < 0 or n_out < 0:
        raise ValueError("token counts must be non-negative")
    return n_prompt + config.output_multiplier * n_out


def slm_or_router_cost(n_prompt: int, n_out: int, config: CostConfig, router: bool = False) -> float:
    cost = _base(n_prompt, n_out, config)
    return cost * config.router_ratio if router else cost


def llm_cost(n_prompt: int, n_out: int, config: CostConfig) -> float:
    return _base(n_prompt, n_out, config) * config.llm_ratio


def system_cost(
    deferred: bool,
    mode: str,
    config: CostConfig,
    slm: Optional[TokenUsage] = None,
    llm: Optional[TokenUsage] = None,
    router: Optional[TokenUsage] = None,
) -> CostBreakdown:
    """Charge the stages a decision actually pays for.

    direct: kept -> SLM; deferred -> SLM + LLM.
    routed: kept -> router + SLM; deferred -> router + LLM, the SLM is not charged.
    Usage passed for an uncharged stage is ignored.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")

    def need(name: str, usage: Optional[TokenUsage]) -> TokenUsage:
        if usage is None:
            raise AccountingError(f"{name} stage is charged but has no token usage")
        return usage

    if mode == DIRECT:
        s = need("slm", slm)
        slm_part = slm_or_router_cost(*s, config)
        llm_part = llm_cost(*need("llm", llm), config) if deferred else 0.0
        return CostBreakdown(slm_part, llm_part, 0.0)

    r = need("router", router)
    router_part = slm_or_router_cost(*r, config, router=True)
    if deferred:
        return CostBreakdown(0.0, llm_cost(*need("llm", llm), config), router_part)
    return CostBreakdown(slm_or_router_cost(*need("slm", slm), config), 0.0, router_part)


def relative_change(value: float, baseline: float) -> float:
    """Percent change of ``value`` against ``baseline``; -21.5 means 21.5% cheaper."""
    if baseline == 0:
        raise ZeroDivisionError("baseline cost is zero")
    return (value / baseline - 1.0) * 100.0
