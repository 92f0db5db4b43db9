"""Pull the boxed answer, the verbalized confidence and format signals out of
raw completion text."""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

BOXED = "\\boxed{"
CONFIDENCE = "\\confidence{"

_DECIMAL = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)")

# scripts folded together when comparing prompt and completion
_SCRIPT_ALIASES = {"HIRAGANA": "CJK", "KATAKANA": "CJK", "HANGUL": "CJK"}


@dataclass(frozen=True)
class RawResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    token_probs: Optional[tuple[float, ...]] = None
    usage_approximate: bool = False

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.token_probs is not None:
            probs = tuple(float(p) for p in self.token_probs)
            if any(not 0.0 <= p <= 1.0 for p in probs):
                raise ValueError("token probabilities must lie in [0, 1]")
            object.__setattr__(self, "token_probs", probs)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "token_probs": list(self.token_probs) if self.token_probs is not None else None,
            "usage_approximate": self.usage_approximate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RawResponse":
        probs = data.get("token_probs")
        return cls(
            text=data.get("text", ""),
            prompt_tokens=int(data.get("prompt_tokens", 0)),
            completion_tokens=int(data.get("completion_tokens", 0)),
            token_probs=tuple(probs) if probs is not None else None,
            usage_approximate=bool(data.get("usage_approximate", False)),
        )


@dataclass(frozen=True)
class ParsedResponse:
    reasoning: str
    answer: Optional[str] = None
    confidence: Optional[float] = None
    language_consistent: bool = False
    usage: RawResponse = field(default_factory=lambda: RawResponse(""))

    @property
    def has_boxed(self) -> bool:
        return self.answer is not None

    @property
    def has_confidence_macro(self) -> bool:
        return self.confidence is not None

    def summary(self) -> dict:
        return {
            "answer": self.answer,
            "confidence": self.confidence,
            "has_boxed": self.has_boxed,
            "has_confidence_macro": self.has_confidence_macro,
            "language_consistent": self.language_consistent,
        }


def _macro_body(text: str, macro: str) -> Optional[str]:
    """Content of the last ``macro`` occurrence, braces balanced; None if the
    macro is missing or its braces never close."""
    start = text.rfind(macro)
    if start < 0:
        return None
    i = start + len(macro)
    depth = 1
    for j in range(i, len(text)):
        ch = text[j]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[i:j]
    return None


def extract_answer(text: str) -> Optional[str]:
    r"""Return the body of the last ``\boxed{...}`` in ``text``.

    Nested braces are matched, so ``\boxed{\frac{25}{2}}`` gives
    ``\frac{25}{2}``. An unclosed final macro yields None.
    """
    return _macro_body(text or "", BOXED)


def extract_confidence(text: str) -> Optional[float]:
    r"""Parse the last ``\confidence{...}`` as a decimal clamped to [0, 1]."""
    body = _macro_body(text or "", CONFIDENCE)
    if body is None:
        return None
    body = body.strip()
    if not _DECIMAL.fullmatch(body):
        return None
    return min(1.0, max(0.0, float(body)))


def _script(ch: str) -> Optional[str]:
    try:
        name = unicodedata.name(ch)
    except ValueError:
        return None
    head = name.split(" ", 1)[0]
    return _SCRIPT_ALIASES.get(head, head)


def dominant_script(text: str) -> Optional[str]:
    counts = Counter(s for s in map(_script, (c for c in text if c.isalpha())) if s)
    if not counts:
        return None
    # ties broken alphabetically so the result is stable
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def check_language_consistency(prompt: str, completion: str, enabled: bool = True) -> bool:
    """True when the completion is written mostly in the prompt's script.

    A completion without any letters is never consistent. A prompt without
    letters imposes no constraint.
    """
    if not enabled:
        return True
    target = dominant_script(completion or "")
    if target is None:
        return False
    source = dominant_script(prompt or "")
    return source is None or source == target


def parse(raw: RawResponse, prompt: Optional[str] = None, check_language: bool = True) -> ParsedResponse:
    text = raw.text or ""
    if not check_language:
        consistent = True
    elif prompt is None:
        consistent = dominant_script(text) is not None
    else:
        consistent = check_language_consistency(prompt, text)
    return ParsedResponse(
        reasoning=text,
        answer=extract_answer(text),
        confidence=extract_confidence(text),
        language_consistent=consistent,
        usage=raw,
    )


def parse_text(text: str, prompt: Optional[str] = None, check_language: bool = True) -> ParsedResponse:
    return parse(RawResponse(text), prompt=prompt, check_language=check_language)

