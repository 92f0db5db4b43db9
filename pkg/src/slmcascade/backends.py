"""Completion backends: a remote chat-completions endpoint, a deterministic
scripted simulator, and replay of a recorded run log. Plus the two prompt
templates the cascade uses."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import time
from dataclasses import dataclass, fields
from typing import Any, Mapping, Optional, Protocol, Union

import httpx

from .parser import RawResponse
from .rewards import default_verifier

log = logging.getLogger(__name__)

SOLVER_INSTRUCTION = (
    "Please reason step by step, and put your final answer within \\boxed{}, "
    "then output the confidence (0.0-1.0) that your answer is correct within \\confidence{}."
)
ROUTER_TEMPLATE = (
    "Question: {question} Instruction: Estimate and output the probability (0.0-1.0) "
    "that a small language model (\u226410B) can answer the question correctly."
)

KINDS = ("remote", "scripted", "replay")
CONFIDENCE_RULES = ("perfectly-calibrated", "overconfident-constant", "noisy")
DEFAULT_API_KEY_ENV = "SLMCASCADE_API_KEY"

_FILLER = ("first", "we", "note", "that", "the", "terms", "combine", "so", "it", "follows", "then", "hence")


class BackendError(RuntimeError):
    retriable = False


class BackendTimeout(BackendError):
    retriable = True


class BackendStatusError(BackendError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"endpoint returned HTTP {status}: {body[:200]}")
        self.status = status
        self.retriable = status == 429 or status >= 500


class MissingUsageError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class ReplayMiss(BackendError):
    def __init__(self, key: tuple):
        super().__init__(f"no recorded response for (question_id, repeat_index, stage)={key!r}")
        self.key = key


def build_prompt(question: str, role: str = "solver") -> str:
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    if role == "solver":
        return f"{question} {SOLVER_INSTRUCTION}"
    if role == "router":
        return ROUTER_TEMPLATE.format(question=question)
    raise ValueError(f"unknown prompt role {role!r}")


def count_tokens_fallback(text: str) -> int:
    """Whitespace token count, for backends that report no usage."""
    return len((text or "").split())


@dataclass(frozen=True)
class ScriptedProfile:
    """Stand-in for a model with known per-question accuracy.

    ``accuracy`` is either one fraction for every question or a mapping from
    question id to fraction. The emitted confidence follows
    ``confidence_rule``: the true accuracy, a constant, or the accuracy plus
    gaussian noise of width ``sigma``.
    """

    accuracy: Union[float, Mapping[str, float]] = 0.5
    confidence_rule: str = "perfectly-calibrated"
    constant: float = 1.0
    sigma: float = 0.1
    answer_pool: tuple[str, ...] = ()
    confidence_output_rate: float = 1.0
    reasoning_tokens: tuple[int, int] = (150, 400)
    token_prob_mean: Optional[float] = None
    router: bool = False

    def __post_init__(self):
        if self.confidence_rule not in CONFIDENCE_RULES:
            raise ValueError(f"confidence_rule must be one of {CONFIDENCE_RULES}")
        values = self.accuracy.values() if isinstance(self.accuracy, Mapping) else [self.accuracy]
        if any(not 0.0 <= float(a) <= 1.0 for a in values):
            raise ValueError("accuracy must lie in [0, 1]")
        if not 0.0 <= self.confidence_output_rate <= 1.0:
            raise ValueError("confidence_output_rate must lie in [0, 1]")
        lo, hi = self.reasoning_tokens
        if lo < 0 or hi < lo:
            raise ValueError("reasoning_tokens must be an ordered non-negative pair")
        object.__setattr__(self, "answer_pool", tuple(self.answer_pool))
        object.__setattr__(self, "reasoning_tokens", (int(lo), int(hi)))

    def accuracy_for(self, question_id: Optional[str]) -> float:
        if isinstance(self.accuracy, Mapping):
            if question_id not in self.accuracy:
                raise BackendError(f"scripted profile has no accuracy for question {question_id!r}")
            return float(self.accuracy[question_id])
        return float(self.accuracy)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScriptedProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scripted profile keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "answer_pool" in kwargs:
            kwargs["answer_pool"] = tuple(kwargs["answer_pool"])
        if "reasoning_tokens" in kwargs:
            kwargs["reasoning_tokens"] = tuple(kwargs["reasoning_tokens"])
        return cls(**kwargs)


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    model_name: str = ""
    endpoint: Optional[str] = None
    temperature: float = 0.6
    max_tokens: int = 4096
    param_count: float = 7.0
    seed: int = 0
    script: Optional[Mapping[str, Any]] = None
    log_path: Optional[str] = None
    stage: Optional[str] = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0
    logprobs: bool = False
    max_connections: int = 16
    max_retries: int = 2
    usage_fallback: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"backend kind must be one of {KINDS}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.param_count <= 0:
            raise ValueError("param_count must be positive")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend needs an endpoint")
        if self.kind == "scripted" and not self.script:
            raise ValueError("scripted backend needs a script (fixtures or profile)")
        if self.kind == "replay" and not self.log_path:
            raise ValueError("replay backend needs a log_path")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BackendSpec":
        if any(k in data for k in ("api_key", "token", "credential", "authorization")):
            raise ValueError("credentials must come from the environment, not the config file")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown backend keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class Backend(Protocol):
    spec: BackendSpec

    def complete(self, prompt: str, question_id: Optional[str] = None, repeat: int = 0) -> RawResponse:
        ...


class RemoteBackend:
    """Chat-completions client. One shared pooled connection set, safe to
    call from several threads."""

    def __init__(self, spec: BackendSpec, client: Optional[httpx.Client] = None):
        self.spec = spec
        url = spec.endpoint.rstrip("/")
        self.url = url if url.endswith("/chat/completions") else url + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(spec.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(
            timeout=spec.timeout,
            limits=httpx.Limits(max_connections=spec.max_connections),
        )
        self._headers = headers

    def close(self) -> None:
        self._client.close()

    def request_body(self, prompt: str) -> dict:
        body = {
            "model": self.spec.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
        }
        if self.spec.logprobs:
            body["logprobs"] = True
        return body

    def _post(self, body: dict) -> dict:
        try:
            resp = self._client.post(self.url, json=body, headers=self._headers)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"timed out calling {self.url}") from exc
        except httpx.TransportError as exc:
            err = BackendError(f"transport failure calling {self.url}: {exc}")
            err.retriable = True
            raise err from exc
        if resp.status_code >= 400:
            raise BackendStatusError(resp.status_code, resp.text)
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponseError("endpoint returned non-JSON body") from exc

    def complete(self, prompt: str, question_id: Optional[str] = None, repeat: int = 0) -> RawResponse:
        body = self.request_body(prompt)
        attempt = 0
        while True:
            try:
                payload = self._post(body)
                break
            except BackendError as exc:
                if not exc.retriable or attempt >= self.spec.max_retries:
                    raise
                attempt += 1
                log.warning("retrying %s after %s (attempt %d)", self.url, exc, attempt)
                time.sleep(min(2.0 ** attempt * 0.1, 5.0))
        return self.parse_payload(payload, prompt)

    def parse_payload(self, payload: Mapping[str, Any], prompt: str = "") -> RawResponse:
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError("response lacks choices[0].message.content") from exc

        usage = payload.get("usage") or {}
        approximate = False
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            n_prompt, n_out = int(usage["prompt_tokens"]), int(usage["completion_tokens"])
        elif self.spec.usage_fallback:
            n_prompt, n_out = count_tokens_fallback(prompt), count_tokens_fallback(text)
            approximate = True
        else:
            raise MissingUsageError("response lacks usage.prompt_tokens / usage.completion_tokens")

        probs = None
        logprobs = choice.get("logprobs")
        content = logprobs.get("content") if isinstance(logprobs, Mapping) else None
        if content:
            probs = tuple(min(1.0, math.exp(float(tok["logprob"]))) for tok in content)
        return RawResponse(text, n_prompt, n_out, probs, approximate)


def _stable_seed(*parts: Any) -> int:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _fmt(x: float) -> str:
    return repr(float(x))


class ScriptedBackend:
    """Deterministic simulator: fixture table or a :class:`ScriptedProfile`.

    Every draw is seeded by (run seed, spec seed, model name, question,
    repeat), so the
    same call always returns the same bytes whatever the call order.
    """

    def __init__(self, spec: BackendSpec, gold: Optional[Mapping[str, str]] = None, run_seed: int = 0):
        self.spec = spec
        self.run_seed = run_seed
        script = dict(spec.script or {})
        self.fixtures: dict[str, Any] = dict(script.get("fixtures") or {})
        self.default_fixture = script.get("default")
        self.profile = ScriptedProfile.from_dict(script["profile"]) if "profile" in script else None
        self.gold = dict(gold or script.get("gold") or {})
        if self.profile is None and not self.fixtures and self.default_fixture is None:
            raise ValueError("scripted backend needs fixtures, a default fixture, or a profile")

    def complete(self, prompt: str, question_id: Optional[str] = None, repeat: int = 0) -> RawResponse:
        key = question_id if question_id is not None else hashlib.sha256(prompt.encode()).hexdigest()
        fixture = self.fixtures.get(key, self.default_fixture)
        if fixture is not None:
            return self._from_fixture(fixture, prompt)
        if self.profile is None:
            raise BackendError(f"no fixture for question {key!r}")
        rng = random.Random(_stable_seed(self.run_seed, self.spec.seed, self.spec.model_name, key, repeat))
        return self._from_profile(rng, prompt, question_id)

    @staticmethod
    def _from_fixture(fixture: Any, prompt: str) -> RawResponse:
        if isinstance(fixture, str):
            return RawResponse(fixture, count_tokens_fallback(prompt), count_tokens_fallback(fixture))
        data = dict(fixture)
        data.setdefault("prompt_tokens", count_tokens_fallback(prompt))
        data.setdefault("completion_tokens", count_tokens_fallback(data.get("text", "")))
        return RawResponse.from_dict(data)

    def _confidence(self, rng: random.Random, acc: float) -> float:
        rule = self.profile.confidence_rule
        if rule == "perfectly-calibrated":
            return acc
        if rule == "overconfident-constant":
            return self.profile.constant
        return round(min(1.0, max(0.0, rng.gauss(acc, self.profile.sigma))), 2)

    def _wrong_answer(self, rng: random.Random, gold: str) -> str:
        pool = [a for a in self.profile.answer_pool if not default_verifier(a, gold)]
        return rng.choice(pool) if pool else f"not {gold}"

    def _from_profile(self, rng: random.Random, prompt: str, question_id: Optional[str]) -> RawResponse:
        profile = self.profile
        acc = profile.accuracy_for(question_id)
        # draw order is part of the determinism contract; append new draws at the end
        u_correct = rng.random()
        conf = self._confidence(rng, acc)
        u_macro = rng.random()
        lo, hi = profile.reasoning_tokens
        n_words = rng.randint(lo, hi)

        if profile.router:
            text = f"The probability is {_fmt(conf)}"
        else:
            gold = self.gold.get(question_id) if question_id is not None else None
            if gold is None:
                raise BackendError(f"scripted profile has no gold answer for question {question_id!r}")
            answer = gold if u_correct < acc else self._wrong_answer(rng, gold)
            reasoning = " ".join(_FILLER[i % len(_FILLER)] for i in range(n_words))
            if u_macro < profile.confidence_output_rate:
                tail = f"\\confidence{{{_fmt(conf)}}}"
            else:
                tail = f"The confidence in this answer is {_fmt(conf)}."
            text = f"Let us reason step by step. {reasoning}\n\nThe final answer is \\boxed{{{answer}}}.\n\n{tail}"

        n_out = count_tokens_fallback(text)
        probs = None
        if profile.token_prob_mean is not None:
            m = profile.token_prob_mean
            probs = tuple(round(min(1.0, max(0.0, m + rng.uniform(-0.05, 0.05))), 4) for _ in range(n_out))
        return RawResponse(text, count_tokens_fallback(prompt), n_out, probs)


class ReplayBackend:
    """Serve the responses recorded in a run log for one stage."""

    def __init__(self, spec: BackendSpec, stage: Optional[str] = None):
        self.spec = spec
        self.stage = stage or spec.stage
        if self.stage not in ("slm", "llm", "router"):
            raise ValueError("replay backend needs stage slm, llm or router")
        self.table: dict[tuple[str, int], RawResponse] = {}
        with open(spec.log_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if "question_id" not in row:
                    continue
                rec = row.get(self.stage)
                if rec is not None:
                    self.table[(str(row["question_id"]), int(row["repeat_index"]))] = RawResponse.from_dict(rec)

    def complete(self, prompt: str, question_id: Optional[str] = None, repeat: int = 0) -> RawResponse:
        key = (str(question_id), int(repeat))
        if key not in self.table:
            raise ReplayMiss(key + (self.stage,))
        return self.table[key]


def make_backend(spec: BackendSpec, gold: Optional[Mapping[str, str]] = None, stage: Optional[str] = None) -> Backend:
    if spec.kind == "remote":
        return RemoteBackend(spec)
    if spec.kind == "scripted":
        return ScriptedBackend(spec, gold=gold)
    return ReplayBackend(spec, stage=stage)


def complete(spec: BackendSpec, prompt: str, question_id: Optional[str] = None, repeat: int = 0,
             gold: Optional[Mapping[str, str]] = None) -> RawResponse:
    """One-shot completion; builds a throwaway backend for ``spec``."""
    backend = make_backend(spec, gold=gold)
    try:
        return backend.complete(prompt, question_id=question_id, repeat=repeat)
    finally:
        if isinstance(backend, RemoteBackend):
            backend.close()
