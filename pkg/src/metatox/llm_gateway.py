"""Chat-completion gateway: prompt templates, providers, retries, option scoring.

All model traffic flows through :class:`LlmGateway`, which turns a rendered
prompt into a single-user-message chat request and hands it to a provider.
Providers implement one method, ``chat(request) -> response``, over the
common JSON chat-completion wire format, which keeps the HTTP, mock, replay,
and recording providers interchangeable.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .errors import (
    ConfigError,
    MissingBinding,
    OptionNotScorable,
    ProviderUnavailable,
    RateLimited,
    ResponseTruncated,
)

LOGGER = logging.getLogger(__name__)

NEG_INF = float("-inf")


class PromptRole(str, Enum):
    RATIONALE = "rationale"
    TRIPLET_EXTRACT = "triplet_extract"
    SELF_CHECK = "self_check"
    NER = "ner"
    CLASSIFY = "classify"


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt role: system text, few-shot exemplars, and a user slot.

    ``user_slot`` may contain ``{placeholders}`` resolved at render time.
    ``options`` is only populated for the classify role (answer label ->
    meaning). ``extras`` holds role-specific framing strings that callers
    assemble into bindings, so all prose stays in the template files.
    """

    name: PromptRole
    system_text: str
    exemplars: tuple[tuple[str, str], ...]
    user_slot: str
    options: tuple[tuple[str, str], ...] = ()
    extras: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class OptionScore:
    option: str
    logprob: float


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 512
    top_logprobs: int = 20


_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Render system text, numbered exemplars, then the bound user slot.

    Every ``{placeholder}`` in the user slot must have a binding; otherwise
    MissingBinding is raised. Substitution is single-pass, so braces inside
    bound values are left alone.
    """

    def _sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in bindings:
            raise MissingBinding(name)
        return bindings[name]

    parts = [template.system_text]
    for i, (example_input, example_output) in enumerate(template.exemplars, 1):
        parts.append(f"Example {i}:\n{example_input}\n{example_output}")
    parts.append(_PLACEHOLDER_RE.sub(_sub, template.user_slot))
    return "\n\n".join(parts)


def default_prompts_dir() -> Path:
    return Path(__file__).parent / "prompts"


_TEMPLATE_KEYS = {"system", "exemplars", "user", "options", "extras"}


def load_template(path: str | Path, role: PromptRole) -> PromptTemplate:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"prompt template {path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"prompt template {path}: expected a JSON object")
    unknown = set(data) - _TEMPLATE_KEYS
    if unknown:
        raise ConfigError(f"prompt template {path}: unknown keys {sorted(unknown)}")
    for key in ("system", "exemplars", "user"):
        if key not in data:
            raise ConfigError(f"prompt template {path}: missing key {key!r}")
    exemplars = tuple((ex["input"], ex["output"]) for ex in data["exemplars"])
    options = tuple((label, meaning) for label, meaning in data.get("options", {}).items())
    if role is PromptRole.CLASSIFY:
        if dict(options) != {"a": "toxic", "b": "non-toxic"}:
            raise ConfigError(
                f"prompt template {path}: classify template must declare exactly the"
                " answer options a (toxic) and b (non-toxic)"
            )
    elif options:
        raise ConfigError(f"prompt template {path}: only the classify template takes options")
    return PromptTemplate(
        name=role,
        system_text=data["system"],
        exemplars=exemplars,
        user_slot=data["user"],
        options=options,
        extras=dict(data.get("extras", {})),
    )


def load_templates(directory: str | Path | None = None) -> dict[PromptRole, PromptTemplate]:
    """Load all five role templates from a directory of ``<role>.json`` files."""
    directory = Path(directory) if directory is not None else default_prompts_dir()
    templates: dict[PromptRole, PromptTemplate] = {}
    for role in PromptRole:
        path = directory / f"{role.value}.json"
        if not path.exists():
            raise ConfigError(f"prompt template file missing: {path}")
        templates[role] = load_template(path, role)
    return templates


# Wire format ----------------------------------------------------------


def completion_request(model: str, prompt: str, params: GenerationParams) -> dict:
    return {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "logprobs": False,
    }


def scoring_request(model: str, prompt: str, params: GenerationParams) -> dict:
    return {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "max_tokens": 1,
        "logprobs": True,
        "top_logprobs": params.top_logprobs,
    }


def request_hash(request: dict) -> str:
    """sha256 over the canonical JSON encoding of a chat request."""
    canonical = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# Providers ------------------------------------------------------------


class ChatProvider(Protocol):
    def chat(self, request: dict) -> dict: ...


class HttpProvider:
    """JSON-over-HTTP chat-completion endpoint (single POST per call)."""

    def __init__(self, url: str, api_key: str | None = None, timeout: float = 60.0,
                 transport=None):
        self._url = url
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def chat(self, request: dict) -> dict:
        try:
            response = self._client.post(self._url, json=request, headers=self._headers)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"transport failure: {exc}", retryable=True)
        if response.status_code == 429:
            raise RateLimited()
        if response.status_code >= 500:
            raise ProviderUnavailable(
                f"provider returned HTTP {response.status_code}", retryable=True
            )
        if response.status_code != 200:
            raise ProviderUnavailable(f"provider returned HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderUnavailable(f"provider returned non-JSON body: {exc}") from exc


ECHO_TOKEN = "[ECHO]"


@dataclass(frozen=True)
class MockRule:
    """First rule whose ``contains`` string occurs in the prompt fires.

    ``response`` rules answer completion requests; ``scores`` rules answer
    scoring requests (option token -> logprob).
    """

    contains: str
    response: str | None = None
    scores: Mapping[str, float] | None = None

    def __post_init__(self):
        if (self.response is None) == (self.scores is None):
            raise ConfigError("mock rule needs exactly one of 'response' or 'scores'")


class MockProvider:
    """Deterministic offline provider driven by substring-triggered rules.

    The reply is a pure function of the request. A completion prompt
    containing ``[ECHO]xyz`` answers ``xyz`` (rest of that line). Otherwise
    rules are scanned in order, completion requests consulting only
    ``response`` rules and scoring requests only ``scores`` rules.
    """

    def __init__(self, rules: Sequence[MockRule] = (), default_response: str = "",
                 default_scores: Mapping[str, float] | None = None):
        self._rules = tuple(rules)
        self._default_response = default_response
        self._default_scores = dict(default_scores) if default_scores else None

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"mock rules {path}: invalid JSON ({exc})") from exc
        unknown = set(data) - {"rules", "default_response", "default_scores"}
        if unknown:
            raise ConfigError(f"mock rules {path}: unknown keys {sorted(unknown)}")
        rules = []
        for i, raw in enumerate(data.get("rules", [])):
            extra = set(raw) - {"contains", "response", "scores"}
            if extra or "contains" not in raw:
                raise ConfigError(f"mock rules {path}: bad rule at index {i}")
            rules.append(MockRule(raw["contains"], raw.get("response"), raw.get("scores")))
        return cls(rules, data.get("default_response", ""), data.get("default_scores"))

    def chat(self, request: dict) -> dict:
        prompt = "\n".join(message["content"] for message in request["messages"])
        if request.get("logprobs"):
            return self._score(prompt)
        return _completion_response(self._complete_text(prompt))

    def _complete_text(self, prompt: str) -> str:
        if ECHO_TOKEN in prompt:
            tail = prompt.split(ECHO_TOKEN, 1)[1]
            return tail.splitlines()[0] if tail else ""
        for rule in self._rules:
            if rule.response is not None and rule.contains in prompt:
                return rule.response
        return self._default_response

    def _score(self, prompt: str) -> dict:
        scores = None
        for rule in self._rules:
            if rule.scores is not None and rule.contains in prompt:
                scores = dict(rule.scores)
                break
        if scores is None:
            scores = self._default_scores
        if scores is None:
            # No scoring rule applies: answer without logprobs so the
            # gateway exercises its degraded fallback.
            return _completion_response(self._complete_text(prompt))
        best = max(sorted(scores), key=lambda option: scores[option])
        top = [{"token": option, "logprob": lp} for option, lp in sorted(scores.items())]
        return {
            "choices": [
                {
                    "message": {"content": best},
                    "finish_reason": "stop",
                    "logprobs": {
                        "content": [
                            {"token": best, "logprob": scores[best], "top_logprobs": top}
                        ]
                    },
                }
            ]
        }


def _completion_response(content: str) -> dict:
    return {"choices": [{"message": {"content": content}, "finish_reason": "stop"}]}


class ReplayProvider:
    """Replays responses recorded as a JSON list of {request_hash, response_body}."""

    def __init__(self, path: str | Path):
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        self._responses = {e["request_hash"]: e["response_body"] for e in entries}

    def chat(self, request: dict) -> dict:
        digest = request_hash(request)
        if digest not in self._responses:
            raise ProviderUnavailable(f"no recorded response for request hash {digest[:12]}")
        return copy.deepcopy(self._responses[digest])


class RecordingProvider:
    """Wraps another provider and appends every exchange to a replay fixture."""

    def __init__(self, inner: ChatProvider, path: str | Path):
        self._inner = inner
        self._path = Path(path)
        self._entries: list[dict] = []
        if self._path.exists():
            self._entries = json.loads(self._path.read_text(encoding="utf-8"))

    def chat(self, request: dict) -> dict:
        body = self._inner.chat(request)
        self._entries.append({"request_hash": request_hash(request), "response_body": body})
        self._path.write_text(
            json.dumps(self._entries, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return body


# Gateway --------------------------------------------------------------


class LlmGateway:
    """Single entry point for model calls, with retry and an in-flight cap."""

    def __init__(self, provider: ChatProvider,
                 templates: Mapping[PromptRole, PromptTemplate] | None = None, *,
                 model: str = "default", params: GenerationParams = GenerationParams(),
                 max_retries: int = 2, backoff_s: float = 0.5, max_in_flight: int = 4,
                 sleep: Callable[[float], None] = time.sleep):
        if max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        self._provider = provider
        self._templates = dict(templates) if templates is not None else load_templates()
        self._model = model
        self._params = params
        self._max_retries = max_retries
        self._backoff_s = backoff_s
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def template(self, role: PromptRole) -> PromptTemplate:
        return self._templates[role]

    def prompt(self, role: PromptRole, bindings: Mapping[str, str]) -> str:
        return render(self._templates[role], bindings)

    def _call(self, request: dict) -> dict:
        attempt = 0
        while True:
            try:
                with self._gate:
                    return self._provider.chat(request)
            except (ProviderUnavailable, RateLimited) as exc:
                if not exc.retryable or attempt >= self._max_retries:
                    raise
                delay = self._backoff_s * (2 ** attempt)
                LOGGER.warning("provider call failed (%s); retrying in %.2fs", exc, delay)
                self._sleep(delay)
                attempt += 1

    def complete(self, prompt: str, params: GenerationParams | None = None) -> str:
        request = completion_request(self._model, prompt, params or self._params)
        response = self._call(request)
        try:
            choice = response["choices"][0]
            content = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed provider response: {exc}") from exc
        if choice.get("finish_reason") == "length":
            raise ResponseTruncated("completion hit the max_tokens limit")
        return content

    def score_options(self, prompt: str, options: Sequence[str]) -> list[OptionScore]:
        """Next-token log-probability for each option label, order preserved.

        When the provider exposes no log-probabilities the call degrades to
        constrained one-token generation: the generated option scores 0.0 and
        every other option scores -inf.
        """
        if not options:
            raise OptionNotScorable("no options to score")
        if len(set(options)) != len(options):
            raise OptionNotScorable("options must be distinct")
        request = scoring_request(self._model, prompt, self._params)
        response = self._call(request)
        try:
            choice = response["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed provider response: {exc}") from exc

        table = self._logprob_table(choice)
        if table and any(option in table for option in options):
            return [OptionScore(o, table.get(o, NEG_INF)) for o in options]

        # Degraded mode: no usable logprobs, fall back to the generated token.
        content = str(choice.get("message", {}).get("content", "")).strip()
        token = content.split()[0].lower() if content.split() else ""
        chosen = next((o for o in options if o.lower() == token), None)
        if chosen is None:
            raise OptionNotScorable(
                f"provider returned no logprobs and generated {content!r}, which matches"
                " no option"
            )
        return [OptionScore(o, 0.0 if o == chosen else NEG_INF) for o in options]

    @staticmethod
    def _logprob_table(choice: dict) -> dict[str, float]:
        logprobs = choice.get("logprobs") or {}
        content = logprobs.get("content") or []
        if not content:
            return {}
        table: dict[str, float] = {}
        first = content[0]
        for entry in first.get("top_logprobs", []):
            table.setdefault(str(entry["token"]).strip(), float(entry["logprob"]))
        # The sampled token itself also carries a logprob.
        if "token" in first and "logprob" in first:
            table.setdefault(str(first["token"]).strip(), float(first["logprob"]))
        return table
