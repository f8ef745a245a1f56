"""Run configuration: sectioned settings with layered precedence.

Values are resolved lowest to highest: dataclass default, config file (JSON,
one object per section), environment variable, command-line flag. Unknown
sections or keys in a config file are hard errors. Relative paths inside a
config file resolve against the file's directory; paths given on the command
line resolve against the working directory as usual.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .detect import DetectionMode
from .embedding import CachedEmbedder, Embedder, HashTrigramEmbedder, RemoteEmbedder
from .errors import ConfigError
from .llm_gateway import (
    ChatProvider,
    GenerationParams,
    HttpProvider,
    LlmGateway,
    MockProvider,
    RecordingProvider,
    ReplayProvider,
    load_templates,
)
from .query import PathStrategy, QueryConfig

ENV_LLM_URL = "METATOX_LLM_URL"
ENV_LLM_KEY = "METATOX_LLM_KEY"
ENV_EMBED_URL = "METATOX_EMBED_URL"

_ENV_MAP = {
    ENV_LLM_URL: ("llm_gateway", "url"),
    ENV_LLM_KEY: ("llm_gateway", "api_key"),
    ENV_EMBED_URL: ("embedding", "url"),
}

LLM_PROVIDERS = ("http", "mock", "replay")
EMBED_PROVIDERS = ("trigram", "remote")


@dataclass
class LlmGatewayConfig:
    provider: str = "http"
    url: str | None = None
    api_key: str | None = None
    model: str = "default"
    rules_file: str | None = None
    replay_file: str | None = None
    record_file: str | None = None
    prompts_dir: str | None = None
    temperature: float = 0.0
    max_tokens: int = 512
    top_logprobs: int = 20
    max_retries: int = 2
    backoff_s: float = 0.5
    max_in_flight: int = 4
    timeout_s: float = 60.0


@dataclass
class EmbeddingConfig:
    provider: str = "trigram"
    url: str | None = None
    api_key: str | None = None
    model: str = "default"
    dim: int = 256
    cache_file: str | None = None
    timeout_s: float = 30.0


@dataclass
class KgBuildConfig:
    entity_threshold: float = 0.9
    relation_threshold: float = 0.9
    parallelism: int = 1
    checkpoint_dir: str | None = None
    label_map: str = "binary"


@dataclass
class DetectConfig:
    mode: str = DetectionMode.METATOX.value
    rag_k: int = 2
    parallelism: int = 1


@dataclass
class RunConfig:
    llm_gateway: LlmGatewayConfig = field(default_factory=LlmGatewayConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    kg_build: KgBuildConfig = field(default_factory=KgBuildConfig)
    query: QueryConfig = field(default_factory=QueryConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    seed: int = 0


# Fields holding filesystem paths; these are the ones rebased onto the config
# file's directory when given there as relative paths.
_PATH_FIELDS = {
    ("llm_gateway", "rules_file"),
    ("llm_gateway", "replay_file"),
    ("llm_gateway", "record_file"),
    ("llm_gateway", "prompts_dir"),
    ("embedding", "cache_file"),
    ("kg_build", "checkpoint_dir"),
}

_SECTION_TYPES: dict[str, type] = {
    "llm_gateway": LlmGatewayConfig,
    "embedding": EmbeddingConfig,
    "kg_build": KgBuildConfig,
    "query": QueryConfig,
    "detect": DetectConfig,
}


def _field_names(section_type: type) -> set[str]:
    return {f.name for f in fields(section_type)}


def _coerce(name: str, value: Any, target_type: Any) -> Any:
    """Best-effort conversion of a raw setting to its declared field type."""
    if value is None:
        return None
    try:
        if target_type is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise ValueError(value)
        if target_type is int:
            if isinstance(value, bool):
                raise ValueError(value)
            out = int(value)
            if isinstance(value, float) and out != value:
                raise ValueError(value)
            return out
        if target_type is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if target_type is PathStrategy:
            return PathStrategy(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config {name}: cannot interpret {value!r}") from exc


def _set_field(config: RunConfig, section: str, key: str, value: Any) -> None:
    target = getattr(config, section)
    declared = {f.name: f.type for f in fields(target)}
    if key not in declared:
        raise ConfigError(f"config: unknown key {key!r} in section {section!r}")
    type_name = declared[key]
    base: Any = str
    if type_name in ("int", int):
        base = int
    elif type_name in ("float", float):
        base = float
    elif type_name in ("bool", bool):
        base = bool
    elif type_name in ("PathStrategy", PathStrategy):
        base = PathStrategy
    coerced = _coerce(f"{section}.{key}", value, base)
    if dataclasses.is_dataclass(target) and getattr(type(target), "__dataclass_params__").frozen:
        setattr(config, section, dataclasses.replace(target, **{key: coerced}))
    else:
        setattr(target, key, coerced)


def load_run_config(path: str | Path | None = None, *,
                    env: Mapping[str, str] | None = None,
                    overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Assemble a RunConfig from defaults, file, environment, and overrides.

    ``overrides`` keys are dotted ``section.field`` names (or ``seed``); they
    model command-line flags and therefore win over everything else.
    """
    config = RunConfig()

    if path is not None:
        path = Path(path)
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
        if not isinstance(document, dict):
            raise ConfigError(f"config file {path}: top level must be an object")
        base_dir = path.resolve().parent
        for section, body in document.items():
            if section == "seed":
                config.seed = _coerce("seed", body, int)
                continue
            if section not in _SECTION_TYPES:
                raise ConfigError(f"config file {path}: unknown section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"config file {path}: section {section!r} must be an object")
            for key, value in body.items():
                _set_field(config, section, key, value)
                if (section, key) in _PATH_FIELDS and value is not None:
                    resolved = value if Path(value).is_absolute() else str(base_dir / value)
                    _set_field(config, section, key, resolved)

    if env is not None:
        for env_name, (section, key) in _ENV_MAP.items():
            value = env.get(env_name)
            if value:
                _set_field(config, section, key, value)

    if overrides:
        for dotted, value in overrides.items():
            if value is None:
                continue
            if dotted == "seed":
                config.seed = _coerce("seed", value, int)
                continue
            section, _, key = dotted.partition(".")
            if section not in _SECTION_TYPES or not key:
                raise ConfigError(f"config override: unknown setting {dotted!r}")
            _set_field(config, section, key, value)

    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    gw, emb, build, query, detect = (config.llm_gateway, config.embedding,
                                     config.kg_build, config.query, config.detect)
    if gw.provider not in LLM_PROVIDERS:
        raise ConfigError(f"llm_gateway.provider must be one of {LLM_PROVIDERS}")
    if emb.provider not in EMBED_PROVIDERS:
        raise ConfigError(f"embedding.provider must be one of {EMBED_PROVIDERS}")
    if detect.mode not in [m.value for m in DetectionMode]:
        raise ConfigError(f"detect.mode must be one of {[m.value for m in DetectionMode]}")
    for name, value in (("kg_build.entity_threshold", build.entity_threshold),
                        ("kg_build.relation_threshold", build.relation_threshold)):
        if not 0.0 < value <= 1.0:
            raise ConfigError(f"{name} must be in (0, 1]")
    for name, value in (("query.map_floor", query.map_floor),
                        ("query.rank_floor", query.rank_floor)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1]")
    for name, value in (("query.top_k", query.top_k), ("detect.rag_k", detect.rag_k),
                        ("kg_build.parallelism", build.parallelism),
                        ("detect.parallelism", detect.parallelism),
                        ("embedding.dim", emb.dim),
                        ("llm_gateway.max_in_flight", gw.max_in_flight),
                        ("llm_gateway.max_tokens", gw.max_tokens),
                        ("llm_gateway.top_logprobs", gw.top_logprobs)):
        if value < 1:
            raise ConfigError(f"{name} must be >= 1")
    if gw.max_retries < 0:
        raise ConfigError("llm_gateway.max_retries must be >= 0")
    if gw.backoff_s < 0:
        raise ConfigError("llm_gateway.backoff_s must be >= 0")


def build_provider(config: LlmGatewayConfig) -> ChatProvider:
    provider: ChatProvider
    if config.provider == "http":
        if not config.url:
            raise ConfigError("llm_gateway.url is required for the http provider"
                              f" (set it or the {ENV_LLM_URL} environment variable)")
        provider = HttpProvider(config.url, api_key=config.api_key, timeout=config.timeout_s)
    elif config.provider == "mock":
        if not config.rules_file:
            raise ConfigError("llm_gateway.rules_file is required for the mock provider")
        provider = MockProvider.from_file(config.rules_file)
    else:
        if not config.replay_file:
            raise ConfigError("llm_gateway.replay_file is required for the replay provider")
        provider = ReplayProvider(config.replay_file)
    if config.record_file:
        provider = RecordingProvider(provider, config.record_file)
    return provider


def build_gateway(config: LlmGatewayConfig) -> LlmGateway:
    return LlmGateway(
        build_provider(config),
        templates=load_templates(config.prompts_dir),
        model=config.model,
        params=GenerationParams(
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            top_logprobs=config.top_logprobs,
        ),
        max_retries=config.max_retries,
        backoff_s=config.backoff_s,
        max_in_flight=config.max_in_flight,
    )


def build_embedder(config: EmbeddingConfig) -> Embedder:
    embedder: Embedder
    if config.provider == "trigram":
        embedder = HashTrigramEmbedder(dim=config.dim)
    else:
        if not config.url:
            raise ConfigError("embedding.url is required for the remote provider"
                              f" (set it or the {ENV_EMBED_URL} environment variable)")
        embedder = RemoteEmbedder(config.url, model=config.model, api_key=config.api_key,
                                  timeout=config.timeout_s)
    if config.cache_file:
        embedder = CachedEmbedder(embedder, config.cache_file)
    return embedder
