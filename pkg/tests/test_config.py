import json

import pytest

from metatox.config import (
    ENV_EMBED_URL,
    ENV_LLM_KEY,
    ENV_LLM_URL,
    EmbeddingConfig,
    LlmGatewayConfig,
    RunConfig,
    build_embedder,
    build_gateway,
    build_provider,
    load_run_config,
)
from metatox.embedding import CachedEmbedder, HashTrigramEmbedder, RemoteEmbedder
from metatox.errors import ConfigError
from metatox.llm_gateway import (
    HttpProvider,
    MockProvider,
    PromptRole,
    RecordingProvider,
    ReplayProvider,
)
from metatox.query import PathStrategy

from conftest import FIXTURES


def write_config(tmp_path, document, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


class TestDefaults:
    def test_fresh_config_matches_dataclass_defaults(self):
        config = load_run_config()
        assert config == RunConfig()
        assert config.llm_gateway.provider == "http"
        assert config.embedding.provider == "trigram"
        assert config.kg_build.entity_threshold == 0.9
        assert config.query.map_floor == 0.55
        assert config.query.rank_floor == 0.35
        assert config.query.top_k == 10
        assert config.detect.mode == "metatox"
        assert config.detect.rag_k == 2
        assert config.seed == 0


class TestFileLayer:
    def test_sections_applied(self, tmp_path):
        path = write_config(tmp_path, {
            "llm_gateway": {"provider": "mock", "rules_file": "/abs/rules.json",
                            "max_retries": 0},
            "embedding": {"dim": 64},
            "kg_build": {"entity_threshold": 0.8},
            "query": {"strategy": "one-hop", "top_k": 3, "rank_filter": False},
            "detect": {"mode": "vanilla"},
            "seed": 7,
        })
        config = load_run_config(path)
        assert config.llm_gateway.provider == "mock"
        assert config.llm_gateway.max_retries == 0
        assert config.embedding.dim == 64
        assert config.kg_build.entity_threshold == 0.8
        assert config.query.strategy is PathStrategy.ONE_HOP
        assert config.query.top_k == 3
        assert config.query.rank_filter is False
        assert config.detect.mode == "vanilla"
        assert config.seed == 7

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        nested = tmp_path / "conf"
        nested.mkdir()
        path = write_config(nested, {
            "llm_gateway": {"provider": "mock", "rules_file": "rules.json"},
            "kg_build": {"checkpoint_dir": "ckpt"},
        })
        config = load_run_config(path)
        assert config.llm_gateway.rules_file == str((nested / "rules.json").resolve())
        assert config.kg_build.checkpoint_dir == str((nested / "ckpt").resolve())

    def test_absolute_paths_left_alone(self, tmp_path):
        path = write_config(tmp_path, {
            "llm_gateway": {"provider": "mock", "rules_file": "/somewhere/rules.json"},
        })
        assert load_run_config(path).llm_gateway.rules_file == "/somewhere/rules.json"

    def test_fixture_config_loads(self):
        config = load_run_config(FIXTURES / "build_config.json")
        assert config.llm_gateway.provider == "mock"
        assert config.llm_gateway.rules_file == str(FIXTURES / "build_rules.json")

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, {"not_a_section": {}})
        with pytest.raises(ConfigError) as exc_info:
            load_run_config(path)
        assert "not_a_section" in str(exc_info.value)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"query": {"floor": 0.5}})
        with pytest.raises(ConfigError) as exc_info:
            load_run_config(path)
        assert "floor" in str(exc_info.value)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "nope.json")

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{broken", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_non_object_section_rejected(self, tmp_path):
        path = write_config(tmp_path, {"query": [1, 2]})
        with pytest.raises(ConfigError):
            load_run_config(path)


class TestEnvLayer:
    def test_env_fills_urls_and_key(self):
        config = load_run_config(env={
            ENV_LLM_URL: "http://llm.internal/v1",
            ENV_LLM_KEY: "sk-secret",
            ENV_EMBED_URL: "http://embed.internal/v1",
        })
        assert config.llm_gateway.url == "http://llm.internal/v1"
        assert config.llm_gateway.api_key == "sk-secret"
        assert config.embedding.url == "http://embed.internal/v1"

    def test_env_overrides_file(self, tmp_path):
        path = write_config(tmp_path, {"llm_gateway": {"url": "http://from-file"}})
        config = load_run_config(path, env={ENV_LLM_URL: "http://from-env"})
        assert config.llm_gateway.url == "http://from-env"

    def test_empty_env_value_ignored(self, tmp_path):
        path = write_config(tmp_path, {"llm_gateway": {"url": "http://from-file"}})
        config = load_run_config(path, env={ENV_LLM_URL: ""})
        assert config.llm_gateway.url == "http://from-file"

    def test_unrelated_env_ignored(self):
        config = load_run_config(env={"PATH": "/usr/bin", "METATOX_BOGUS": "x"})
        assert config == RunConfig()


class TestOverrideLayer:
    def test_override_beats_env_and_file(self, tmp_path):
        path = write_config(tmp_path, {"llm_gateway": {"url": "http://from-file"}})
        config = load_run_config(
            path,
            env={ENV_LLM_URL: "http://from-env"},
            overrides={"llm_gateway.url": "http://from-flag"},
        )
        assert config.llm_gateway.url == "http://from-flag"

    def test_none_override_skipped(self, tmp_path):
        path = write_config(tmp_path, {"query": {"top_k": 4}})
        config = load_run_config(path, overrides={"query.top_k": None})
        assert config.query.top_k == 4

    def test_seed_override(self):
        assert load_run_config(overrides={"seed": 13}).seed == 13

    def test_frozen_query_section_replaced(self):
        config = load_run_config(overrides={"query.strategy": "one-hop",
                                            "query.rank_filter": "false"})
        assert config.query.strategy is PathStrategy.ONE_HOP
        assert config.query.rank_filter is False

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides={"nothing.here": 1})
        with pytest.raises(ConfigError):
            load_run_config(overrides={"query": 1})


class TestCoercion:
    def test_numeric_strings(self, tmp_path):
        path = write_config(tmp_path, {
            "kg_build": {"entity_threshold": "0.75", "parallelism": "3"},
        })
        config = load_run_config(path)
        assert config.kg_build.entity_threshold == 0.75
        assert config.kg_build.parallelism == 3

    def test_bool_strings(self):
        assert load_run_config(overrides={"query.rank_filter": "TRUE"}).query.rank_filter
        assert not load_run_config(overrides={"query.rank_filter": "false"}).query.rank_filter

    @pytest.mark.parametrize("value", ["yes", 1, 0.5])
    def test_bad_bool_rejected(self, value):
        with pytest.raises(ConfigError):
            load_run_config(overrides={"query.rank_filter": value})

    def test_lossy_float_to_int_rejected(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides={"query.top_k": 2.5})

    def test_exact_float_to_int_accepted(self):
        assert load_run_config(overrides={"query.top_k": 2.0}).query.top_k == 2

    def test_bool_not_an_int(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides={"query.top_k": True})

    def test_bad_strategy_rejected(self):
        with pytest.raises(ConfigError):
            load_run_config(overrides={"query.strategy": "scenic-route"})


class TestValidation:
    @pytest.mark.parametrize("overrides", [
        {"llm_gateway.provider": "banana"},
        {"embedding.provider": "banana"},
        {"detect.mode": "banana"},
        {"kg_build.entity_threshold": 0.0},
        {"kg_build.relation_threshold": 1.5},
        {"query.map_floor": -0.1},
        {"query.rank_floor": 1.1},
        {"query.top_k": 0},
        {"detect.rag_k": 0},
        {"kg_build.parallelism": 0},
        {"detect.parallelism": 0},
        {"embedding.dim": 0},
        {"llm_gateway.max_retries": -1},
        {"llm_gateway.backoff_s": -0.5},
        {"llm_gateway.max_in_flight": 0},
    ])
    def test_invalid_values_rejected(self, overrides):
        with pytest.raises(ConfigError):
            load_run_config(overrides=overrides)

    def test_boundary_values_accepted(self):
        config = load_run_config(overrides={
            "kg_build.entity_threshold": 1.0,
            "query.map_floor": 0.0,
            "query.rank_floor": 1.0,
            "llm_gateway.max_retries": 0,
            "llm_gateway.backoff_s": 0.0,
        })
        assert config.kg_build.entity_threshold == 1.0
        assert config.query.rank_floor == 1.0


class TestFactories:
    def test_http_provider_requires_url(self):
        with pytest.raises(ConfigError) as exc_info:
            build_provider(LlmGatewayConfig(provider="http"))
        assert ENV_LLM_URL in str(exc_info.value)

    def test_http_provider_built(self):
        provider = build_provider(LlmGatewayConfig(provider="http", url="http://x"))
        assert isinstance(provider, HttpProvider)

    def test_mock_provider_requires_rules(self):
        with pytest.raises(ConfigError):
            build_provider(LlmGatewayConfig(provider="mock"))

    def test_mock_provider_built_from_fixture(self):
        provider = build_provider(LlmGatewayConfig(
            provider="mock", rules_file=str(FIXTURES / "build_rules.json")))
        assert isinstance(provider, MockProvider)

    def test_replay_provider_requires_file(self):
        with pytest.raises(ConfigError):
            build_provider(LlmGatewayConfig(provider="replay"))

    def test_record_file_wraps_provider(self, tmp_path):
        provider = build_provider(LlmGatewayConfig(
            provider="mock", rules_file=str(FIXTURES / "build_rules.json"),
            record_file=str(tmp_path / "replay.json")))
        assert isinstance(provider, RecordingProvider)

    def test_replay_provider_built(self, tmp_path):
        replay_file = tmp_path / "replay.json"
        replay_file.write_text("[]", encoding="utf-8")
        provider = build_provider(LlmGatewayConfig(provider="replay",
                                                   replay_file=str(replay_file)))
        assert isinstance(provider, ReplayProvider)

    def test_build_gateway_wires_templates_and_params(self):
        gateway = build_gateway(LlmGatewayConfig(
            provider="mock", rules_file=str(FIXTURES / "build_rules.json"),
            max_retries=0))
        prompt = gateway.prompt(PromptRole.NER, {"text": "speech body"})
        assert "speech body" in prompt

    def test_trigram_embedder_built_with_dim(self):
        embedder = build_embedder(EmbeddingConfig(provider="trigram", dim=32))
        assert isinstance(embedder, HashTrigramEmbedder)
        assert embedder.dim == 32

    def test_remote_embedder_requires_url(self):
        with pytest.raises(ConfigError) as exc_info:
            build_embedder(EmbeddingConfig(provider="remote"))
        assert ENV_EMBED_URL in str(exc_info.value)

    def test_remote_embedder_built(self):
        embedder = build_embedder(EmbeddingConfig(provider="remote", url="http://e"))
        assert isinstance(embedder, RemoteEmbedder)

    def test_cache_file_wraps_embedder(self, tmp_path):
        embedder = build_embedder(EmbeddingConfig(
            provider="trigram", cache_file=str(tmp_path / "cache.ndjson")))
        assert isinstance(embedder, CachedEmbedder)
