"""Application configuration: JSON config file plus CLI overrides.

The API key is never part of the configuration; only the *name* of the
environment variable holding it is configurable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .chunker import DEFAULT_MAX_TOKENS
from .gateway import ModelConfig, RetryPolicy
from .ingest import DEFAULT_GLOB


class ConfigError(Exception):
    """Configuration file unreadable or values out of range."""


@dataclass
class AppConfig:
    repo_root: Path = Path(".")
    index_dir: Path = Path(".nbsearch_index")
    sync_interval_s: int = 900
    token_budget: int = DEFAULT_MAX_TOKENS
    k_default: int = 5
    glob: str = DEFAULT_GLOB
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.sync_interval_s < 1:
            raise ConfigError("sync_interval_s must be >= 1")
        if self.token_budget < 1:
            raise ConfigError("token_budget must be >= 1")
        if self.k_default < 1:
            raise ConfigError("k_default must be >= 1")


def load_config(path: str | Path | None = None, offline: bool = False) -> AppConfig:
    """Build an AppConfig from an optional JSON file; offline=True forces
    offline_mode regardless of the file."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")

    model_data = data.get("model", {})
    if not isinstance(model_data, dict):
        raise ConfigError("'model' must be a JSON object")
    retry_data = model_data.get("retry", {})
    if not isinstance(retry_data, dict):
        raise ConfigError("'model.retry' must be a JSON object")

    try:
        retry = RetryPolicy(
            max_attempts=int(retry_data.get("max_attempts", 3)),
            backoff_base_ms=int(retry_data.get("backoff_base_ms", 500)),
        )
        model = ModelConfig(
            embed_endpoint=model_data.get("embed_endpoint", ModelConfig.embed_endpoint),
            embed_model=model_data.get("embed_model", ModelConfig.embed_model),
            completion_endpoint=model_data.get("completion_endpoint", ModelConfig.completion_endpoint),
            completion_model=model_data.get("completion_model", ModelConfig.completion_model),
            completion_max_tokens=int(model_data.get("completion_max_tokens", ModelConfig.completion_max_tokens)),
            api_key_env=model_data.get("api_key_env", ModelConfig.api_key_env),
            retry=retry,
            offline_mode=bool(model_data.get("offline_mode", False)) or offline,
            offline_dim=int(model_data.get("offline_dim", ModelConfig.offline_dim)),
        )
        return AppConfig(
            repo_root=Path(data.get("repo_root", ".")),
            index_dir=Path(data.get("index_dir", ".nbsearch_index")),
            sync_interval_s=int(data.get("sync_interval_s", 900)),
            token_budget=int(data.get("token_budget", DEFAULT_MAX_TOKENS)),
            k_default=int(data.get("k_default", 5)),
            glob=data.get("glob", DEFAULT_GLOB),
            model=model,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
