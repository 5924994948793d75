"""Access to the embedding and completion providers, plus offline stand-ins.

Provider mode speaks a thin HTTP JSON protocol with bounded retry; offline
mode uses fully deterministic implementations (hashed bag-of-tokens embedding
and an extractive stub summary) so that tests and air-gapped runs are
reproducible bit for bit.
"""

from __future__ import annotations

import ast
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .chunker import count_tokens, tokens
from .hashing import fnv1a_64

logger = logging.getLogger(__name__)

SUMMARY_PROMPT_PREFIX = "Generate a summary for the following code: \n"
OFFLINE_MODEL_ID = "hashed-bow-v1"
DEFAULT_OFFLINE_DIM = 256
_REQUEST_TIMEOUT_S = 30.0


class ProviderError(Exception):
    """The provider kept failing (or replied with garbage) after all retries."""


class EmptyInput(Exception):
    """embed_batch was called with an empty list."""


class DimensionDrift(Exception):
    """The provider returned vectors of inconsistent dimension in one batch."""


class NoTokens(Exception):
    """Text normalizes to zero tokens and cannot be embedded."""


class OverCompletionBudget(Exception):
    """Code exceeds the completion model's input budget."""


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 500


@dataclass
class ModelConfig:
    embed_endpoint: str = "https://api.openai.com/v1/embeddings"
    embed_model: str = "text-embedding-ada-002"
    completion_endpoint: str = "https://api.openai.com/v1/chat/completions"
    completion_model: str = "gpt-4-32k"
    completion_max_tokens: int = 32000
    api_key_env: str = "OPENAI_API_KEY"
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    offline_mode: bool = False
    offline_dim: int = DEFAULT_OFFLINE_DIM

    def __post_init__(self):
        if self.completion_max_tokens < 1:
            raise ValueError("completion_max_tokens must be >= 1")


@dataclass
class EmbeddingVector:
    values: np.ndarray
    dim: int
    model_id: str


def _normalize(values, model_id: str) -> EmbeddingVector:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ProviderError("embedding is not a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ProviderError("embedding contains non-finite values")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ProviderError("embedding has zero norm")
    return EmbeddingVector(values=arr / norm, dim=arr.size, model_id=model_id)


def deterministic_embed(text: str, dim: int = DEFAULT_OFFLINE_DIM) -> EmbeddingVector:
    """Hashed bag-of-tokens embedding: deterministic, unit-norm, offline.

    Each lowercased heuristic-v1 token t contributes weight +/-1 at bucket
    FNV-1a-64(t) mod dim, signed by the hash's top bit; the result is
    L2-normalized. Fully pinned down so independent reimplementations agree
    component-wise.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    acc = np.zeros(dim, dtype=np.float64)
    toks = tokens(text)
    if not toks:
        raise NoTokens("text has no tokens to embed")
    for token in toks:
        h = fnv1a_64(token.lower().encode("utf-8"))
        sign = 1.0 if h < (1 << 63) else -1.0
        acc[h % dim] += sign
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        # Opposite-signed tokens can cancel exactly; fall back to a basis
        # vector keyed by the whole text so the result stays deterministic.
        acc[fnv1a_64(text.lower().encode("utf-8")) % dim] = 1.0
        norm = 1.0
    return EmbeddingVector(values=acc / norm, dim=dim, model_id=OFFLINE_MODEL_ID)


def _offline_summary(code: str) -> str:
    """Extractive stub: 'summary:' plus the first 32 def/class names in source order."""
    names: list[str] = []
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError):
        tree = None
    if tree is not None:
        stack = list(reversed(tree.body))
        while stack:
            node = stack.pop()
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                names.append(node.name)
            stack.extend(reversed(list(ast.iter_child_nodes(node))))
    names = names[:32]
    return "summary:" + ("" if not names else " " + " ".join(names))


class ModelGateway:
    """Shared, thread-safe access point for embeddings and code summaries."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()

    # -- embeddings ---------------------------------------------------------

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        """Embed texts, one unit-norm vector per input, order preserved."""
        if not texts:
            raise EmptyInput("embed_batch requires at least one text")
        if self.config.offline_mode:
            return [deterministic_embed(t, self.config.offline_dim) for t in texts]
        payload = {"model": self.config.embed_model, "input": list(texts)}
        body = self._post_with_retry(self.config.embed_endpoint, payload)
        try:
            data = sorted(body["data"], key=lambda item: item["index"])
            raw = [item["embedding"] for item in data]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from exc
        if len(raw) != len(texts):
            raise ProviderError(f"expected {len(texts)} embeddings, got {len(raw)}")
        dims = {len(v) for v in raw}
        if len(dims) > 1:
            raise DimensionDrift(f"inconsistent dimensions in one batch: {sorted(dims)}")
        return [_normalize(v, self.config.embed_model) for v in raw]

    # -- summaries ----------------------------------------------------------

    def summarize_code(self, code: str) -> str:
        """Summarize code via the completion provider (or the offline stub)."""
        if count_tokens(code) > self.config.completion_max_tokens:
            raise OverCompletionBudget(
                f"code exceeds completion budget of {self.config.completion_max_tokens} tokens"
            )
        if self.config.offline_mode:
            return _offline_summary(code)
        payload = {
            "model": self.config.completion_model,
            "messages": [{"role": "user", "content": SUMMARY_PROMPT_PREFIX + code}],
        }
        body = self._post_with_retry(self.config.completion_endpoint, payload)
        try:
            reply = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed completion response: {exc}") from exc
        reply = str(reply).strip()
        if not reply:
            raise ProviderError("provider returned an empty summary")
        return reply

    # -- wire plumbing ------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_with_retry(self, endpoint: str, payload: dict) -> dict:
        retry = self.config.retry
        last_error = None
        for attempt in range(1, retry.max_attempts + 1):
            try:
                resp = requests.post(
                    endpoint, json=payload, headers=self._headers(), timeout=_REQUEST_TIMEOUT_S
                )
                if resp.status_code == 200:
                    return resp.json()
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
            except (requests.RequestException, ValueError) as exc:
                last_error = str(exc)
            if attempt < retry.max_attempts:
                delay = retry.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0
                logger.warning(
                    "provider call failed (attempt %d/%d): %s", attempt, retry.max_attempts, last_error
                )
                time.sleep(delay)
        raise ProviderError(f"provider failed after {retry.max_attempts} attempts: {last_error}")
