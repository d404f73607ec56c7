"""Token embedding providers behind one contract.

The built-in deterministic provider hashes character trigrams into a fixed
number of buckets and L2-normalizes, which gives shared-substring tokens a
higher cosine without any model download. The remote provider speaks the
embedding wire protocol (``POST /embed`` / ``GET /health``) and caches
responses per sentence.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
import uuid
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

_DETACHED = {".", ",", "?", "!", ";", ":", "(", ")", '"', "'"}


def tokenize(text: str, lower: bool = True) -> list[str]:
    """Whitespace tokenization with boundary punctuation and ``'s`` split off.

    Inner periods survive (``3.5`` stays one token); template and SPLASH
    style feedback is already near-whitespace-tokenized.
    """
    if lower:
        text = text.lower()
    tokens: list[str] = []
    for chunk in text.split():
        tokens.extend(_split_chunk(chunk))
    return tokens


def _split_chunk(chunk: str) -> list[str]:
    leading: list[str] = []
    trailing: list[str] = []
    while len(chunk) > 1 and chunk[0] in _DETACHED and chunk != "'s":
        leading.append(chunk[0])
        chunk = chunk[1:]
    while len(chunk) > 1 and chunk[-1] in _DETACHED and not chunk.endswith("'s"):
        trailing.append(chunk[-1])
        chunk = chunk[:-1]
    parts = [chunk]
    if len(chunk) > 2 and chunk.endswith("'s"):
        parts = [chunk[:-2], "'s"]
    return leading + parts + list(reversed(trailing))


class EmbeddingError(RuntimeError):
    pass


class TransportError(EmbeddingError):
    """Remote provider unreachable after the configured retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class ProtocolError(EmbeddingError):
    """Remote response violating the embedding wire protocol."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Per-token vectors for one sentence: row n embeds token n."""

    tokens: tuple[str, ...]
    vectors: np.ndarray  # (N, dim)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise ValueError("one vector row per token required")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embedding vectors must be finite")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass(frozen=True)
class HealthReport:
    kind: str
    dim: Optional[int]
    reachable: bool
    detail: str = ""


class DeterministicProvider:
    """Context-free hashed-trigram embeddings; pure function of the token."""

    kind = "deterministic"

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.provider_id = f"deterministic-{dim}"
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        if not token:
            raise ValueError("cannot embed an empty token")
        padded = f"^{token}$"
        vector = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(padded) - 2):
            trigram = padded[i:i + 3]
            bucket = zlib.crc32(trigram.encode("utf-8")) % self.dim
            vector[bucket] += 1.0
        vector /= np.linalg.norm(vector)
        self._token_cache[token] = vector
        return vector

    def embed(self, tokens: Sequence[str]) -> EmbeddingMatrix:
        if not tokens:
            raise ValueError("cannot embed an empty token sequence")
        rows = np.stack([self._token_vector(t) for t in tokens])
        return EmbeddingMatrix(tuple(tokens), rows)

    def embed_batch(self, sentences: Iterable[Sequence[str]]) -> list[EmbeddingMatrix]:
        return [self.embed(tokens) for tokens in sentences]

    def healthcheck(self) -> HealthReport:
        return HealthReport(self.kind, self.dim, True)


class RemoteProvider:
    """Client for an embedding sidecar speaking the wire protocol.

    Responses are cached by sentence so re-scoring the same reference does
    not re-embed it; an optional on-disk spill persists the cache.
    """

    kind = "remote"

    def __init__(self, endpoint: str, timeout_ms: int = 5000, retries: int = 2,
                 cache_path: Optional[str | Path] = None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout_ms / 1000.0
        self.retries = retries
        self.provider_id = f"remote-{self.endpoint}"
        self._dim: Optional[int] = None
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self._cache_path = Path(cache_path) if cache_path else None
        if self._cache_path and self._cache_path.exists():
            payload = json.loads(self._cache_path.read_text(encoding="utf-8"))
            self._dim = payload.get("dim")
            for key, rows in payload.get("sentences", {}).items():
                self._cache[key] = np.asarray(rows, dtype=np.float64)

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    @staticmethod
    def _key(tokens: Sequence[str]) -> str:
        return "\x1f".join(tokens)

    def embed(self, tokens: Sequence[str]) -> EmbeddingMatrix:
        return self.embed_batch([tokens])[0]

    def embed_batch(self, sentences: Sequence[Sequence[str]]) -> list[EmbeddingMatrix]:
        sentences = [list(s) for s in sentences]
        for tokens in sentences:
            if not tokens:
                raise ValueError("cannot embed an empty token sequence")
        missing: list[list[str]] = []
        with self._lock:
            for tokens in sentences:
                if self._key(tokens) not in self._cache:
                    missing.append(tokens)
        if missing:
            fetched = self._request_embeddings(missing)
            with self._lock:
                for tokens, rows in zip(missing, fetched):
                    self._cache[self._key(tokens)] = rows
        results = []
        with self._lock:
            for tokens in sentences:
                rows = self._cache[self._key(tokens)]
                results.append(EmbeddingMatrix(tuple(tokens), rows))
        return results

    def _request_embeddings(self, sentences: list[list[str]]) -> list[np.ndarray]:
        request_id = str(uuid.uuid4())
        body = json.dumps({"id": request_id, "sentences": sentences}).encode("utf-8")
        last_error: Optional[Exception] = None
        for _ in range(self.retries + 1):
            try:
                request = urllib.request.Request(
                    f"{self.endpoint}/embed", data=body,
                    headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    payload = json.loads(response.read().decode("utf-8"))
                return self._parse_response(payload, sentences)
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                last_error = exc
        raise TransportError(f"embedding service unreachable: {last_error}",
                             self.retries + 1)

    def _parse_response(self, payload: dict, sentences: list[list[str]]
                        ) -> list[np.ndarray]:
        try:
            dim = int(payload["dim"])
            vectors = payload["vectors"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed embed response: {exc}") from exc
        if self._dim is None:
            self._dim = dim
        elif dim != self._dim:
            raise ProtocolError(
                f"dimension changed between responses: {self._dim} -> {dim}")
        if len(vectors) != len(sentences):
            raise ProtocolError(
                f"expected {len(sentences)} sentences, got {len(vectors)}")
        results = []
        for tokens, sentence_rows in zip(sentences, vectors):
            rows = np.asarray(sentence_rows, dtype=np.float64)
            if rows.ndim != 2 or rows.shape != (len(tokens), dim):
                raise ProtocolError(
                    f"expected shape {(len(tokens), dim)}, got {rows.shape}")
            if not np.isfinite(rows).all():
                raise ProtocolError("non-finite vector entries in response")
            results.append(rows)
        return results

    def flush_cache(self) -> None:
        if self._cache_path is None:
            return
        with self._lock:
            payload = {
                "dim": self._dim,
                "sentences": {k: v.tolist() for k, v in self._cache.items()},
            }
        self._cache_path.parent.mkdir(parents=True, exist_ok=True)
        self._cache_path.write_text(json.dumps(payload), encoding="utf-8")

    def healthcheck(self) -> HealthReport:
        try:
            with urllib.request.urlopen(f"{self.endpoint}/health",
                                        timeout=self.timeout) as response:
                payload = json.loads(response.read().decode("utf-8"))
            status = payload.get("status")
            dim = payload.get("dim")
            if status == "ok":
                if self._dim is None and isinstance(dim, int):
                    self._dim = dim
                return HealthReport(self.kind, dim, True)
            return HealthReport(self.kind, dim, False, f"status={status}")
        except (urllib.error.URLError, TimeoutError, ConnectionError,
                OSError, json.JSONDecodeError) as exc:
            return HealthReport(self.kind, self._dim, False, str(exc))


def healthcheck(provider) -> HealthReport:
    """Status report for any provider (errors folded into the report)."""
    return provider.healthcheck()


def make_provider(kind: str, endpoint: Optional[str] = None, dim: int = 64,
                  timeout_ms: int = 5000, retries: int = 2,
                  cache_path: Optional[str] = None):
    if kind == "deterministic":
        return DeterministicProvider(dim=dim)
    if kind == "remote":
        if not endpoint:
            raise ValueError("remote provider requires an endpoint")
        return RemoteProvider(endpoint, timeout_ms=timeout_ms, retries=retries,
                              cache_path=cache_path)
    raise ValueError(f"unknown provider kind '{kind}'")
