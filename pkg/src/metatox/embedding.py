"""Text embeddings, cosine similarity, and an exact nearest-neighbor scan.

Every embedder in this module returns unit-normalized float64 vectors, so
cosine similarity reduces to a dot product. The hash-trigram embedder is the
deterministic offline default; all stored fixtures depend on its exact
scheme, so do not change the hash or the bucket count without regenerating
them.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .errors import DimensionMismatch, EmptyIndex, EmptyText, ProviderUnavailable

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a64(data: bytes, seed: int) -> int:
    """64-bit FNV-1a: xor each byte into the state, multiply by the prime."""
    state = seed
    for byte in data:
        state = ((state ^ byte) * _FNV_PRIME) & _MASK64
    return state


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise EmptyText("cannot normalize an all-zero vector")
    return vector / norm


class Embedder(Protocol):
    provider_id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashTrigramEmbedder:
    """Deterministic character-trigram embedder.

    Scheme: lowercase the text, take every contiguous 3-character substring
    (the whole string when shorter than 3), hash each gram's UTF-8 bytes with
    64-bit FNV-1a seeded at 0xcbf29ce484222325, count grams per bucket
    (hash mod dim, dim = 256 by default), then L2-normalize the counts.
    """

    def __init__(self, dim: int = 256, seed: int = _FNV_OFFSET):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.provider_id = f"trigram-fnv1a64-d{dim}-s{seed:x}"

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyText("cannot embed text that is empty after trimming")
        low = text.lower()
        if len(low) >= 3:
            grams = [low[i : i + 3] for i in range(len(low) - 2)]
        else:
            grams = [low]
        counts = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            counts[_fnv1a64(gram.encode("utf-8"), self.seed) % self.dim] += 1.0
        return _unit(counts)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped into [-1, 1]."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector shapes differ: {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


class NearestNeighborIndex:
    """Exact cosine top-k over unit vectors; ties broken by ascending id."""

    def __init__(self, items: Iterable[tuple[str, np.ndarray]]):
        self._ids: list[str] = []
        vectors: list[np.ndarray] = []
        dim: int | None = None
        for item_id, vector in items:
            if dim is None:
                dim = vector.shape[0]
            elif vector.shape[0] != dim:
                raise DimensionMismatch(
                    f"index item {item_id!r} has dim {vector.shape[0]}, expected {dim}"
                )
            self._ids.append(item_id)
            vectors.append(np.asarray(vector, dtype=np.float64))
        self._matrix = np.vstack(vectors) if vectors else np.zeros((0, 0))

    def __len__(self) -> int:
        return len(self._ids)

    def query(self, vector: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top ``min(k, n)`` items by similarity, descending, ties by id."""
        if len(self) == 0:
            raise EmptyIndex("cannot query an empty index")
        if k < 1:
            raise ValueError("k must be >= 1")
        if vector.shape[0] != self._matrix.shape[1]:
            raise DimensionMismatch(
                f"query dim {vector.shape[0]} does not match index dim {self._matrix.shape[1]}"
            )
        # Row-wise pairwise summation instead of a BLAS matvec: BLAS kernels
        # can round identical rows differently depending on their position,
        # which would break the documented tie handling.
        sims = (self._matrix * np.asarray(vector, dtype=np.float64)).sum(axis=1)
        order = sorted(range(len(self._ids)), key=lambda i: (-sims[i], self._ids[i]))
        return [
            (self._ids[i], float(np.clip(sims[i], -1.0, 1.0))) for i in order[:k]
        ]


def nn_index(items: Iterable[tuple[str, np.ndarray]]) -> NearestNeighborIndex:
    return NearestNeighborIndex(items)


class RemoteEmbedder:
    """HTTP embedding endpoint speaking the common JSON embeddings protocol.

    Request: ``{"model": ..., "input": <text>}``. Response:
    ``{"data": [{"embedding": [...]}]}``. Returned vectors are re-normalized.
    """

    def __init__(self, url: str, model: str = "default", api_key: str | None = None,
                 timeout: float = 30.0, transport=None):
        import httpx

        self._url = url
        self._model = model
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(transport=transport, timeout=timeout)
        self.dim = 0  # discovered on first call
        self.provider_id = f"remote-{model}"

    def embed(self, text: str) -> np.ndarray:
        import httpx

        if not text.strip():
            raise EmptyText("cannot embed text that is empty after trimming")
        try:
            response = self._client.post(
                self._url, json={"model": self._model, "input": text}, headers=self._headers
            )
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"embedding transport failure: {exc}", retryable=True)
        if response.status_code != 200:
            raise ProviderUnavailable(
                f"embedding endpoint returned {response.status_code}",
                retryable=response.status_code >= 500,
            )
        try:
            values = response.json()["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderUnavailable(f"malformed embedding response: {exc}") from exc
        vector = np.asarray(values, dtype=np.float64)
        if self.dim == 0:
            self.dim = vector.shape[0]
        elif vector.shape[0] != self.dim:
            raise DimensionMismatch(
                f"embedding dim changed from {self.dim} to {vector.shape[0]}"
            )
        return _unit(vector)


class CachedEmbedder:
    """Write-through NDJSON cache keyed by (provider_id, sha256 of text)."""

    def __init__(self, inner: Embedder, path: str | Path):
        self._inner = inner
        self._path = Path(path)
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        if self._path.exists():
            with open(self._path, encoding="utf-8") as handle:
                for line in handle:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    key = (record["provider"], record["key"])
                    self._cache[key] = np.asarray(record["vector"], dtype=np.float64)

    @property
    def provider_id(self) -> str:
        return self._inner.provider_id

    @property
    def dim(self) -> int:
        return self._inner.dim

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        key = (self._inner.provider_id, digest)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        vector = self._inner.embed(text)
        self._cache[key] = vector
        record = {"key": digest, "provider": self._inner.provider_id, "vector": vector.tolist()}
        with open(self._path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
        return vector
