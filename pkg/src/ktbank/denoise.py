"""Sequence serialization, token denoising, and embedding providers.

The denoising filter keeps only alphabetic tokens of length >= 2, which
strips numeric noise (scores, ids, difficulty decimals) before any text
reaches an embedding model or the sparse index.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, ProviderUnavailable
from .types import EmbeddingVector, StudentSequence

# Maximal runs of letters/digits; splits at whitespace, punctuation and '_'.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def denoise(text: str) -> list[str]:
    """Lowercased alphabetic tokens of length >= 2, in original order."""
    return [t.lower() for t in _TOKEN_RE.findall(text) if len(t) >= 2 and t.isalpha()]


def serialize_sequence(seq: StudentSequence) -> str:
    """Deterministic one-line-per-interaction rendering of a sequence.

    Difficulty is rounded to two decimals so that minor fluctuations never
    change the text (denoising then drops the digits entirely).
    """
    lines = []
    for it in seq.interactions:
        parts = [f"Q: {it.exercise_text}"]
        if it.concept_tags:
            parts.append("concepts: " + "; ".join(it.concept_tags))
        parts.append(f"difficulty: {it.difficulty:.2f}")
        parts.append("result: " + ("correct" if it.correct else "incorrect"))
        lines.append(" | ".join(parts))
    return "\n".join(lines)


class EmbeddingProvider(ABC):
    """Maps texts to unit vectors of a fixed dimension."""

    name: str
    dimension: int

    @abstractmethod
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Return one unit vector per input text, in input order."""


class HashedEmbeddingProvider(EmbeddingProvider):
    """Deterministic offline provider: signed hashed bag-of-tokens.

    Each whitespace token is hashed to one of `dimension` buckets with a
    +/-1 sign from a second hash byte; the accumulated vector is
    L2-normalized. Gives cosine-similarity semantics with zero
    dependencies, stable across processes.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension
        self.name = f"hashed-{dimension}"

    def _accumulate(self, text: str) -> np.ndarray:
        acc = np.zeros(self.dimension, dtype=np.float64)
        for token in text.split():
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9).digest()
            bucket = int.from_bytes(digest[:8], "big") % self.dimension
            sign = 1.0 if digest[8] % 2 == 0 else -1.0
            acc[bucket] += sign
        if not np.any(acc):
            acc[0] = 1.0  # degenerate text: pin to a fixed direction
        return acc

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [EmbeddingVector.normalized(self._accumulate(t)) for t in texts]


class RemoteEmbeddingProvider(EmbeddingProvider):
    """HTTP adapter: POST {model, input:[...]} -> {data:[{embedding:[...]}]}.

    Retries transport failures with exponential backoff (3 attempts,
    starting at 1s); batches of `batch_size` run with at most
    `max_in_flight` concurrent requests.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int = 4096,
        api_key: str | None = None,
        batch_size: int = 32,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        max_in_flight: int = 4,
        post: Callable[..., object] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.name = f"remote:{model}"
        self.api_key = api_key
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.max_in_flight = max_in_flight
        self._sleep = sleep
        if post is None:
            import requests

            def post(url, **kwargs):  # pragma: no cover - exercised via stub
                return requests.post(url, timeout=60, **kwargs)

        self._post = post

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _embed_batch(self, batch: Sequence[str]) -> list[EmbeddingVector]:
        payload = {"model": self.model, "input": list(batch)}
        last_err: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._post(self.endpoint, json=payload, headers=self._headers())
                status = getattr(resp, "status_code", 200)
                if status >= 500:
                    raise ProviderUnavailable(f"server error {status}")
                body = resp.json()
                vectors = [row["embedding"] for row in body["data"]]
                break
            except Exception as err:  # noqa: BLE001 - transport and schema failures alike
                last_err = err
                if attempt + 1 < self.max_retries:
                    self._sleep(self.backoff_s * (2**attempt))
        else:
            raise ProviderUnavailable(f"embedding endpoint failed after retries: {last_err}")
        out = []
        for vec in vectors:
            if len(vec) != self.dimension:
                raise DimensionMismatch(
                    f"expected dimension {self.dimension}, got {len(vec)}"
                )
            out.append(EmbeddingVector.normalized(np.asarray(vec, dtype=np.float64)))
        if len(out) != len(batch):
            raise ProviderUnavailable("embedding endpoint returned a short batch")
        return out

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if len(batches) <= 1:
            return self._embed_batch(texts) if texts else []
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            results = list(pool.map(self._embed_batch, batches))
        return [v for batch in results for v in batch]


class CachedEmbeddingProvider(EmbeddingProvider):
    """Content-addressed file cache keyed by (provider name, text)."""

    def __init__(self, inner: EmbeddingProvider, cache_dir: str | Path):
        self.inner = inner
        self.name = inner.name
        self.dimension = inner.dimension
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, text: str) -> Path:
        key = hashlib.blake2b(
            f"{self.inner.name}\x00{text}".encode("utf-8"), digest_size=16
        ).hexdigest()
        return self.cache_dir / f"{key}.json"

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector | None] = [None] * len(texts)
        missing: list[int] = []
        for i, text in enumerate(texts):
            path = self._path(text)
            if path.exists():
                out[i] = EmbeddingVector.from_list(json.loads(path.read_text()))
            else:
                missing.append(i)
        if missing:
            fresh = self.inner.embed([texts[i] for i in missing])
            for i, vec in zip(missing, fresh):
                self._path(texts[i]).write_text(json.dumps(vec.to_list()))
                out[i] = vec
        return [v for v in out if v is not None]


def embed_sequence(seq: StudentSequence, provider: EmbeddingProvider) -> EmbeddingVector:
    """Embed the denoised serialization of a sequence as a unit vector."""
    tokens = denoise(serialize_sequence(seq))
    text = " ".join(tokens) if tokens else "empty"
    [vec] = provider.embed([text])
    if vec.dimension != provider.dimension:
        raise DimensionMismatch(
            f"provider {provider.name} returned dimension {vec.dimension}, "
            f"declared {provider.dimension}"
        )
    return vec
