"""Content-addressed on-disk cache for provider responses."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .providers import (
    ChatMessage,
    ChatParams,
    EmbeddingVector,
    TokenEmbeddings,
    chat_payload,
)


def cache_key(kind: str, model_id: str, payload: Any) -> str:
    """SHA-256 over a canonical JSON encoding of the request."""
    blob = json.dumps({"kind": kind, "model": model_id, "payload": payload},
                      sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per key under ``root/<key[:2]>/``.

    Writes go to a temp file in the same directory and are renamed into
    place, so readers never see a partial entry and concurrent writers of
    one key leave a single complete file behind.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str):
        try:
            with open(self._path(key), encoding="utf-8") as fh:
                return json.load(fh)["value"]
        except FileNotFoundError:
            return None

    def put(self, key: str, value) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump({"key": key, "value": value, "created_at": time.time()}, fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def __contains__(self, key: str) -> bool:
        return self._path(key).exists()


class CachedChat:
    def __init__(self, inner, cache: ResponseCache, kind: str = "chat"):
        self.inner = inner
        self.cache = cache
        self.kind = kind
        self.params = inner.params

    def chat_complete(self, messages: Sequence[ChatMessage], params: ChatParams | None = None) -> str:
        params = params or self.inner.params
        key = cache_key(self.kind, params.model_id, chat_payload(messages, params))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        reply = self.inner.chat_complete(messages, params)
        self.cache.put(key, reply)
        return reply


class CachedEmbedder:
    def __init__(self, inner, cache: ResponseCache):
        self.inner = inner
        self.cache = cache
        self.model_id = inner.model_id

    def embed_text(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        key = cache_key("embed_text", self.model_id, list(texts))
        hit = self.cache.get(key)
        if hit is None:
            vectors = self.inner.embed_text(texts)
            hit = [v.values.tolist() for v in vectors]
            self.cache.put(key, hit)
        return [EmbeddingVector(np.asarray(v, dtype=np.float64), self.model_id) for v in hit]

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        key = cache_key("embed_tokens", self.model_id, text)
        hit = self.cache.get(key)
        if hit is None:
            te = self.inner.embed_tokens(text)
            hit = {"tokens": list(te.tokens), "vectors": [v.values.tolist() for v in te.vectors]}
            self.cache.put(key, hit)
        return TokenEmbeddings(hit["tokens"], [EmbeddingVector(np.asarray(v, dtype=np.float64), self.model_id)
                                               for v in hit["vectors"]])
