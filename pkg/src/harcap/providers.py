"""Model-service clients: chat-vision completion, sentence and token embeddings.

Live clients speak the common ``/v1/chat/completions`` and ``/v1/embeddings``
JSON wire format.  The mock clients are pure functions of their inputs (plus
a script position for :class:`ScriptedChat`) so tests and offline runs are
reproducible across processes.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence, Union

import httpx
import numpy as np

from .dataset import normalize_tokens
from .errors import BackendError, DimensionDrift, EmptyResponse, ProviderError, TransportError

logger = logging.getLogger(__name__)

API_KEY_ENV = "HARCAP_API_KEY"
MOCK_EMBED_DIM = 384


@dataclass(frozen=True)
class ImagePart:
    data: bytes
    media_type: str = "image/png"

    def __post_init__(self):
        if not self.data:
            raise ValueError("image payload must be non-empty")

    def data_uri(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"


Part = Union[str, ImagePart]


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role {self.role!r}")
        if not self.parts:
            raise ValueError("a message needs at least one part")

    @property
    def text(self) -> str:
        return "\n".join(p for p in self.parts if isinstance(p, str))

    @property
    def images(self) -> list[ImagePart]:
        return [p for p in self.parts if isinstance(p, ImagePart)]


@dataclass(frozen=True)
class ChatParams:
    model_id: str = "mock"
    max_tokens: int = 256
    temperature: float = 0.0


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    model_id: str

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class TokenEmbeddings:
    tokens: list[str]
    vectors: list[EmbeddingVector] = field(default_factory=list)


class ChatProvider(Protocol):
    params: ChatParams

    def chat_complete(self, messages: Sequence[ChatMessage], params: ChatParams | None = None) -> str: ...


class TextEmbedder(Protocol):
    model_id: str

    def embed_text(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class TokenEmbedder(Protocol):
    model_id: str

    def embed_tokens(self, text: str) -> TokenEmbeddings: ...


def chat_payload(messages: Sequence[ChatMessage], params: ChatParams) -> dict:
    """Request body in the chat-completions schema; images become data URIs."""
    wire = []
    for m in messages:
        if len(m.parts) == 1 and isinstance(m.parts[0], str):
            wire.append({"role": m.role, "content": m.parts[0]})
            continue
        content = []
        for p in m.parts:
            if isinstance(p, ImagePart):
                content.append({"type": "image_url", "image_url": {"url": p.data_uri()}})
            else:
                content.append({"type": "text", "text": p})
        wire.append({"role": m.role, "content": content})
    return {
        "model": params.model_id,
        "messages": wire,
        "max_tokens": params.max_tokens,
        "temperature": params.temperature,
    }


class _CallCounter:
    def __init__(self, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.max_in_flight = max_in_flight
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.calls = 0

    def _count(self):
        with self._lock:
            self.calls += 1


# -- live HTTP clients -------------------------------------------------------------


class _HTTPClient(_CallCounter):
    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 60.0,
                 max_attempts: int = 3, backoff: float = 0.5, max_in_flight: int = 4,
                 transport: httpx.BaseTransport | None = None):
        super().__init__(max_in_flight)
        self.base_url = base_url.rstrip("/")
        self.max_attempts = max_attempts
        self.backoff = backoff
        api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _post(self, path: str, body: dict) -> dict:
        url = f"{self.base_url}{path}"
        last = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            with self._slots:
                self._count()
                try:
                    resp = self._client.post(url, json=body)
                except httpx.TransportError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    logger.warning("POST %s failed (attempt %d): %s", url, attempt + 1, last)
                    continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = f"HTTP {resp.status_code}"
                logger.warning("POST %s returned %s (attempt %d)", url, last, attempt + 1)
                continue
            if not 200 <= resp.status_code < 300:
                raise BackendError(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendError(resp.status_code, resp.text) from exc
        raise TransportError(f"POST {url} failed after {self.max_attempts} attempts ({last})")

    def close(self):
        self._client.close()


class OpenAIChat(_HTTPClient):
    def __init__(self, base_url: str, model_id: str, max_tokens: int = 256, temperature: float = 0.0,
                 **kwargs):
        super().__init__(base_url, **kwargs)
        self.params = ChatParams(model_id, max_tokens, temperature)

    def chat_complete(self, messages: Sequence[ChatMessage], params: ChatParams | None = None) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        data = self._post("/v1/chat/completions", chat_payload(messages, params or self.params))
        choices = data.get("choices") or []
        if not choices:
            raise EmptyResponse("response has no choices")
        content = (choices[0].get("message") or {}).get("content")
        if isinstance(content, list):
            content = "".join(c.get("text", "") for c in content if isinstance(c, dict))
        if not content:
            raise EmptyResponse("response message is empty")
        return content


class OpenAIEmbedder(_HTTPClient):
    """Sentence embeddings over ``/v1/embeddings``.

    ``embed_tokens`` has no native wire form, so each token is sent as its
    own request and the per-token vectors are collected in order.
    """

    def __init__(self, base_url: str, model_id: str, **kwargs):
        super().__init__(base_url, **kwargs)
        self.model_id = model_id
        self.dimension: int | None = None

    def embed_text(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        if not texts or not all(texts):
            raise ValueError("texts must be a non-empty list of non-empty strings")
        data = self._post("/v1/embeddings", {"model": self.model_id, "input": texts})
        rows = sorted(data.get("data") or [], key=lambda r: r.get("index", 0))
        if len(rows) != len(texts):
            raise EmptyResponse(f"expected {len(texts)} embeddings, got {len(rows)}")
        out = []
        for row in rows:
            v = np.asarray(row["embedding"], dtype=np.float64)
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ProviderError("embedding is not a finite 1-D vector")
            if self.dimension is None:
                self.dimension = v.shape[0]
            if v.shape[0] != self.dimension:
                raise DimensionDrift(f"dimension {v.shape[0]} != {self.dimension}")
            out.append(EmbeddingVector(v, self.model_id))
        return out

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        if not text:
            raise ValueError("text must be non-empty")
        tokens = re.findall(r"[^\W_]+", text.lower())
        vectors = [self.embed_text([t])[0] for t in tokens]
        return TokenEmbeddings(tokens, vectors)


# -- mocks -----------------------------------------------------------------------


def request_digest(messages: Sequence[ChatMessage]) -> str:
    h = hashlib.sha256()
    for m in messages:
        h.update(m.role.encode())
        for p in m.parts:
            if isinstance(p, ImagePart):
                h.update(b"\x00img" + p.media_type.encode() + hashlib.sha256(p.data).digest())
            else:
                h.update(b"\x00txt" + p.encode())
    return h.hexdigest()


class ScriptedChat(_CallCounter):
    """Replies with ``responses`` in order; the last reply repeats once the script runs out."""

    def __init__(self, responses: Sequence[str], model_id: str = "scripted", max_in_flight: int = 4):
        super().__init__(max_in_flight)
        if not responses:
            raise ValueError("script must hold at least one response")
        self.responses = list(responses)
        self.params = ChatParams(model_id)
        self.position = 0
        self.requests: list[list[ChatMessage]] = []
        self._script_lock = threading.Lock()

    def chat_complete(self, messages, params=None) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        with self._script_lock:
            self._count()
            self.requests.append(list(messages))
            reply = self.responses[min(self.position, len(self.responses) - 1)]
            self.position += 1
        if isinstance(reply, BaseException):
            raise reply
        return reply


class RuleChat(_CallCounter):
    """Deterministic chat mock driven by regex rules over the request text.

    The first rule whose pattern matches the concatenated message text
    answers.  A rule may list several replies; one is picked by a digest of
    the whole request (images included), so different keyframes can draw
    different replies while staying reproducible.
    """

    def __init__(self, rules: Sequence[tuple[str, Union[str, Sequence[str]]]], default: str = "",
                 model_id: str = "mock-chat", max_in_flight: int = 4):
        super().__init__(max_in_flight)
        self.rules = [(re.compile(p, re.IGNORECASE | re.DOTALL), [r] if isinstance(r, str) else list(r))
                      for p, r in rules]
        self.default = default
        self.params = ChatParams(model_id)

    def chat_complete(self, messages, params=None) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        self._count()
        text = "\n".join(m.text for m in messages)
        for pattern, replies in self.rules:
            if pattern.search(text):
                return replies[int(request_digest(messages), 16) % len(replies)]
        if not self.default:
            raise EmptyResponse("no mock rule matched")
        return self.default


def hash_unit_vector(token: str, dim: int = MOCK_EMBED_DIM) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:16], "little")
    v = np.random.Generator(np.random.Philox(key=seed)).standard_normal(dim)
    return v / np.linalg.norm(v)


class HashEmbedder(_CallCounter):
    """Offline embedder built from hash-seeded unit vectors.

    Token vectors are seeded by the normalised token string, so equal tokens
    share a vector and distinct tokens are nearly orthogonal.  A sentence
    vector is the normalised sum of its token vectors.
    """

    def __init__(self, dimension: int = MOCK_EMBED_DIM, model_id: str | None = None, max_in_flight: int = 4):
        super().__init__(max_in_flight)
        self.dimension = dimension
        self.model_id = model_id or f"mock-hash-{dimension}"

    def _sentence(self, text: str) -> np.ndarray:
        tokens = normalize_tokens(text) or [text]
        v = np.sum([hash_unit_vector(t, self.dimension) for t in tokens], axis=0)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            v = hash_unit_vector("\x00" + text, self.dimension)
            norm = 1.0
        return v / norm

    def embed_text(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        if not texts or not all(texts):
            raise ValueError("texts must be a non-empty list of non-empty strings")
        self._count()
        return [EmbeddingVector(self._sentence(t), self.model_id) for t in texts]

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        if not text:
            raise ValueError("text must be non-empty")
        self._count()
        tokens = normalize_tokens(text)
        return TokenEmbeddings(tokens, [EmbeddingVector(hash_unit_vector(t, self.dimension), self.model_id)
                                        for t in tokens])
