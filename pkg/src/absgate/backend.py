"""Gateway to chat models.

One uniform entry point (``complete``) over two backends: a live HTTP
client for OpenAI-compatible chat endpoints and a deterministic replay
backend keyed by request digests, plus an on-disk response cache.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .templates import render_template

logger = logging.getLogger(__name__)

API_KEY_ENV = "ABSGATE_API_KEY"
MESSAGES_TEMPLATE_ID = "messages"


class BackendError(Exception):
    """Base class for gateway failures."""

    retriable = False


class TransportError(BackendError):
    """Connection-level failure; safe to retry."""

    retriable = True


class StatusError(BackendError):
    """Endpoint answered with a non-2xx status."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP status {status}: {body[:200]}")
        self.status = status


class MalformedPayloadError(BackendError):
    """Endpoint answered 2xx but the payload does not parse."""


class FixtureMissError(BackendError):
    """Replay backend has no scripted response for this request."""


class LogprobsUnavailableError(BackendError):
    """The operation needs token probabilities the backend did not return."""


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    variables: dict
    model: str
    temperature: float = 0.0
    max_tokens: int = 1024
    want_logprobs: bool = False

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def messages(self) -> list[dict]:
        if self.template_id == MESSAGES_TEMPLATE_ID:
            return json.loads(self.variables["messages"])
        return [{"role": "user", "content": render_template(self.template_id, self.variables)}]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None
    top_logprobs: tuple[dict, ...] | None = None
    usage: tuple[int, int] = (0, 0)
    backend: str = "mock"


def messages_request(
    messages: list[dict],
    *,
    model: str,
    temperature: float = 0.0,
    max_tokens: int = 1024,
    want_logprobs: bool = False,
) -> ChatRequest:
    """Wrap an explicit message list (multi-turn tool loops, repairs)."""
    payload = json.dumps(messages, sort_keys=True, ensure_ascii=False)
    return ChatRequest(
        MESSAGES_TEMPLATE_ID,
        {"messages": payload},
        model=model,
        temperature=temperature,
        max_tokens=max_tokens,
        want_logprobs=want_logprobs,
    )


def request_digest(request: ChatRequest) -> str:
    """Stable digest identifying a request; cache key and replay key."""
    canonical = json.dumps(
        {
            "template_id": request.template_id,
            "variables": dict(request.variables),
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        },
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class MockBackend:
    """Deterministic replay backend: scripted responses keyed by digest.

    Identical requests always return identical responses; unscripted
    requests fail loudly instead of inventing text.
    """

    def __init__(self, scripts: dict | None = None):
        self._scripts = dict(scripts or {})
        self._lock = threading.Lock()
        self.calls = 0
        self.requested_digests: list[str] = []

    @classmethod
    def from_file(cls, path) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def script(self, request: ChatRequest, text: str, token_logprobs=None, top_logprobs=None):
        entry = {"text": text}
        if token_logprobs is not None:
            entry["token_logprobs"] = [list(pair) for pair in token_logprobs]
        if top_logprobs is not None:
            entry["top_logprobs"] = [dict(d) for d in top_logprobs]
        self._scripts[request_digest(request)] = entry

    @property
    def scripts(self) -> dict:
        return dict(self._scripts)

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = request_digest(request)
        with self._lock:
            self.calls += 1
            self.requested_digests.append(digest)
        entry = self._scripts.get(digest)
        if entry is None:
            raise FixtureMissError(
                f"no scripted response for digest {digest[:12]} "
                f"(template {request.template_id!r})"
            )
        token_logprobs = None
        top_logprobs = None
        if request.want_logprobs:
            if entry.get("token_logprobs") is not None:
                token_logprobs = tuple((t, float(lp)) for t, lp in entry["token_logprobs"])
            if entry.get("top_logprobs") is not None:
                top_logprobs = tuple(dict(d) for d in entry["top_logprobs"])
        return ChatResponse(
            text=entry["text"],
            token_logprobs=token_logprobs,
            top_logprobs=top_logprobs,
            backend="mock",
        )


class HttpBackend:
    """Client for ``{base_url}/v1/chat/completions`` (OpenAI-compatible).

    Retries transport failures up to ``max_retries`` times with exponential
    backoff; status and payload errors surface immediately so systematic
    prompt problems are never masked. At most ``max_inflight`` requests run
    concurrently.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        session=None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_inflight: int = 4,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._session = session if session is not None else requests.Session()
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._sem = threading.BoundedSemaphore(max_inflight)
        self.calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": request.messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.want_logprobs:
            payload["logprobs"] = True
            payload["top_logprobs"] = 5
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/v1/chat/completions"

        attempt = 0
        while True:
            try:
                return self._post_once(url, payload, headers)
            except TransportError as exc:
                if attempt >= self.max_retries:
                    raise
                delay = self.backoff * (2**attempt)
                logger.warning("transport failure (%s); retrying in %.1fs", exc, delay)
                time.sleep(delay)
                attempt += 1

    def _post_once(self, url, payload, headers) -> ChatResponse:
        self.calls += 1
        try:
            with self._sem:
                resp = self._session.post(url, json=payload, headers=headers, timeout=self.timeout)
        except requests.Timeout as exc:
            raise TransportError(f"timeout: {exc}") from exc
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if not 200 <= resp.status_code < 300:
            raise StatusError(resp.status_code, resp.text)
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
            usage = data.get("usage") or {}
            token_logprobs = None
            top_logprobs = None
            content_lp = (choice.get("logprobs") or {}).get("content")
            if content_lp:
                token_logprobs = tuple((e["token"], float(e["logprob"])) for e in content_lp)
                top_logprobs = tuple(
                    {alt["token"]: float(alt["logprob"]) for alt in e.get("top_logprobs", [])}
                    for e in content_lp
                )
        except (KeyError, IndexError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise MalformedPayloadError(f"unexpected payload shape: {exc}") from exc
        return ChatResponse(
            text=text,
            token_logprobs=token_logprobs,
            top_logprobs=top_logprobs,
            usage=(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
            backend="http",
        )


class CachedBackend:
    """On-disk response cache in front of another backend.

    One JSON file per request digest; a hit returns the stored response
    without touching the inner backend; a corrupt entry is treated as a
    miss with a warning. Writes are atomic per key.
    """

    def __init__(self, inner, cache_dir):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = request_digest(request)
        path = self.cache_dir / f"{digest}.json"
        if path.exists():
            try:
                entry = json.loads(path.read_text(encoding="utf-8"))
                response = self._response_from_entry(entry, request)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                logger.warning("corrupt cache entry %s; treating as miss", path.name)
            else:
                with self._lock:
                    self.hits += 1
                return response
        response = self.inner.complete(request)
        with self._lock:
            self.misses += 1
        entry = {
            "request_digest": digest,
            "template_id": request.template_id,
            "response_text": response.text,
            "token_logprobs": (
                [list(pair) for pair in response.token_logprobs]
                if response.token_logprobs is not None
                else None
            ),
            "top_logprobs": (
                [dict(d) for d in response.top_logprobs]
                if response.top_logprobs is not None
                else None
            ),
            "backend": response.backend,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        # unique tmp name + atomic replace keeps concurrent writers of one
        # key from trampling each other's partial files
        tmp = path.with_name(f"{path.stem}.{os.getpid()}.{threading.get_ident()}.tmp")
        with self._lock:
            tmp.write_text(
                json.dumps(entry, ensure_ascii=False, sort_keys=True), encoding="utf-8"
            )
            os.replace(tmp, path)
        return response

    @staticmethod
    def _response_from_entry(entry, request: ChatRequest) -> ChatResponse:
        token_logprobs = None
        top_logprobs = None
        if request.want_logprobs:
            if entry.get("token_logprobs") is not None:
                token_logprobs = tuple((t, float(lp)) for t, lp in entry["token_logprobs"])
            if entry.get("top_logprobs") is not None:
                top_logprobs = tuple(dict(d) for d in entry["top_logprobs"])
        return ChatResponse(
            text=entry["response_text"],
            token_logprobs=token_logprobs,
            top_logprobs=top_logprobs,
            backend=entry.get("backend", "mock"),
        )


def mean_token_logprob(response: ChatResponse) -> float:
    """Arithmetic mean of the generated tokens' log probabilities."""
    if not response.token_logprobs:
        raise LogprobsUnavailableError("response carries no token log probabilities")
    values = [lp for _, lp in response.token_logprobs]
    return sum(values) / len(values)


def logprob_confidence(response: ChatResponse) -> float:
    """Mean log probability rescaled onto the 0..100 confidence scale.

    exp(mean) is a monotone map of the mean, so threshold sweeps are
    order-preserving.
    """
    return 100.0 * math.exp(mean_token_logprob(response))


def p_true_confidence(
    backend,
    statement: str,
    *,
    model: str,
    temperature: float = 0.0,
    max_tokens: int = 4,
) -> float:
    """Confidence from a True/False probe: 100 * p(True) / (p(True) + p(False)).

    Needs per-position alternative token probabilities; reports failure
    rather than approximating when the backend omits them.
    """
    request = ChatRequest(
        "p_true",
        {"statement": statement},
        model=model,
        temperature=temperature,
        max_tokens=max_tokens,
        want_logprobs=True,
    )
    response = backend.complete(request)
    if not response.top_logprobs:
        raise LogprobsUnavailableError(
            "backend did not return alternative token probabilities"
        )
    for position in response.top_logprobs:
        p_true = 0.0
        p_false = 0.0
        for token, lp in position.items():
            word = token.strip().casefold()
            if word == "true":
                p_true += math.exp(lp)
            elif word == "false":
                p_false += math.exp(lp)
        if p_true + p_false > 0:
            return 100.0 * p_true / (p_true + p_false)
    raise LogprobsUnavailableError("no True/False token alternatives found")
