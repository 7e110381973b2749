"""Model gateways: live HTTP access, deterministic record/replay, scripting.

Every call is keyed by a request hash over (system, user, model,
temperature). Recording an optimization run yields a transcript that can be
replayed later byte-for-byte, so the whole optimizer is testable offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import requests

from .errors import (
    ChecksumMismatch,
    EngineUnavailable,
    IoFailure,
    MalformedResponse,
    ReplayMiss,
)

API_KEY_ENV = "DLPO_API_KEY"
TRANSCRIPT_VERSION = 1

_EXCHANGE_FIELDS = ("role", "model", "system", "user", "response", "hash")
_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


def request_hash(system: str, user: str, model: str, temperature: float) -> str:
    """Stable key for one chat request; replay lookups use this."""
    payload = json.dumps(
        {"system": system, "user": user, "model": model, "temperature": temperature},
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EngineSpec:
    model: str
    base_url: str = "https://api.openai.com/v1"
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0


@dataclass(frozen=True)
class ChatExchange:
    role: str
    model: str
    system: str
    user: str
    response: str
    hash: str

    def to_json(self) -> str:
        return json.dumps(
            {k: getattr(self, k) for k in _EXCHANGE_FIELDS}, ensure_ascii=False
        )


class Transcript:
    """Append-only log of chat exchanges with JSONL persistence.

    The file starts with a header line; each following line is one exchange
    with exactly the fields role, model, system, user, response, hash.
    """

    def __init__(self, exchanges: Optional[Sequence[ChatExchange]] = None) -> None:
        self._lock = threading.Lock()
        self.exchanges: list[ChatExchange] = list(exchanges or [])

    def __len__(self) -> int:
        return len(self.exchanges)

    def append(self, exchange: ChatExchange) -> None:
        with self._lock:
            self.exchanges.append(exchange)

    def save(self, path: Union[str, Path]) -> None:
        header = json.dumps({"kind": "header", "version": TRANSCRIPT_VERSION})
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(header + "\n")
                for ex in self.exchanges:
                    fh.write(ex.to_json() + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write transcript {path}: {exc}") from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Transcript":
        exchanges: list[ChatExchange] = []
        seen: dict[str, tuple[str, str, str]] = {}
        try:
            fh = open(path, encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read transcript {path}: {exc}") from exc
        with fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise MalformedResponse(
                        f"transcript line {lineno}: invalid JSON"
                    ) from exc
                if obj.get("kind") == "header":
                    continue
                missing = [k for k in _EXCHANGE_FIELDS if k not in obj]
                if missing:
                    raise MalformedResponse(
                        f"transcript line {lineno}: missing fields {missing}"
                    )
                ex = ChatExchange(**{k: obj[k] for k in _EXCHANGE_FIELDS})
                key = (ex.system, ex.user, ex.model)
                if ex.hash in seen and seen[ex.hash] != key:
                    raise ChecksumMismatch(
                        f"transcript line {lineno}: hash {ex.hash[:12]} reused "
                        "for a different request"
                    )
                seen[ex.hash] = key
                exchanges.append(ex)
        return cls(exchanges)


class HttpChatEngine:
    """OpenAI-compatible chat-completions client with bounded retries.

    Retries 429/5xx and connection errors with exponential backoff; other
    HTTP errors fail immediately. The sleeper is injectable so tests can
    observe backoff without waiting.
    """

    def __init__(
        self,
        spec: EngineSpec,
        api_key: Optional[str] = None,
        sleeper: Callable[[float], None] = time.sleep,
        session: Optional[requests.Session] = None,
        backoff_base: float = 0.5,
    ) -> None:
        self.spec = spec
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._sleeper = sleeper
        self._session = session or requests.Session()
        self._backoff_base = backoff_base

    def complete(self, system: str, user: str, role: str = "forward") -> str:
        url = self.spec.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.spec.model,
            "temperature": self.spec.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        last_error = "no attempts made"
        for attempt in range(self.spec.max_retries + 1):
            if attempt:
                self._sleeper(self._backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._session.post(
                    url, json=body, headers=headers, timeout=self.spec.timeout
                )
            except requests.RequestException as exc:
                last_error = f"connection error: {exc}"
                continue
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise EngineUnavailable(
                    f"HTTP {resp.status_code} from {url}: {resp.text[:200]}"
                )
            return _parse_completion(resp)
        raise EngineUnavailable(
            f"exhausted {self.spec.max_retries + 1} attempts against {url}: {last_error}"
        )


def _parse_completion(resp: requests.Response) -> str:
    try:
        payload = resp.json()
    except ValueError as exc:
        raise MalformedResponse("response body is not JSON") from exc
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected response shape: {exc!r}") from exc
    if not isinstance(content, str):
        raise MalformedResponse("message content is not a string")
    return content


class RecordingEngine:
    """Wraps another engine and appends every exchange to a transcript."""

    def __init__(self, inner, spec: EngineSpec, transcript: Optional[Transcript] = None):
        self.inner = inner
        self.spec = spec
        self.transcript = transcript if transcript is not None else Transcript()

    def complete(self, system: str, user: str, role: str = "forward") -> str:
        response = self.inner.complete(system=system, user=user, role=role)
        self.transcript.append(
            ChatExchange(
                role=role,
                model=self.spec.model,
                system=system,
                user=user,
                response=response,
                hash=request_hash(system, user, self.spec.model, self.spec.temperature),
            )
        )
        return response


class ReplayEngine:
    """Serves recorded responses keyed by request hash, FIFO per hash.

    Repeated identical requests return successive recorded responses in
    order; a request with no remaining recording raises ReplayMiss.
    """

    def __init__(self, transcript: Transcript, spec: EngineSpec) -> None:
        self.spec = spec
        self._lock = threading.Lock()
        self._queues: dict[str, deque[ChatExchange]] = defaultdict(deque)
        for ex in transcript.exchanges:
            self._queues[ex.hash].append(ex)

    def complete(self, system: str, user: str, role: str = "forward") -> str:
        key = request_hash(system, user, self.spec.model, self.spec.temperature)
        with self._lock:
            queue = self._queues.get(key)
            if not queue:
                raise ReplayMiss(
                    f"no recorded response for {role} request {key[:12]} "
                    f"(user: {user[:60]!r})"
                )
            return queue.popleft().response

    @property
    def remaining(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._queues.values())


class ScriptedEngine:
    """Computes responses with a plain function; the offline test double."""

    def __init__(self, fn: Callable[[str, str, str], str]) -> None:
        self._fn = fn
        self.calls = 0

    def complete(self, system: str, user: str, role: str = "forward") -> str:
        self.calls += 1
        return self._fn(system, user, role)
