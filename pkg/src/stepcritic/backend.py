"""Completion transports.

Three interchangeable backends realize every model call in the pipeline:

- ReplayBackend: deterministic scripted replies keyed by (role, iteration,
  optional problem_id); zero network, used by every test.
- RecordingBackend: wraps any backend and appends each reply to a capture
  file that loads back as a ReplayScript (image-bearing requests contribute
  digests only, never raw bytes).
- OpenAIChatBackend: OpenAI-compatible chat-completions over HTTP with
  bounded retries, exponential backoff with jitter, and a semaphore-bounded
  connection pool.
"""

from __future__ import annotations

import base64
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from .errors import (
    AuthError,
    BackendTimeout,
    ConfigError,
    RateLimited,
    ReplayMiss,
    TransportError,
)
from .messages import (
    AgentMessage,
    CompletionReply,
    CompletionRequest,
    ImagePart,
    RequestTag,
    TextPart,
    request_digest,
)


class CompletionBackend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionReply: ...


ReplayKey = tuple[str, int, str | None]


@dataclass
class ReplayScript:
    """Scripted replies keyed by (role, iteration, optional problem_id).

    Strict scripts error on any unmatched key; non-strict scripts fall back
    to a role-level default entry.
    """

    entries: dict[ReplayKey, str] = field(default_factory=dict)
    defaults: dict[str, str] = field(default_factory=dict)
    strict: bool = False

    def add(self, role: str, reply: str, iteration: int | None = None, problem_id: str | None = None) -> None:
        if iteration is None:
            self.defaults[role] = reply
        else:
            self.entries[(role, iteration, problem_id)] = reply

    def lookup(self, tag: RequestTag) -> str:
        for key in ((tag.role, tag.iteration, tag.problem_id), (tag.role, tag.iteration, None)):
            if key in self.entries:
                return self.entries[key]
        if not self.strict and tag.role in self.defaults:
            return self.defaults[tag.role]
        raise ReplayMiss(
            f"no replay entry for role={tag.role!r} iteration={tag.iteration} "
            f"problem_id={tag.problem_id!r}"
        )

    @classmethod
    def from_file(cls, path: str | Path, strict: bool = False) -> "ReplayScript":
        script = cls(strict=strict)
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                role = entry["role"]
                reply = entry["reply"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: malformed replay entry: {exc}") from exc
            iteration = entry.get("iteration")
            script.add(role, reply, iteration=iteration, problem_id=entry.get("problem_id"))
        return script

    def to_file(self, path: str | Path) -> None:
        lines = []
        for role, reply in sorted(self.defaults.items()):
            lines.append(json.dumps({"role": role, "reply": reply}, ensure_ascii=False))
        for (role, iteration, problem_id), reply in sorted(
            self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or "")
        ):
            entry = {"role": role, "iteration": iteration, "reply": reply}
            if problem_id is not None:
                entry["problem_id"] = problem_id
            lines.append(json.dumps(entry, ensure_ascii=False))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class ReplayBackend:
    """Deterministic stub backend; zero network. Safe for concurrent solves."""

    def __init__(self, script: ReplayScript, keep_requests: bool = True):
        self.script = script
        self.keep_requests = keep_requests
        self.requests: list[CompletionRequest] = []
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionReply:
        request.validate()
        with self._lock:
            self.calls += 1
            if self.keep_requests:
                self.requests.append(request)
        text = self.script.lookup(request.tag)
        return CompletionReply(text=text)

    def requests_for(self, role: str) -> list[CompletionRequest]:
        with self._lock:
            return [r for r in self.requests if r.tag.role == role]


class RecordingBackend:
    """Wraps a backend; every reply is appended to a capture file.

    Capture lines carry the replay key, the request digest, and the reply, so
    the file loads directly as a ReplayScript. Raw image bytes never reach the
    capture (requests are digested, and digests fold images in by hash).
    """

    def __init__(self, inner: CompletionBackend, capture_path: str | Path):
        self.inner = inner
        self.capture_path = Path(capture_path)
        self.capture_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionReply:
        reply = self.inner.complete(request)
        entry = {
            "role": request.tag.role,
            "iteration": request.tag.iteration,
            "problem_id": request.tag.problem_id,
            "request_digest": request_digest(request),
            "reply": reply.text,
            "prompt_tokens": reply.prompt_tokens,
            "completion_tokens": reply.completion_tokens,
        }
        line = json.dumps(entry, sort_keys=True, ensure_ascii=False)
        with self._lock:
            with self.capture_path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")
        return reply


def record_mode(backend: CompletionBackend, capture_path: str | Path) -> RecordingBackend:
    """Wrap ``backend`` so every (request-digest, reply) pair is captured."""
    return RecordingBackend(backend, capture_path)


def _encode_content(message: AgentMessage):
    """OpenAI message content: plain string when text-only, else typed parts
    with images as inline base64 data URLs."""
    if all(isinstance(p, TextPart) for p in message.parts):
        return message.text()
    content = []
    for part in message.parts:
        if isinstance(part, TextPart):
            content.append({"type": "text", "text": part.text})
        else:
            b64 = base64.b64encode(part.image.data).decode("ascii")
            url = f"data:{part.image.media_type};base64,{b64}"
            content.append({"type": "image_url", "image_url": {"url": url}})
    return content


class OpenAIChatBackend:
    """OpenAI-compatible chat-completions client with bounded retries.

    Rate limits, timeouts, and transport failures are retried with
    exponential backoff plus jitter; the jitter amplitude equals the base so
    delays are guaranteed non-decreasing. Auth failures surface immediately.
    Credentials travel only in the request header at send time; they never
    enter requests, traces, or captures.
    """

    def __init__(
        self,
        *,
        base_url: str,
        model_id: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = 120.0,
        max_attempts: int = 5,
        backoff_base_s: float = 0.5,
        pool_size: int = 8,
        transport: httpx.BaseTransport | None = None,
        sleeper=time.sleep,
        rng: random.Random | None = None,
    ):
        api_key = os.environ.get(api_key_env, "")
        if not api_key:
            raise ConfigError(f"API key environment variable {api_key_env!r} is not set")
        self.model_id = model_id
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self._api_key = api_key
        self._sleep = sleeper
        self._rng = rng or random.Random()
        self._slots = threading.BoundedSemaphore(pool_size)
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            timeout=timeout_s,
            limits=httpx.Limits(max_connections=pool_size),
            transport=transport,
        )

    def _delay(self, attempt: int) -> float:
        base = self.backoff_base_s
        return base * (2 ** (attempt - 1)) + self._rng.uniform(0.0, base)

    def _payload(self, request: CompletionRequest) -> dict:
        return {
            "model": request.model_id or self.model_id,
            "messages": [
                {"role": m.role, "content": _encode_content(m)} for m in request.messages
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def complete(self, request: CompletionRequest) -> CompletionReply:
        request.validate()
        payload = self._payload(request)
        started = time.perf_counter()
        attempts = 0
        last_error: Exception = TransportError("no attempt made")
        while attempts < self.max_attempts:
            attempts += 1
            try:
                with self._slots:
                    response = self._client.post(
                        "/chat/completions",
                        json=payload,
                        headers={"Authorization": f"Bearer {self._api_key}"},
                    )
            except httpx.TimeoutException as exc:
                last_error = BackendTimeout(str(exc))
            except httpx.HTTPError as exc:
                last_error = TransportError(str(exc))
            else:
                if response.status_code in (401, 403):
                    raise AuthError(f"provider rejected credentials (HTTP {response.status_code})")
                if response.status_code == 429:
                    last_error = RateLimited("provider rate limit (HTTP 429)")
                elif response.status_code >= 400:
                    last_error = TransportError(f"provider error (HTTP {response.status_code})")
                else:
                    try:
                        data = response.json()
                        text = data["choices"][0]["message"]["content"] or ""
                        usage = data.get("usage") or {}
                    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                        last_error = TransportError(f"malformed provider response: {exc}")
                    else:
                        wall_ms = int((time.perf_counter() - started) * 1000)
                        return CompletionReply(
                            text=text,
                            prompt_tokens=int(usage.get("prompt_tokens", 0)),
                            completion_tokens=int(usage.get("completion_tokens", 0)),
                            attempts=attempts,
                            wall_ms=wall_ms,
                        )
            if attempts < self.max_attempts:
                self._sleep(self._delay(attempts))
        raise last_error

    def close(self) -> None:
        self._client.close()


def build_backend(settings) -> CompletionBackend:
    """Instantiate a backend from config settings; see config.BackendSettings."""
    if settings.kind == "replay":
        if not settings.replay_path:
            raise ConfigError("replay backend requires backend.replay_path")
        script = ReplayScript.from_file(settings.replay_path, strict=settings.replay_strict)
        backend: CompletionBackend = ReplayBackend(script)
    elif settings.kind == "openai":
        backend = OpenAIChatBackend(
            base_url=settings.base_url,
            model_id=settings.model_id,
            api_key_env=settings.api_key_env,
            timeout_s=settings.timeout_s,
            max_attempts=settings.max_attempts,
            pool_size=settings.pool_size,
        )
    else:
        raise ConfigError(f"unknown backend kind: {settings.kind!r}")
    if settings.record_to:
        backend = record_mode(backend, settings.record_to)
    return backend
