"""Wire-level message, request, and reply types shared by agents and backends."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .errors import SchemaError

_MAGIC_PREFIXES: tuple[tuple[bytes, str], ...] = (
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
    (b"BM", "image/bmp"),
    (b"II*\x00", "image/tiff"),
    (b"MM\x00*", "image/tiff"),
)


def detect_media_type(data: bytes) -> str:
    """Sniff a raster media type from magic bytes; octet-stream when unknown."""
    for prefix, media_type in _MAGIC_PREFIXES:
        if data.startswith(prefix):
            return media_type
    if len(data) >= 12 and data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "image/webp"
    return "application/octet-stream"


@dataclass(frozen=True)
class ImagePayload:
    """Inline image bytes; transported as an attachment, never as a file path."""

    data: bytes
    media_type: str

    @classmethod
    def from_bytes(cls, data: bytes, media_type: str | None = None) -> "ImagePayload":
        return cls(data=data, media_type=media_type or detect_media_type(data))

    @property
    def digest(self) -> str:
        return "sha256:" + hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    image: ImagePayload


Part = TextPart | ImagePart


@dataclass(frozen=True)
class AgentMessage:
    """One chat message: a role plus ordered text/image parts."""

    role: str  # system | user | assistant
    parts: tuple[Part, ...]

    @classmethod
    def from_text(cls, role: str, text: str) -> "AgentMessage":
        return cls(role=role, parts=(TextPart(text),))

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    def image_payloads(self) -> tuple[ImagePayload, ...]:
        return tuple(p.image for p in self.parts if isinstance(p, ImagePart))


@dataclass(frozen=True)
class RequestTag:
    """Replay/trace key for one completion call."""

    role: str
    iteration: int = 1
    problem_id: str | None = None


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[AgentMessage, ...]
    model_id: str = ""
    temperature: float = 0.0
    max_tokens: int = 2048
    tag: RequestTag = RequestTag("unknown")

    def validate(self) -> None:
        if not self.messages:
            raise SchemaError("completion request has no messages")
        if self.messages[0].role != "system":
            raise SchemaError("first message must have role 'system'")
        if self.temperature < 0:
            raise SchemaError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise SchemaError("max_tokens must be positive")


@dataclass
class CompletionReply:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    attempts: int = 1
    wall_ms: int = 0


def message_fingerprint(messages: tuple[AgentMessage, ...]) -> list:
    """JSON-able structure identifying message content; images appear only
    as digests so fingerprints (and anything built on them) never carry
    raw image bytes."""
    out = []
    for message in messages:
        parts = []
        for part in message.parts:
            if isinstance(part, TextPart):
                parts.append({"text": part.text})
            else:
                parts.append({"image": part.image.digest, "media_type": part.image.media_type})
        out.append({"role": message.role, "parts": parts})
    return out


def request_digest(request: CompletionRequest) -> str:
    payload = {
        "messages": message_fingerprint(request.messages),
        "model_id": request.model_id,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "tag": [request.tag.role, request.tag.iteration, request.tag.problem_id],
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
