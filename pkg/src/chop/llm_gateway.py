"""Chat-completion access with a remote HTTP backend and scripted replay.

The pipeline always calls at temperature 0. Recorded transcripts key each
response by a digest of the exact prompt text, which makes any run replayable
and byte-for-byte deterministic without network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

DEFAULT_MAX_OUTPUT_TOKENS = 512
DEFAULT_API_KEY_ENV = "CHOP_API_KEY"


class GatewayError(RuntimeError):
    pass


class TranscriptMissError(GatewayError):
    """Scripted backend has no entry for the requested prompt digest."""


@dataclass(frozen=True)
class ChatRequest:
    prompt: str
    system_prompt: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency: float
    backend_id: str


def prompt_digest(prompt: str) -> str:
    """Stable content hash of a prompt, with line endings normalized to \\n."""
    normalized = prompt.replace("\r\n", "\n").replace("\r", "\n")
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass
class Transcript:
    entries: dict[str, str] = field(default_factory=dict)

    def record(self, prompt: str, response_text: str) -> str:
        digest = prompt_digest(prompt)
        self.entries[digest] = response_text
        return digest

    def lookup(self, prompt: str) -> str:
        digest = prompt_digest(prompt)
        if digest not in self.entries:
            raise TranscriptMissError(f"no transcript entry for prompt digest {digest}")
        return self.entries[digest]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as handle:
            for digest, response in self.entries.items():
                handle.write(json.dumps({"digest": digest, "response": response}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        path = Path(path)
        if not path.exists():
            raise GatewayError(f"transcript file not found: {path}")
        entries: dict[str, str] = {}
        with path.open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    entries[record["digest"]] = record["response"]
                except (json.JSONDecodeError, KeyError) as exc:
                    raise GatewayError(f"{path}:{lineno}: bad transcript record: {exc}") from exc
        return cls(entries=entries)


class ScriptedBackend:
    """Replays recorded responses; read-only after load, safe to share."""

    backend_id = "scripted"

    def __init__(self, transcript: Transcript) -> None:
        self._transcript = transcript
        self.calls = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        started = time.perf_counter()
        text = self._transcript.lookup(request.prompt)
        self.calls += 1
        return ChatResponse(
            text=text, latency=time.perf_counter() - started, backend_id=self.backend_id
        )


class RemoteBackend:
    """Chat-completions HTTP backend with bounded retries.

    Sends the usual JSON body (model, system+user messages, temperature, max
    tokens) and reads the assistant message text back. Transport errors and
    5xx responses are retried with exponential backoff; 4xx responses are not.
    """

    backend_id = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        sleep=time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._semaphore = threading.Semaphore(max_in_flight)
        self.calls = 0
        self.retries = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.prompt})
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        started = time.perf_counter()
        last_error: Exception | None = None
        with self._semaphore:
            for attempt in range(self.max_attempts):
                if attempt > 0:
                    self.retries += 1
                    self._sleep(self.backoff * (2 ** (attempt - 1)))
                try:
                    response = requests.post(
                        self.endpoint, json=body, headers=headers, timeout=self.timeout
                    )
                except requests.RequestException as exc:
                    last_error = exc
                    logger.warning("chat request transport failure (attempt %d): %s", attempt + 1, exc)
                    continue
                if response.status_code >= 500:
                    last_error = GatewayError(f"server error {response.status_code}")
                    logger.warning("chat request got %d (attempt %d)", response.status_code, attempt + 1)
                    continue
                if response.status_code >= 400:
                    raise GatewayError(
                        f"chat request rejected with status {response.status_code}: {response.text[:200]}"
                    )
                text = self._extract_text(response)
                if not text:
                    raise GatewayError("chat response contained no text")
                self.calls += 1
                return ChatResponse(
                    text=text, latency=time.perf_counter() - started, backend_id=self.backend_id
                )
        raise GatewayError(f"chat request failed after {self.max_attempts} attempts: {last_error}")

    @staticmethod
    def _extract_text(response: requests.Response) -> str:
        try:
            payload = response.json()
            return payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response body: {exc}") from exc


class RecordingBackend:
    """Wraps another backend and appends every completed call to a transcript."""

    def __init__(self, inner, transcript_path: str | Path) -> None:
        self._inner = inner
        self._path = Path(transcript_path)
        self._lock = threading.Lock()
        self.transcript = Transcript()
        self.backend_id = f"recording({inner.backend_id})"

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.complete(request)
        digest = self.transcript.record(request.prompt, response.text)
        line = json.dumps({"digest": digest, "response": response.text}) + "\n"
        with self._lock, self._path.open("a", encoding="utf-8") as handle:
            handle.write(line)
        return response
