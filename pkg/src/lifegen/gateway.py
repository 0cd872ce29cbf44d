"""Generation backends behind one small interface.

A backend exposes ``complete(prompt_text) -> str`` for a single attempt;
``generate`` wraps it with retries, backoff and transcript logging. The
scripted backend replays canned responses in FIFO order and records every
prompt it receives, which makes pipeline behaviour fully reproducible in
tests. The remote backend speaks the OpenAI-style chat-completions JSON
shape, sending the rendered prompt as a single user message.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import httpx

from lifegen.prompts import RenderedPrompt, extract_input_section

DEFAULT_CONCURRENCY = 4


class GatewayError(Exception):
    """Base class for generation failures."""


class BackendUnreachableError(GatewayError):
    """Transport kept failing after all retries."""


class BackendRefusedError(GatewayError):
    """The backend answered with a non-retryable refusal."""


class EmptyCompletionError(GatewayError):
    """The backend produced no usable text."""


class ScriptExhaustedError(EmptyCompletionError):
    """A scripted backend ran out of canned responses."""


class TransportFailure(GatewayError):
    """One failed attempt; retried up to the backend's max_retries."""


@dataclass(frozen=True)
class BackendConfig:
    """Declarative backend description as loaded from a config file."""

    name: str
    kind: str  # remote_chat | scripted
    model_name: str = ""
    endpoint: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 2048
    timeout_s: float = 60.0
    max_retries: int = 2
    api_key_env: str | None = None
    concurrency: int = DEFAULT_CONCURRENCY

    def __post_init__(self) -> None:
        if self.kind == "remote_chat" and not (self.endpoint and self.model_name):
            raise ValueError("remote_chat backends require endpoint and model_name")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    backend: str
    latency: float
    attempts: int


@runtime_checkable
class Backend(Protocol):
    name: str
    max_retries: int

    def complete(self, prompt_text: str) -> str:  # pragma: no cover - protocol
        ...


class ScriptedBackend:
    """Deterministic FIFO backend for tests and offline demos.

    Records every received prompt in ``prompts``. With ``echo_input`` it
    answers each prompt with its own INPUT section instead of consuming the
    script, which is handy for chain-continuity checks.
    """

    def __init__(self, responses: list[str] | None = None, name: str = "scripted", echo_input: bool = False):
        self.name = name
        self.max_retries = 0
        self.echo_input = echo_input
        self.prompts: list[str] = []
        self._responses = list(responses or [])
        self._lock = threading.Lock()

    def complete(self, prompt_text: str) -> str:
        with self._lock:
            self.prompts.append(prompt_text)
            if self.echo_input:
                return extract_input_section(prompt_text)
            if not self._responses:
                raise ScriptExhaustedError(f"scripted backend {self.name!r} has no responses left")
            return self._responses.pop(0)

    @property
    def remaining(self) -> int:
        return len(self._responses)


def scripted_backend(responses: list[str], name: str = "scripted") -> ScriptedBackend:
    return ScriptedBackend(responses, name=name)


class RemoteChatBackend:
    """OpenAI-style chat-completions client over HTTP."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        if config.kind != "remote_chat":
            raise ValueError("config kind must be remote_chat")
        self.name = config.name
        self.config = config
        self.max_retries = config.max_retries
        self._semaphore = threading.Semaphore(config.concurrency)
        self._client = client or httpx.Client(timeout=config.timeout_s)

    def complete(self, prompt_text: str) -> str:
        headers = {}
        if self.config.api_key_env:
            token = os.environ.get(self.config.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }
        with self._semaphore:
            try:
                response = self._client.post(self.config.endpoint, json=body, headers=headers)
            except httpx.HTTPError as exc:
                raise TransportFailure(str(exc)) from exc
        if response.status_code in (429,) or response.status_code >= 500:
            raise TransportFailure(f"status {response.status_code}")
        if response.status_code >= 400:
            raise BackendRefusedError(f"status {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendRefusedError(f"malformed completion payload: {exc}") from exc


TranscriptSink = Callable[[dict], None]


def generate(
    backend: Backend,
    prompt: RenderedPrompt,
    transcript: TranscriptSink | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> GenerationResult:
    """Run one generation with retry-on-transport-failure semantics.

    The prompt text is passed through byte-identical. Transport failures
    back off exponentially (0.5s, 1s, 2s, ...) up to the backend's
    max_retries; refusals and empty completions are not retried.
    """
    attempts = 0
    started = time.monotonic()
    while True:
        attempts += 1
        try:
            text = backend.complete(prompt.text)
        except TransportFailure:
            if attempts > backend.max_retries:
                raise BackendUnreachableError(
                    f"backend {backend.name!r} unreachable after {attempts} attempts"
                ) from None
            sleep(0.5 * 2 ** (attempts - 1))
            continue
        if not text:
            raise EmptyCompletionError(f"backend {backend.name!r} returned empty text")
        latency = time.monotonic() - started
        if transcript is not None:
            transcript(
                {
                    "backend": backend.name,
                    "template_id": prompt.template_id,
                    "prompt": prompt.text,
                    "response": text,
                    "attempts": attempts,
                }
            )
        return GenerationResult(text=text, backend=backend.name, latency=latency, attempts=attempts)


# --- backend config files ------------------------------------------------------


def load_backends(path: str | Path) -> dict[str, Backend]:
    """Instantiate the backends declared in a JSON config file.

    Format: {"backends": [{"name": ..., "kind": "scripted"|"remote_chat", ...}]}.
    Scripted entries take "responses" inline or "responses_file" (one JSON
    list), plus optional "echo_input".
    """
    path = Path(path)
    spec = json.loads(path.read_text("utf-8"))
    backends: dict[str, Backend] = {}
    for entry in spec.get("backends", []):
        name = entry.get("name")
        if not name:
            raise ValueError(f"{path}: backend entry without name")
        if name in backends:
            raise ValueError(f"{path}: duplicate backend name {name!r}")
        kind = entry.get("kind", "remote_chat")
        if kind == "scripted":
            responses = entry.get("responses")
            if responses is None and "responses_file" in entry:
                responses = json.loads((path.parent / entry["responses_file"]).read_text("utf-8"))
            backends[name] = ScriptedBackend(
                responses or [], name=name, echo_input=bool(entry.get("echo_input", False))
            )
        elif kind == "remote_chat":
            config = BackendConfig(
                name=name,
                kind="remote_chat",
                model_name=entry.get("model_name", ""),
                endpoint=entry.get("endpoint", ""),
                temperature=float(entry.get("temperature", 0.0)),
                max_output_tokens=int(entry.get("max_output_tokens", 2048)),
                timeout_s=float(entry.get("timeout_s", 60.0)),
                max_retries=int(entry.get("max_retries", 2)),
                api_key_env=entry.get("api_key_env"),
                concurrency=int(entry.get("concurrency", DEFAULT_CONCURRENCY)),
            )
            backends[name] = RemoteChatBackend(config)
        else:
            raise ValueError(f"{path}: unknown backend kind {kind!r}")
    return backends
