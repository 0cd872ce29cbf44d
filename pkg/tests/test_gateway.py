import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from lifegen.gateway import (
    BackendConfig,
    BackendRefusedError,
    BackendUnreachableError,
    EmptyCompletionError,
    RemoteChatBackend,
    ScriptExhaustedError,
    ScriptedBackend,
    TransportFailure,
    generate,
    load_backends,
    scripted_backend,
)
from lifegen.prompts import RenderedPrompt, render

PROMPT = RenderedPrompt(template_id="t", text="INSTRUCTION: x\nINPUT: y\nOUTPUT:")


class FlakyBackend:
    """Fails with transport errors a fixed number of times, then answers."""

    def __init__(self, failures: int, max_retries: int = 2):
        self.name = "flaky"
        self.max_retries = max_retries
        self.failures = failures

    def complete(self, prompt_text: str) -> str:
        if self.failures > 0:
            self.failures -= 1
            raise TransportFailure("boom")
        return "ok"


def no_sleep(_seconds: float) -> None:
    pass


class TestScripted:
    def test_fifo_order(self):
        backend = scripted_backend(["A", "B"])
        assert generate(backend, PROMPT).text == "A"
        assert generate(backend, PROMPT).text == "B"

    def test_exhaustion(self):
        backend = scripted_backend([])
        with pytest.raises(ScriptExhaustedError):
            generate(backend, PROMPT)

    def test_exhaustion_is_empty_completion_class(self):
        assert issubclass(ScriptExhaustedError, EmptyCompletionError)

    def test_records_exact_prompt(self):
        backend = scripted_backend(["x"])
        generate(backend, PROMPT)
        assert backend.prompts == [PROMPT.text]

    def test_echo_mode_returns_input_section(self):
        backend = ScriptedBackend(echo_input=True)
        prompt = render("multi_step/scxml", "the requirement")
        assert generate(backend, prompt).text == "the requirement"


class TestRetries:
    def test_two_failures_then_success(self):
        result = generate(FlakyBackend(failures=2, max_retries=2), PROMPT, sleep=no_sleep)
        assert result.attempts == 3
        assert result.text == "ok"

    def test_unreachable_after_retries(self):
        with pytest.raises(BackendUnreachableError):
            generate(FlakyBackend(failures=5, max_retries=2), PROMPT, sleep=no_sleep)

    def test_attempts_bounded_by_retries(self):
        backend = FlakyBackend(failures=1, max_retries=3)
        result = generate(backend, PROMPT, sleep=no_sleep)
        assert result.attempts <= backend.max_retries + 1

    def test_backoff_is_exponential(self):
        delays: list[float] = []
        generate(FlakyBackend(failures=3, max_retries=3), PROMPT, sleep=delays.append)
        assert delays == [0.5, 1.0, 2.0]

    def test_transcript_records_attempts(self):
        entries: list[dict] = []
        generate(FlakyBackend(failures=1, max_retries=1), PROMPT, transcript=entries.append, sleep=no_sleep)
        assert entries[0]["attempts"] == 2
        assert entries[0]["prompt"] == PROMPT.text


class TestBackendConfig:
    def test_remote_requires_endpoint_and_model(self):
        with pytest.raises(ValueError):
            BackendConfig(name="r", kind="remote_chat", model_name="m")

    def test_validation(self):
        with pytest.raises(ValueError):
            BackendConfig(name="r", kind="scripted", temperature=-1)
        with pytest.raises(ValueError):
            BackendConfig(name="r", kind="scripted", max_output_tokens=0)


class _ChatHandler(BaseHTTPRequestHandler):
    fail_remaining = 0

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if self.path.endswith("/refuse"):
            self.send_response(404)
            self.end_headers()
            return
        if _ChatHandler.fail_remaining > 0:
            _ChatHandler.fail_remaining -= 1
            self.send_response(500)
            self.end_headers()
            return
        payload = {
            "choices": [{"message": {"role": "assistant", "content": f"echo:{body['messages'][0]['content']}"}}]
        }
        raw = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture()
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


class TestRemoteChat:
    def test_round_trip(self, chat_server):
        _ChatHandler.fail_remaining = 0
        config = BackendConfig(name="remote", kind="remote_chat", model_name="m", endpoint=chat_server)
        backend = RemoteChatBackend(config)
        result = generate(backend, PROMPT)
        assert result.text == f"echo:{PROMPT.text}"

    def test_retry_then_success(self, chat_server):
        _ChatHandler.fail_remaining = 2
        config = BackendConfig(
            name="remote", kind="remote_chat", model_name="m", endpoint=chat_server, max_retries=2
        )
        result = generate(RemoteChatBackend(config), PROMPT, sleep=no_sleep)
        assert result.attempts == 3

    def test_refusal_is_not_retried(self, chat_server):
        config = BackendConfig(
            name="remote",
            kind="remote_chat",
            model_name="m",
            endpoint=chat_server.replace("/v1/chat/completions", "/refuse"),
            max_retries=3,
        )
        calls: list[float] = []
        with pytest.raises(BackendRefusedError):
            generate(RemoteChatBackend(config), PROMPT, sleep=calls.append)
        assert calls == []  # no backoff happened


def test_load_backends(tmp_path):
    responses_file = tmp_path / "responses.json"
    responses_file.write_text(json.dumps(["r1", "r2"]))
    config = {
        "backends": [
            {"name": "fixture", "kind": "scripted", "responses_file": "responses.json"},
            {"name": "echo", "kind": "scripted", "echo_input": True},
            {
                "name": "api",
                "kind": "remote_chat",
                "endpoint": "http://example.invalid/v1",
                "model_name": "model-x",
                "temperature": 0.2,
            },
        ]
    }
    path = tmp_path / "backends.json"
    path.write_text(json.dumps(config))
    backends = load_backends(path)
    assert set(backends) == {"fixture", "echo", "api"}
    assert backends["fixture"].complete("p") == "r1"
    assert isinstance(backends["api"], RemoteChatBackend)


def test_load_backends_duplicate_name(tmp_path):
    path = tmp_path / "backends.json"
    path.write_text(json.dumps({"backends": [{"name": "a", "kind": "scripted"}, {"name": "a", "kind": "scripted"}]}))
    with pytest.raises(ValueError, match="duplicate"):
        load_backends(path)
