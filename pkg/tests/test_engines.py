import json
import socket
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from dlpo.engines import (
    ChatExchange,
    EngineSpec,
    HttpChatEngine,
    RecordingEngine,
    ReplayEngine,
    ScriptedEngine,
    Transcript,
    request_hash,
)
from dlpo.errors import (
    ChecksumMismatch,
    EngineUnavailable,
    MalformedResponse,
    ReplayMiss,
)

OK_BODY = {"choices": [{"message": {"content": "fine [1]"}}]}


@contextmanager
def http_stub(script):
    """Local chat-completions stub; `script` is a list of (status, body)."""
    responses = list(script)
    seen = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(n) or b"{}")
            seen.append((self.path, self.headers.get("Authorization"), payload))
            status, body = responses.pop(0) if responses else (200, OK_BODY)
            data = body if isinstance(body, str) else json.dumps(body)
            raw = data.encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}/v1", seen
    finally:
        server.shutdown()
        server.server_close()


def spec_for(url, retries=3):
    return EngineSpec(model="test-model", base_url=url, temperature=0.0, max_retries=retries)


class TestRequestHash:
    def test_deterministic(self):
        a = request_hash("s", "u", "m", 0.0)
        assert a == request_hash("s", "u", "m", 0.0)
        assert len(a) == 64

    def test_sensitive_to_every_field(self):
        base = request_hash("s", "u", "m", 0.0)
        assert request_hash("S", "u", "m", 0.0) != base
        assert request_hash("s", "U", "m", 0.0) != base
        assert request_hash("s", "u", "M", 0.0) != base
        assert request_hash("s", "u", "m", 0.7) != base


def exchange(role="forward", system="sys", user="u", response="r", model="m", temp=0.0):
    return ChatExchange(
        role=role,
        model=model,
        system=system,
        user=user,
        response=response,
        hash=request_hash(system, user, model, temp),
    )


class TestTranscript:
    def test_round_trip(self, tmp_path):
        t = Transcript()
        t.append(exchange(user="q1", response="a1"))
        t.append(exchange(role="backward", user="q2", response="a2"))
        path = tmp_path / "t.jsonl"
        t.save(path)
        loaded = Transcript.load(path)
        assert loaded.exchanges == t.exchanges

    def test_file_shape(self, tmp_path):
        t = Transcript([exchange()])
        path = tmp_path / "t.jsonl"
        t.save(path)
        lines = path.read_text().splitlines()
        assert json.loads(lines[0]) == {"kind": "header", "version": 1}
        assert set(json.loads(lines[1])) == {
            "role",
            "model",
            "system",
            "user",
            "response",
            "hash",
        }

    def test_empty_transcript_is_just_header(self, tmp_path):
        path = tmp_path / "t.jsonl"
        Transcript().save(path)
        assert len(path.read_text().splitlines()) == 1
        assert len(Transcript.load(path)) == 0

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "t.jsonl"
        row = json.loads(exchange().to_json())
        del row["response"]
        path.write_text(json.dumps(row) + "\n")
        with pytest.raises(MalformedResponse):
            Transcript.load(path)

    def test_hash_collision_rejected(self, tmp_path):
        path = tmp_path / "t.jsonl"
        a = json.loads(exchange(user="one").to_json())
        b = json.loads(exchange(user="two").to_json())
        b["hash"] = a["hash"]
        path.write_text(json.dumps(a) + "\n" + json.dumps(b) + "\n")
        with pytest.raises(ChecksumMismatch):
            Transcript.load(path)


class TestRecordReplay:
    def test_recording_captures_role_and_hash(self):
        spec = EngineSpec(model="m", temperature=0.0)
        rec = RecordingEngine(ScriptedEngine(lambda s, u, r: f"{r}:{u}"), spec)
        rec.complete(system="sys", user="q", role="backward")
        (ex,) = rec.transcript.exchanges
        assert ex.role == "backward"
        assert ex.response == "backward:q"
        assert ex.hash == request_hash("sys", "q", "m", 0.0)

    def test_fifo_replay_of_repeated_request(self):
        # Two identical requests recorded with different responses must
        # replay in recording order; a third identical request is a miss.
        spec = EngineSpec(model="m", temperature=0.0)
        outputs = iter(["first", "second"])
        rec = RecordingEngine(ScriptedEngine(lambda s, u, r: next(outputs)), spec)
        rec.complete(system="sys", user="same")
        rec.complete(system="sys", user="same")
        replay = ReplayEngine(rec.transcript, spec)
        assert replay.complete(system="sys", user="same") == "first"
        assert replay.complete(system="sys", user="same") == "second"
        with pytest.raises(ReplayMiss):
            replay.complete(system="sys", user="same")

    def test_replay_miss_on_unknown_request(self):
        spec = EngineSpec(model="m")
        replay = ReplayEngine(Transcript(), spec)
        with pytest.raises(ReplayMiss):
            replay.complete(system="s", user="never seen")

    def test_record_then_replay_round_trip(self, tmp_path):
        spec = EngineSpec(model="m", temperature=0.0)
        rec = RecordingEngine(ScriptedEngine(lambda s, u, r: u.upper()), spec)
        queries = ["alpha", "beta", "gamma"]
        live = [rec.complete(system="sys", user=q) for q in queries]
        path = tmp_path / "t.jsonl"
        rec.transcript.save(path)

        replay = ReplayEngine(Transcript.load(path), spec)
        assert [replay.complete(system="sys", user=q) for q in queries] == live
        assert replay.remaining == 0


class TestHttpChatEngine:
    def test_success_and_payload_shape(self):
        with http_stub([(200, OK_BODY)]) as (url, seen):
            engine = HttpChatEngine(spec_for(url), api_key="k-123")
            out = engine.complete(system="be brief", user="2+2?")
        assert out == "fine [1]"
        path, auth, payload = seen[0]
        assert path == "/v1/chat/completions"
        assert auth == "Bearer k-123"
        assert payload["model"] == "test-model"
        assert payload["messages"] == [
            {"role": "system", "content": "be brief"},
            {"role": "user", "content": "2+2?"},
        ]

    def test_retries_on_server_errors_with_backoff(self):
        delays = []
        with http_stub([(500, "boom"), (429, "slow"), (200, OK_BODY)]) as (url, seen):
            engine = HttpChatEngine(
                spec_for(url), api_key="k", sleeper=delays.append, backoff_base=0.5
            )
            assert engine.complete(system="s", user="u") == "fine [1]"
        assert len(seen) == 3
        assert delays == [0.5, 1.0]

    def test_non_retryable_status_fails_fast(self):
        delays = []
        with http_stub([(401, '{"error": "bad key"}')]) as (url, seen):
            engine = HttpChatEngine(spec_for(url), api_key="k", sleeper=delays.append)
            with pytest.raises(EngineUnavailable):
                engine.complete(system="s", user="u")
        assert len(seen) == 1
        assert delays == []

    def test_exhaustion_raises(self):
        delays = []
        script = [(503, "x")] * 3
        with http_stub(script) as (url, seen):
            engine = HttpChatEngine(
                spec_for(url, retries=2), api_key="k", sleeper=delays.append
            )
            with pytest.raises(EngineUnavailable):
                engine.complete(system="s", user="u")
        assert len(seen) == 3
        assert delays == [0.5, 1.0]

    def test_malformed_body_raises(self):
        with http_stub([(200, {"nope": []})]) as (url, _):
            engine = HttpChatEngine(spec_for(url), api_key="k")
            with pytest.raises(MalformedResponse):
                engine.complete(system="s", user="u")

    def test_connection_error_retried_then_fails(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        delays = []
        engine = HttpChatEngine(
            spec_for(f"http://127.0.0.1:{port}/v1", retries=1),
            api_key="k",
            sleeper=delays.append,
        )
        with pytest.raises(EngineUnavailable):
            engine.complete(system="s", user="u")
        assert delays == [0.5]

    def test_no_auth_header_without_key(self, monkeypatch):
        monkeypatch.delenv("DLPO_API_KEY", raising=False)
        with http_stub([(200, OK_BODY)]) as (url, seen):
            HttpChatEngine(spec_for(url)).complete(system="s", user="u")
        assert seen[0][1] is None

    def test_api_key_from_env(self, monkeypatch):
        monkeypatch.setenv("DLPO_API_KEY", "env-key")
        with http_stub([(200, OK_BODY)]) as (url, seen):
            HttpChatEngine(spec_for(url)).complete(system="s", user="u")
        assert seen[0][1] == "Bearer env-key"
