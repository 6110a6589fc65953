"""Test doubles: a scripted in-process gateway and a fake chat-completions server."""

from __future__ import annotations

import json
import threading
from collections import defaultdict, deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from resum.llm_gateway import AgentSpec, ChatRequest, ChatResponse
from resum.prompt_kit import LOOP_DIMENSIONS


def agent(agent_id: str = "gen", endpoint: str = "http://127.0.0.1:9/v1", **kw) -> AgentSpec:
    return AgentSpec(agent_id, f"model-{agent_id}", endpoint, **kw)


def eval_text(scores, rationale: str = "because", dims=LOOP_DIMENSIONS) -> str:
    """A well-formed evaluation reply in the prompt's Python-dict format."""
    if not isinstance(scores, dict):
        scores = dict(zip(dims, scores))
    body = dict(scores)
    body["explanation"] = {d: f"{d} {rationale}" for d in scores}
    return repr(body)


def stage_of(request: ChatRequest) -> str:
    user = request.user_message
    if "Independent Evaluations" in user:
        return "leader"
    if "Summary to Evaluate" in user:
        return "evaluate"
    if "Previous Summary" in user:
        return "refine"
    return "generate"


class ScriptedGateway:
    """Duck-typed gateway answering from per-agent score schedules.

    ``schedules`` maps agent id to a list of score vectors consumed in order by
    evaluation calls; generation calls return numbered summaries. ``raw`` may
    override replies: a mapping agent id -> list of literal strings or
    exceptions, consumed before the schedule.
    """

    def __init__(self, schedules=None, raw=None, leader_scores=None):
        self.schedules = {k: deque(v) for k, v in (schedules or {}).items()}
        self.raw = {k: deque(v) for k, v in (raw or {}).items()}
        self.leader_scores = deque(leader_scores or [])
        self.calls: list[ChatRequest] = []
        self.counts = defaultdict(int)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
            stage = stage_of(request)
            self.counts[stage] += 1
            aid = request.agent.agent_id
            if self.raw.get(aid):
                item = self.raw[aid].popleft()
                if isinstance(item, BaseException):
                    raise item
                return ChatResponse(item)
            if stage == "generate":
                return ChatResponse("Initial summary text.")
            if stage == "refine":
                return ChatResponse(f"Refined summary number {self.counts['refine']}.")
            if stage == "leader":
                return ChatResponse(eval_text(self.leader_scores.popleft(), "leader view"))
            return ChatResponse(eval_text(self.schedules[aid].popleft(), f"from {aid}"))

    def stage_calls(self, stage: str) -> list[ChatRequest]:
        return [c for c in self.calls if stage_of(c) == stage]


class FakeChatServer:
    """A chat-completions endpoint on 127.0.0.1 driven by a handler function.

    ``handler(payload, headers)`` returns ``(status, body)``; a dict body is
    sent as JSON, a str as-is. The default handler echoes a fixed completion.
    """

    def __init__(self, handler=None):
        self.handler = handler or (lambda payload, headers: (200, completion("ok")))
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                outer.requests.append(payload)
                outer.headers.append(dict(self.headers))
                status, body = outer.handler(payload, dict(self.headers))
                data = json.dumps(body).encode() if isinstance(body, dict) else body.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


def completion(text: str, prompt_tokens: int = 10, completion_tokens: int = 5) -> dict:
    return {
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }
