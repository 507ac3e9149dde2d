"""HTTP bridge between the decision engine's ask flow and a browser console.

Runs one scenario in a background thread; whenever the engine escalates a
tool invocation to ASK, the round blocks and the question is exposed over
a small JSON API until a client answers or the fail-closed deadline
passes.  The API also serves graph snapshots and the decision log.

Endpoints:
    GET  /api/pending            -> pending ask cards
    POST /api/decision           -> {"ask_id":..., "choice":...}
    GET  /api/view/<round_id>    -> graph snapshot
    GET  /api/log?since=<seq>    -> decision-log records
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse, parse_qs

from .engine import AskChoice, Decision, synthesize_allow_policy
from .harness import Mode, Scenario, Transcript, Metrics, run_scenario
from .memory import SessionStore
from .policy import render_policy


@dataclass
class PendingAsk:
    ask_id: str
    decision: Decision
    deadline: float
    event: threading.Event = field(default_factory=threading.Event)
    choice: AskChoice | None = None
    final: str = ""
    synthesized: str | None = None

    def card(self) -> dict:
        binding = self.decision.matched
        path = [{"name": n.subject_name, "kind": n.kind.value}
                for n in binding.path.nodes] if binding else []
        return {
            "ask_id": self.ask_id,
            "round_id": binding.path.nodes[-1].id.rsplit(":", 1)[0] if binding else "",
            "path": path,
            "policy_text": binding.policy.source_text or render_policy(binding.policy)
            if binding else "",
            "explanation": self.decision.explanation,
            "deadline": self.deadline,
        }


class ServeState:
    """Shared state between the scenario thread and HTTP handlers."""

    def __init__(self, ask_deadline: float):
        self.ask_deadline = ask_deadline
        self.lock = threading.Lock()
        self.pending: dict[str, PendingAsk] = {}
        self.log: list[dict] = []
        self.sessions = SessionStore()
        self.transcript: Transcript | None = None
        self.metrics: Metrics | None = None
        self._counter = 0

    def responder(self, decision: Decision) -> AskChoice:
        """Blocks the asking round until a client answers or time runs out."""
        with self.lock:
            self._counter += 1
            ask = PendingAsk(
                ask_id=f"ask-{self._counter}",
                decision=decision,
                deadline=time.time() + self.ask_deadline,
            )
            self.pending[ask.ask_id] = ask
        ask.event.wait(timeout=self.ask_deadline)
        with self.lock:
            self.pending.pop(ask.ask_id, None)
        return ask.choice if ask.choice is not None else AskChoice.DISALLOW

    def answer(self, ask_id: str, choice: AskChoice) -> dict | None:
        with self.lock:
            ask = self.pending.get(ask_id)
            if ask is None or ask.event.is_set():
                return None
            ask.choice = choice
            ask.final = "deny" if choice is AskChoice.DISALLOW else "allow"
            if choice is AskChoice.ALWAYS_ALLOW and ask.decision.matched is not None:
                ask.synthesized = render_policy(
                    synthesize_allow_policy(ask.decision.matched))
            ask.event.set()
            out = {"final": ask.final}
            if ask.synthesized is not None:
                out["synthesized_policy"] = ask.synthesized
            return out

    def cards(self) -> list[dict]:
        now = time.time()
        with self.lock:
            return [a.card() for a in self.pending.values() if a.deadline > now]

    def view_snapshot(self, round_id: str) -> dict | None:
        for session in list(self.sessions._sessions.values()):
            view = session.active_view
            if view is not None and view.round_id == round_id:
                return view.snapshot()
        if self.transcript is not None:
            for r in self.transcript.rounds:
                if r.snapshot.get("round_id") == round_id:
                    return r.snapshot
        return None


class _SharedLogStore(SessionStore):
    """Session store whose sessions all append to one decision log."""

    def __init__(self, log: list[dict]):
        super().__init__()
        self._log = log

    def session_for(self, user):
        session = super().session_for(user)
        session.decision_log = self._log
        return session


def _make_handler(state: ServeState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # silence request logging
            pass

        def _send(self, code: int, body: object) -> None:
            payload = json.dumps(body).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self) -> None:
            url = urlparse(self.path)
            if url.path == "/api/pending":
                self._send(200, state.cards())
            elif url.path.startswith("/api/view/"):
                round_id = url.path[len("/api/view/"):]
                snapshot = state.view_snapshot(round_id)
                if snapshot is None:
                    self._send(404, {"error": f"unknown round {round_id!r}"})
                else:
                    self._send(200, snapshot)
            elif url.path == "/api/log":
                since = int(parse_qs(url.query).get("since", ["0"])[0])
                records = [
                    {"seq": i + 1, **record}
                    for i, record in enumerate(list(state.log))
                    if i + 1 > since
                ]
                self._send(200, records)
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self) -> None:
            url = urlparse(self.path)
            if url.path != "/api/decision":
                self._send(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                doc = json.loads(self.rfile.read(length) or b"{}")
                choice = AskChoice(doc["choice"])
                ask_id = doc["ask_id"]
            except (ValueError, KeyError) as exc:
                self._send(400, {"error": str(exc)})
                return
            result = state.answer(ask_id, choice)
            if result is None:
                self._send(410, {"error": f"no pending ask {ask_id!r}"})
            else:
                self._send(200, result)

    return Handler


class ServeApp:
    """One serve process: HTTP server plus one scenario stepper."""

    def __init__(self, scenario: Scenario, host: str = "127.0.0.1",
                 port: int = 0, ask_deadline: float = 120.0):
        self.state = ServeState(ask_deadline)
        self.state.sessions = _SharedLogStore(self.state.log)
        self.scenario = scenario
        self.server = ThreadingHTTPServer((host, port), _make_handler(self.state))
        self.address = self.server.server_address
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        server_thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        server_thread.start()
        runner = threading.Thread(target=self._run_scenario, daemon=True)
        runner.start()
        self._threads = [server_thread, runner]

    def _run_scenario(self) -> None:
        transcript, metrics = run_scenario(
            self.scenario, mode=Mode.GUARDED,
            responder=self.state.responder,
            ask_deadline=self.state.ask_deadline,
            sessions=self.state.sessions,
        )
        self.state.transcript = transcript
        self.state.metrics = metrics

    def wait(self, timeout: float | None = None) -> bool:
        self._threads[1].join(timeout=timeout)
        return not self._threads[1].is_alive()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
