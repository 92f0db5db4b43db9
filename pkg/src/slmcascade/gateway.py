"""Minimal HTTP front end: POST {"id", "question"} and get the cascade
decision back as a run-log-shaped JSON row."""

from __future__ import annotations

import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .cascade import CascadeEngine, CascadeFault
from .harness import row_from_decision

log = logging.getLogger(__name__)


def decision_payload(engine: CascadeEngine, body: dict) -> dict:
    qid = str(body["id"])
    question = str(body["question"])
    gold = str(body.get("answer") or "")
    decision = engine.answer(qid, question)
    row = row_from_decision(decision, question, gold).to_dict()
    row["decision"]["final_answer"] = decision.final_answer
    if not gold:
        row["decision"]["final_correct"] = None
    return row


def make_handler(engine: CascadeEngine):
    class Handler(BaseHTTPRequestHandler):
        def _send(self, status: int, payload: dict) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                if not isinstance(body, dict) or "id" not in body or not str(body.get("question", "")).strip():
                    raise ValueError("body must be a JSON object with 'id' and a non-empty 'question'")
            except ValueError as exc:
                self._send(400, {"error": str(exc)})
                return
            try:
                self._send(200, decision_payload(engine, body))
            except CascadeFault as fault:
                self._send(502, {"error": str(fault), "stage": fault.stage})

        def log_message(self, fmt, *args):
            log.info("%s - %s", self.address_string(), fmt % args)

    return Handler


def make_server(engine: CascadeEngine, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), make_handler(engine))


def serve(engine: CascadeEngine, host: str = "127.0.0.1", port: int = 8080, server: Optional[ThreadingHTTPServer] = None) -> None:
    server = server or make_server(engine, host, port)
    log.info("cascade gateway listening on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    finally:
        server.server_close()
