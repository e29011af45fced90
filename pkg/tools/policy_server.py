#!/usr/bin/env python3
"""Example policy server for the POST /decide protocol.

    python tools/policy_server.py --port 8765 --mode color

``color`` and ``first`` are well-behaved policies. The remaining modes
misbehave on purpose so a client can be checked against each error class:
``out-of-range`` answers an index past the candidate list, ``malformed``
answers a body that is not JSON, ``slow`` sleeps before answering and
``error`` answers HTTP 500.
"""

from __future__ import annotations

import argparse
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from antnav.policy import PolicyRequest, color_match_policy

MODES = ("color", "first", "out-of-range", "malformed", "slow", "error")


def decide(mode: str, body: bytes, delay: float = 0.0) -> tuple[int, bytes]:
    """(HTTP status, response body) for one request body."""
    if mode == "error":
        return 500, b'{"error": "internal"}'
    if mode == "malformed":
        return 200, b"{not json"
    if mode == "slow":
        time.sleep(delay)
    request = PolicyRequest.from_json(body.decode("utf-8"))
    if mode == "out-of-range":
        reply = {"chosen": len(request.candidates) + 94, "stop": False, "rationale": "bogus"}
    elif mode == "color":
        reply = color_match_policy(request).to_dict()
    else:
        first = next((c.index for c in request.candidates if c.action.kind == "move"),
                     request.stop_index)
        reply = {"chosen": first, "stop": first == request.stop_index, "rationale": "first"}
    return 200, json.dumps(reply).encode("utf-8")


def make_server(host: str = "127.0.0.1", port: int = 0, mode: str = "color",
                delay: float = 0.0) -> ThreadingHTTPServer:
    """Bound but not yet serving; port 0 picks a free port (see ``server_address``)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")

    class Handler(BaseHTTPRequestHandler):
        calls = 0

        def do_POST(self):
            Handler.calls += 1
            if self.path.rstrip("/") != "/decide":
                self.send_error(404)
                return
            body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
            try:
                status, payload = decide(mode, body, delay)
            except (ValueError, KeyError) as exc:
                status, payload = 400, json.dumps({"error": str(exc)}).encode("utf-8")
            try:
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
            except (BrokenPipeError, ConnectionResetError):
                pass  # client gave up (timeout cases)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    server.handler_class = Handler
    return server


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return t


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--mode", choices=MODES, default="color")
    p.add_argument("--delay", type=float, default=35.0, help="seconds slept in slow mode")
    args = p.parse_args(argv)
    server = make_server(args.host, args.port, args.mode, args.delay)
    host, port = server.server_address[:2]
    print(f"policy server ({args.mode}) on http://{host}:{port}/decide", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


if __name__ == "__main__":
    main()
