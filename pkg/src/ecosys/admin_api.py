"""Admin HTTP API over the standard library server.

Endpoints: GET /registry, /health, /logs?since=&service=, /metrics,
GET /events (server-sent event stream), POST /eml (one command line),
POST /wmi ({"serviceID": n, "script": "..."}). Handlers run their work
through a dispatcher so all mutation stays on the owning loop.
"""
from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse


class AdminApiServer:
    def __init__(self, eco, host: str = "127.0.0.1", port: int = 7421, dispatch=None):
        """dispatch(fn) runs fn on the ecosystem's owning thread and returns
        its result; the default calls inline (single-threaded runs)."""
        self.eco = eco
        self.dispatch = dispatch or (lambda fn: fn())
        handler = _make_handler(self)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.httpd.serve_forever, name="admin-api", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def _make_handler(server: AdminApiServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, payload, status: int = 200) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            url = urlparse(self.path)
            try:
                if url.path == "/registry":
                    self._send_json(
                        {"services": server.dispatch(server.eco.registry_snapshot)}
                    )
                elif url.path == "/health":
                    self._send_json({"services": server.dispatch(server.eco.health_snapshot)})
                elif url.path == "/metrics":
                    self._send_json(server.dispatch(server.eco.metrics_snapshot))
                elif url.path == "/logs":
                    query = parse_qs(url.query)
                    since = float(query["since"][0]) if "since" in query else None
                    service = int(query["service"][0]) if "service" in query else None
                    entries = server.dispatch(
                        lambda: server.eco.audit.query(since=since, service_id=service)
                    )
                    self._send_json({"entries": [e.to_dict() for e in entries]})
                elif url.path == "/events":
                    self._stream_events(url)
                else:
                    self._send_json({"error": f"no such path {url.path}"}, status=404)
            except BrokenPipeError:
                pass
            except Exception as exc:  # surface handler bugs to the client
                self._send_json({"error": str(exc)}, status=500)

        def do_POST(self):
            url = urlparse(self.path)
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length).decode("utf-8") if length else ""
            try:
                if url.path == "/eml":
                    line = body
                    if self.headers.get("Content-Type", "").startswith("application/json"):
                        line = json.loads(body).get("line", "")
                    result = server.dispatch(lambda: server.eco.execute_eml(line))
                    self._send_json(
                        {
                            "ok": result.ok,
                            "output": result.output,
                            "effect": result.effect,
                            "error": result.error,
                        }
                    )
                elif url.path == "/wmi":
                    doc = json.loads(body)
                    service_id = int(doc["serviceID"])
                    script = doc.get("script", "")
                    ack, report = server.dispatch(
                        lambda: server.eco.execute_wmi(service_id, script)
                    )
                    self._send_json({"ack": ack, "report": report.to_dict()})
                else:
                    self._send_json({"error": f"no such path {url.path}"}, status=404)
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                self._send_json({"error": f"bad request: {exc}"}, status=400)
            except BrokenPipeError:
                pass
            except Exception as exc:
                self._send_json({"error": str(exc)}, status=500)

        def _stream_events(self, url) -> None:
            query = parse_qs(url.query)
            cursor = int(query.get("since", ["0"])[0])
            max_events = int(query.get("max", ["0"])[0])  # 0 = endless
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            sent = 0
            while True:
                events = server.dispatch(lambda: list(server.eco.events[cursor:]))
                for event in events:
                    data = json.dumps(event)
                    self.wfile.write(f"id: {cursor}\ndata: {data}\n\n".encode("utf-8"))
                    cursor += 1
                    sent += 1
                    if max_events and sent >= max_events:
                        return
                self.wfile.flush()
                time.sleep(0.05)

    return Handler
