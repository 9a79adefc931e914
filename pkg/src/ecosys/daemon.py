"""The long-running daemon: a single event loop owning the ecosystem, a TCP
listener speaking length-prefixed (optionally encrypted) message frames,
and the admin HTTP API. TCP and HTTP handler threads never touch the
ecosystem directly; they enqueue closures for the loop and wait."""
from __future__ import annotations

import queue
import socketserver
import threading

from .clock import WallClock
from .config import EcosystemConfig
from .ecl import STATUS_ERROR, build_response, recv_frame, send_frame
from .ecosystem import Ecosystem


class _LoopCommand:
    __slots__ = ("fn", "done", "result", "error")

    def __init__(self, fn):
        self.fn = fn
        self.done = threading.Event()
        self.result = None
        self.error: BaseException | None = None


class EventLoop:
    """Single-writer loop: runs queued closures, then the periodic beat."""

    def __init__(self, eco: Ecosystem, beat_interval: float = 0.05):
        self.eco = eco
        self.beat_interval = beat_interval
        self._commands: queue.Queue[_LoopCommand] = queue.Queue()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="ecosys-loop", daemon=True)
        self._last_beat = 0.0

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)

    def call(self, fn, timeout: float = 30.0):
        cmd = _LoopCommand(fn)
        self._commands.put(cmd)
        if not cmd.done.wait(timeout):
            raise TimeoutError("event loop did not answer in time")
        if cmd.error is not None:
            raise cmd.error
        return cmd.result

    def _run(self) -> None:
        period = self.eco.config.heartbeat_period
        while not self._stop.is_set():
            try:
                cmd = self._commands.get(timeout=self.beat_interval)
            except queue.Empty:
                cmd = None
            if cmd is not None:
                try:
                    cmd.result = cmd.fn()
                except BaseException as exc:  # noqa: BLE001 - reported to caller
                    cmd.error = exc
                finally:
                    cmd.done.set()
            now = self.eco.clock.now()
            if now - self._last_beat >= min(period, 1.0):
                self._last_beat = now
                self.eco.tick()
            else:
                self.eco.pump()


class _BusTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def _make_bus_handler(daemon: "Daemon"):
    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            peer_ip, peer_port = self.client_address
            max_frame = daemon.eco.config.bus_max_frame
            while True:
                try:
                    payload = recv_frame(self.request, max_frame)
                except Exception:
                    return
                if payload is None:
                    return
                try:
                    mid = daemon.loop.call(
                        lambda: daemon.eco.submit_wire(payload, peer_ip=peer_ip, peer_port=peer_port)
                    )
                    reply = daemon.wait_for_reply(mid)
                except Exception as exc:
                    reply = self._error_frame(payload, str(exc))
                if reply is not None:
                    try:
                        send_frame(self.request, reply, max_frame)
                    except Exception:
                        return

        def _error_frame(self, payload: bytes, why: str) -> bytes | None:
            from .ecl import parse_ecl, serialize_ecl
            from . import security

            try:
                raw = payload
                if daemon.eco.key is not None:
                    raw = security.decrypt_envelope(raw, daemon.eco.key)
                request = parse_ecl(raw.decode("utf-8"))
                response = build_response(request, why, STATUS_ERROR)
                out = serialize_ecl(response).encode("utf-8")
                if daemon.eco.key is not None:
                    out = security.encrypt_envelope(out, daemon.eco.key)
                return out
            except Exception:
                return None

    return Handler


class Daemon:
    def __init__(self, config: EcosystemConfig):
        self.eco = Ecosystem(config, clock=WallClock())
        if not self.eco.hosts:
            self.eco.add_host("alpha", "192.168.1.177")
            self.eco.add_host("beta", "192.168.1.20")
        self.loop = EventLoop(self.eco)
        self.bus_server = _BusTcpServer(
            ("127.0.0.1", config.bus_port), _make_bus_handler(self)
        )
        from .admin_api import AdminApiServer

        self.admin = AdminApiServer(
            self.eco, port=config.admin_port, dispatch=self.loop.call
        )
        self._bus_thread: threading.Thread | None = None

    @property
    def bus_port(self) -> int:
        return self.bus_server.server_address[1]

    @property
    def admin_port(self) -> int:
        return self.admin.port

    def start(self) -> None:
        self.loop.start()
        self._bus_thread = threading.Thread(
            target=self.bus_server.serve_forever, name="bus-tcp", daemon=True
        )
        self._bus_thread.start()
        self.admin.start()

    def stop(self) -> None:
        self.bus_server.shutdown()
        self.bus_server.server_close()
        self.admin.stop()
        self.loop.stop()

    def wait_for_reply(self, message_id: str, timeout: float = 10.0) -> bytes | None:
        """Poll until the envelope terminates, then frame its response (or
        an error response describing the terminal state)."""
        import time as _time

        deadline = _time.monotonic() + timeout
        while _time.monotonic() < deadline:
            state, payload = self.loop.call(lambda: self._reply_snapshot(message_id))
            if state is not None:
                return payload
            _time.sleep(0.02)
        return None

    def _reply_snapshot(self, message_id: str):
        envelope = self.eco.bus.envelope_for(message_id)
        if envelope is None or envelope.state == "Queued":
            return None, None
        if envelope.response is not None:
            return envelope.state, self.eco.wire_response(message_id)
        request = envelope.payload
        from . import security
        from .ecl import serialize_ecl

        response = build_response(
            request, f"message {envelope.state.lower()}", STATUS_ERROR, self.eco.clock.now()
        )
        payload = serialize_ecl(response).encode("utf-8")
        if self.eco.key is not None:
            payload = security.encrypt_envelope(payload, self.eco.key, rng=self.eco.rng)
        return envelope.state, payload


def serve(config: EcosystemConfig) -> Daemon:
    daemon = Daemon(config)
    daemon.start()
    return daemon
