"""Scripted runs on the virtual clock.

A scenario is an ordered list of timed steps (spawn, submit, eml, wmi,
metrics, inject-threat, kill, advance, assert). The runner replays them
deterministically for a given seed and returns a trace: one JSON-ready
record per step and per ecosystem event. Service IDs are random, so steps
refer to services as `@<name>` and the runner resolves them at execution
time; submitted messages can be labelled and asserted on later.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .clock import VirtualClock
from .config import EcosystemConfig
from .ecl import EclMessage, EclParam, make_stamp
from .ecosystem import Ecosystem
from .services import DemoServiceSpec


class ScenarioError(Exception):
    pass


class ScenarioAssertionError(ScenarioError):
    pass


@dataclass(frozen=True)
class ScenarioStep:
    at: float
    action: str
    args: dict


def load_scenario(path: str | Path) -> list[ScenarioStep]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return steps_from_doc(doc)


def steps_from_doc(doc: dict) -> list[ScenarioStep]:
    steps = []
    last_at = 0.0
    for i, raw in enumerate(doc.get("steps", [])):
        at = float(raw.get("at", last_at))
        if at < last_at:
            raise ScenarioError(f"step {i}: time {at} goes backwards (last was {last_at})")
        last_at = at
        args = {k: v for k, v in raw.items() if k not in ("at", "action")}
        steps.append(ScenarioStep(at=at, action=raw["action"], args=args))
    return steps


class ScenarioRunner:
    def __init__(self, config: EcosystemConfig | None = None, seed: int | None = None):
        config = config or EcosystemConfig()
        if seed is not None:
            config.seed = seed
        self.eco = Ecosystem(config, clock=VirtualClock())
        self.trace: list[dict] = []
        self.labels: dict[str, str] = {}  # message label -> message ID
        self.failures: list[str] = []
        self._event_cursor = 0

    # default two-host topology mirroring the demo addressing
    def ensure_default_hosts(self) -> None:
        if not self.eco.hosts:
            self.eco.add_host("alpha", "192.168.1.177")
            self.eco.add_host("beta", "192.168.1.20")

    def resolve(self, token):
        """`@name` means the service ID of a spawned instance."""
        if isinstance(token, str) and token.startswith("@"):
            name = token[1:]
            instance = self.eco.instances.get(name)
            if instance is None or instance.service_id is None:
                raise ScenarioError(f"no integrated service named {name!r}")
            return instance.service_id
        return token

    def _resolve_line(self, line: str) -> str:
        return " ".join(
            str(self.resolve(tok)) if tok.startswith("@") else tok for tok in line.split(" ")
        )

    def run(self, steps: list[ScenarioStep]) -> list[dict]:
        self.ensure_default_hosts()
        for step in steps:
            self.eco.advance_to(step.at)
            self._record({"type": "step", "at": step.at, "action": step.action})
            self._execute(step)
            self.eco.settle()
            self._drain_events()
        if self.failures:
            raise ScenarioAssertionError("; ".join(self.failures))
        return self.trace

    def _record(self, entry: dict) -> None:
        self.trace.append(entry)

    def _drain_events(self) -> None:
        while self._event_cursor < len(self.eco.events):
            self._record(dict(self.eco.events[self._event_cursor]))
            self._event_cursor += 1

    def _execute(self, step: ScenarioStep) -> None:
        args = step.args
        if step.action == "spawn":
            spec = DemoServiceSpec(
                name=args["name"],
                functions=tuple(args["functions"]),
                host_id=args.get("host", "alpha"),
                port=int(args.get("port", 0)),
            )
            self.eco.spawn_service(spec)
        elif step.action == "submit":
            message = self._build_message(args)
            use_wire = bool(args.get("wire", self.eco.key is not None))
            if use_wire:
                from .ecl import serialize_ecl
                from .security import encrypt_envelope

                payload = serialize_ecl(message).encode("utf-8")
                if self.eco.key is not None:
                    payload = encrypt_envelope(payload, self.eco.key, rng=self.eco.rng)
                mid = self.eco.submit_wire(payload, peer_ip=message.source_ip)
            else:
                mid = self.eco.submit(message)
            label = args.get("id")
            if label:
                self.labels[label] = mid
            self._record({"type": "submitted", "messageID": mid, "label": label or ""})
        elif step.action == "eml":
            result = self.eco.execute_eml(self._resolve_line(args["line"]))
            self._record(
                {
                    "type": "eml",
                    "line": args["line"],
                    "ok": result.ok,
                    "output": result.output,
                    "error": result.error or "",
                }
            )
        elif step.action == "wmi":
            sid = self.resolve(args["service"])
            script = "\n".join(self._resolve_line(line) for line in args["script"].splitlines())
            ack, report = self.eco.execute_wmi(sid, script)
            self._record({"type": "wmi", "serviceID": sid, "ack": ack, **report.to_dict()})
        elif step.action == "metrics":
            from .adaptation import ServiceMetrics

            snapshot = {}
            for entry in args["services"]:
                sid = self.resolve(entry["service"])
                snapshot[sid] = ServiceMetrics(
                    service_id=sid,
                    disk_used_mb=int(entry.get("disk_used_mb", 0)),
                    cpu_util=float(entry.get("cpu_util", 0.0)),
                    mem_util=float(entry.get("mem_util", 0.0)),
                    bw_util=float(entry.get("bw_util", 0.0)),
                    queue_depth=int(entry.get("queue_depth", 0)),
                )
            self.eco.adapt(snapshot)
        elif step.action == "inject-threat":
            sid = self.resolve(args["service"])
            record = self.eco.registry.lookup(sid)
            message = EclMessage(
                source_ip=args.get("source_ip", "192.168.1.66"),
                destination_ip=record.service_ip,
                source_id=int(args.get("source_id", 666)),
                destination_id=sid,
                function_invoked=args.get("function", "Echo"),
                params=(EclParam(args["payload"], "string"),),
                return_type="string",
                stamp=make_stamp(self.eco.clock.now()),
            )
            mid = self.eco.submit(message)
            self._record({"type": "submitted", "messageID": mid, "label": "threat"})
        elif step.action == "kill":
            self.eco.kill_service(args["service"].lstrip("@"))
        elif step.action == "advance":
            pass  # the step time itself did the work
        elif step.action == "assert":
            self._assert(args)
        else:
            raise ScenarioError(f"unknown action {step.action!r}")

    def _build_message(self, args: dict) -> EclMessage:
        dest = args.get("destination", 0)
        if isinstance(dest, str) and dest.startswith("@"):
            sid = self.resolve(dest)
            record = self.eco.registry.lookup(sid)
            dest_id, dest_ip = sid, record.service_ip
        else:
            dest_id = int(dest)
            dest_ip = args.get("destination_ip", "192.168.1.177")
        return EclMessage(
            source_ip=args.get("source_ip", "192.168.1.20"),
            destination_ip=dest_ip,
            source_id=int(args.get("source_id", 24)),
            destination_id=dest_id,
            function_invoked=args["function"],
            params=tuple(EclParam(str(v), t) for v, t in args.get("params", [])),
            return_type=args.get("return", "void"),
            stamp=make_stamp(self.eco.clock.now()),
        )

    def _assert(self, args: dict) -> None:
        check = args["check"]
        ok = False
        observed: object = None
        if check == "registry-count":
            observed = len(self.eco.registry)
            ok = observed == int(args["equals"])
        elif check == "delivered-count":
            observed = self.eco.bus.conservation()["delivered"]
            if "equals" in args:
                ok = observed == int(args["equals"])
            else:
                ok = observed >= int(args["at_least"])
        elif check == "response-value":
            mid = self.labels.get(args["msg"], "")
            response = self.eco.bus.response_for(mid)
            observed = response.return_value if response else None
            ok = observed == args["equals"]
        elif check == "health-state":
            sid = self.resolve(args["service"])
            state = self.eco.monitor.state_of(sid)
            observed = state.state if state else None
            ok = observed == args["equals"]
        elif check == "audit-function-count":
            observed = sum(
                1 for e in self.eco.audit.query() if e.function_invoked == args["function"]
            )
            ok = observed == int(args["equals"])
        elif check == "final-state":
            mid = self.labels.get(args["msg"], "")
            envelope = self.eco.bus.envelope_for(mid)
            observed = envelope.state if envelope else None
            ok = observed == args["equals"]
        else:
            raise ScenarioError(f"unknown assertion {check!r}")
        self._record({"type": "assert", "check": check, "ok": ok, "observed": str(observed)})
        if not ok:
            self.failures.append(f"{check}: expected {args}, observed {observed}")


def run_scenario(
    steps: list[ScenarioStep],
    config: EcosystemConfig | None = None,
    seed: int | None = None,
) -> list[dict]:
    runner = ScenarioRunner(config=config, seed=seed)
    return runner.run(steps)


def trace_to_bytes(trace: list[dict]) -> bytes:
    """Canonical byte form: one compact sorted-key JSON document per line."""
    lines = [json.dumps(entry, sort_keys=True, separators=(",", ":")) for entry in trace]
    return ("\n".join(lines) + "\n").encode("utf-8")
