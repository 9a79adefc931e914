"""Composition root: one object owning the registry, bus, security tables,
resource manager, health monitor, virtual hosts, and demo service
instances. All mutation funnels through this object so a single-threaded
run is fully deterministic given the seed and the clock.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from . import eml as eml_lang
from . import integration
from . import security
from .adaptation import CapacityError, DirectiveReport, ResourceManager, ServiceMetrics
from .bus import INTEGRATION_FUNCTION, MessageBus, SecurityPolicy
from .clock import VirtualClock
from .config import EcosystemConfig
from .ecl import (
    EclMessage,
    EclParam,
    STATUS_ERROR,
    STATUS_OK,
    build_response,
    make_stamp,
    parse_ecl,
    serialize_ecl,
)
from .integration import Ack, IntegrationRequest, Reject
from .registry import BUS_ID, ServiceRegistry
from .sdl import sdl_from_xml, sdl_to_xml
from .services import DemoServiceInstance, DemoServiceSpec
from .survivability import (
    EV_EXPLOIT_DETECTED,
    EV_POLICY_VIOLATION,
    FAULT,
    HealthEvent,
    HealthMonitor,
    NoStoredSdl,
    recovery_plan,
)

BUS_IP = "10.0.0.1"


@dataclass
class VirtualHostInfo:
    host_id: str
    ip: str
    next_port: int = 9100


class Ecosystem:
    def __init__(self, config: EcosystemConfig | None = None, clock=None, rng=None):
        self.config = config or EcosystemConfig()
        self.clock = clock or VirtualClock()
        self.rng = rng or random.Random(self.config.seed)
        self.registry = ServiceRegistry(
            rng=self.rng, log_path=self.config.registry_log_file or None
        )
        self.acm = security.AccessControlMatrix()
        self.audit = security.AuditLog(path=self.config.audit_log_file or None)
        self.policy = SecurityPolicy(acm=self.acm, audit=self.audit)
        if self.config.firewall_rules_file:
            rules, default = security.load_firewall_rules(self.config.firewall_rules_file)
            self.policy.firewall_rules = rules
            self.policy.firewall_default = default
        if self.config.spam_rules_file:
            self.policy.spam_rules = security.load_spam_rules(self.config.spam_rules_file)
        if self.config.signatures_file:
            self.policy.signatures = security.load_threat_signatures(self.config.signatures_file)
        self.key: bytes | None = None
        if self.config.security_encrypt:
            if not self.config.security_key_file:
                raise security.BadKeyLength("security.encrypt=true requires security.key-file")
            self.key = security.load_key(self.config.security_key_file)
        self.resources = ResourceManager(
            disk_high=self.config.adapt_disk_high,
            disk_grow=self.config.adapt_disk_grow,
            cpu_high=self.config.adapt_cpu_high,
            idle_low=self.config.adapt_idle_low,
            idle_ticks=self.config.adapt_idle_ticks,
            queue_threshold=self.config.adapt_queue_threshold,
            queue_sustain=self.config.adapt_queue_sustain,
        )
        self.monitor = HealthMonitor(
            quiet_period=self.config.recovery_quiet_period,
            on_transition=self._on_health_transition,
        )
        self.bus = MessageBus(
            self.registry,
            self.policy,
            self.clock,
            rng=self.rng,
            max_attempts=self.config.bus_max_attempts,
            queue_cap=self.config.bus_queue_cap,
            backoff_base=self.config.bus_backoff_base,
            on_security_event=self._on_security_event,
        )
        self.bus.bus_handler = self._handle_bus_request
        self.hosts: dict[str, VirtualHostInfo] = {}
        self.instances: dict[str, DemoServiceInstance] = {}  # by spec name
        self.events: list[dict] = []
        self._pending_integrations: dict[tuple[str, int], DemoServiceInstance] = {}
        self._pending_recoveries: list[int] = []
        self._last_sweep_at = self.clock.now()
        self._adaptation_event_cursor = 0

    # -- topology --------------------------------------------------------------

    def add_host(self, host_id: str, ip: str, **capacities) -> VirtualHostInfo:
        info = VirtualHostInfo(host_id=host_id, ip=ip)
        self.hosts[host_id] = info
        self.resources.add_host(host_id, **capacities)
        return info

    def allocate_port(self, host_id: str) -> int:
        info = self.hosts[host_id]
        while True:
            port = info.next_port
            info.next_port += 1
            if (info.ip, port) not in {
                (r.service_ip, r.port) for r in self.registry.records()
            }:
                return port

    # -- service lifecycle -------------------------------------------------------

    def spawn_service(self, spec: DemoServiceSpec) -> DemoServiceInstance:
        """Start an in-process instance and let it ask for admission; the
        record shows up once the bus pumps the request."""
        if spec.host_id not in self.hosts:
            raise LookupError(f"unknown host {spec.host_id!r}")
        if not self.resources.can_fit(spec.host_id):
            raise CapacityError(f"host {spec.host_id!r} cannot fit another instance")
        host = self.hosts[spec.host_id]
        port = spec.port or self.allocate_port(spec.host_id)
        instance = DemoServiceInstance(spec=spec, service_ip=host.ip, port=port)
        self.instances[spec.name] = instance
        self._pending_integrations[(host.ip, port)] = instance
        message = EclMessage(
            source_ip=host.ip,
            destination_ip=BUS_IP,
            source_id=0,
            destination_id=BUS_ID,
            function_invoked=INTEGRATION_FUNCTION,
            params=(
                EclParam(sdl_to_xml(instance.spec.sdl()), "string"),
                EclParam(str(port), "int"),
                EclParam("ECL", "string"),
            ),
            return_type="string",
            stamp=make_stamp(self.clock.now()),
        )
        self.bus.submit(message)
        return instance

    def integrate(self, req: IntegrationRequest) -> Ack | Reject:
        """Direct admission path (used by the console's bind): validate,
        insert, snapshot the description for later recovery."""
        result = integration.request_integration(self.registry, req, self.clock.now())
        if isinstance(result, Ack):
            instance = self._pending_integrations.pop((req.service_ip, req.port), None)
            if instance is not None:
                host_id = self._host_for_ip(req.service_ip)
                if host_id is not None:
                    try:
                        self.resources.allocate(result.service_id, host_id)
                    except CapacityError as exc:
                        self.registry.remove(result.service_id)
                        self.instances.pop(instance.spec.name, None)
                        return Reject((str(exc),))
                instance.service_id = result.service_id
                self.bus.handlers[result.service_id] = instance.handle
            self.monitor.track(result.service_id, self.clock.now())
            self.monitor.store_sdl(result.service_id, req.sdl, req.service_ip, req.protocol)
            self._emit_event(
                "integrated",
                serviceID=result.service_id,
                ip=req.service_ip,
                port=req.port,
            )
        return result

    def unbind(self, service_id: int) -> bool:
        removed = self.registry.remove(service_id)
        if removed:
            self.bus.handlers.pop(service_id, None)
            self.resources.release(service_id)
            self.monitor.drop(service_id)
            for name, inst in list(self.instances.items()):
                if inst.service_id == service_id:
                    inst.alive = False
                    del self.instances[name]
            self._emit_event("unbound", serviceID=service_id)
        return removed

    def kill_service(self, name: str) -> bool:
        """Stop an instance without unbinding: it goes offline, stops
        heartbeating, and the sweep reaps it after the timeout."""
        instance = self.instances.get(name)
        if instance is None:
            return False
        instance.alive = False
        if instance.service_id is not None:
            self.registry.mark_offline(instance.service_id)
        self._emit_event("killed", service=name, serviceID=instance.service_id)
        return True

    def replicate(self, service_id: int, host_id: str | None = None):
        """Clone a service onto a fresh port with a new identity but the
        same description. Raises LookupError / CapacityError."""
        original = self.registry.lookup(service_id)
        source_instance = None
        for inst in self.instances.values():
            if inst.service_id == service_id:
                source_instance = inst
                break
        target_host = host_id or self._host_for_ip(original.service_ip)
        if target_host is None or target_host not in self.hosts:
            raise LookupError(f"unknown host {target_host!r}")
        if source_instance is not None and not self.resources.can_fit(target_host):
            raise CapacityError(f"host {target_host!r} cannot fit another instance")
        host = self.hosts[target_host]
        port = self.allocate_port(target_host)
        req = IntegrationRequest(
            service_ip=host.ip, port=port, protocol=original.protocol, sdl=original.sdl
        )
        if source_instance is not None:
            clone_spec = DemoServiceSpec(
                name=f"{source_instance.spec.name}-replica-{port}",
                functions=source_instance.spec.functions,
                host_id=target_host,
                port=port,
            )
            clone = DemoServiceInstance(spec=clone_spec, service_ip=host.ip, port=port)
            self.instances[clone_spec.name] = clone
            self._pending_integrations[(host.ip, port)] = clone
        result = self.integrate(req)
        if isinstance(result, Reject):
            self._pending_integrations.pop((host.ip, port), None)
            if source_instance is not None:
                self.instances.pop(f"{source_instance.spec.name}-replica-{port}", None)
            raise LookupError("; ".join(result.issues))
        return self.registry.lookup(result.service_id)

    def _host_for_ip(self, ip: str) -> str | None:
        for host_id, info in self.hosts.items():
            if info.ip == ip:
                return host_id
        return None

    # -- bus-internal functions ---------------------------------------------------

    def _handle_bus_request(self, m: EclMessage, now: float) -> EclMessage:
        if m.function_invoked == INTEGRATION_FUNCTION:
            try:
                sdl = sdl_from_xml(m.params[0].value)
                port = int(m.params[1].value)
                protocol = m.params[2].value if len(m.params) > 2 else "ECL"
            except (IndexError, ValueError) as exc:
                return build_response(m, f"bad integration request: {exc}", STATUS_ERROR, now)
            req = IntegrationRequest(
                service_ip=m.source_ip, port=port, protocol=protocol, sdl=sdl
            )
            result = self.integrate(req)
            if isinstance(result, Ack):
                return build_response(m, str(result.service_id), STATUS_OK, now)
            return build_response(m, "; ".join(result.issues), STATUS_ERROR, now)
        return build_response(
            m, f"unknown bus function {m.function_invoked!r}", STATUS_ERROR, now
        )

    # -- message intake ------------------------------------------------------------

    def submit(self, m: EclMessage, peer_ip: str | None = None, peer_port: int = 0) -> str:
        return self.bus.submit(m, peer_ip=peer_ip, peer_port=peer_port)

    def submit_wire(self, frame_payload: bytes, peer_ip: str | None = None, peer_port: int = 0) -> str:
        """Wire ingress: decrypt when the envelope key is configured, then
        parse and queue."""
        if self.key is not None:
            frame_payload = security.decrypt_envelope(frame_payload, self.key)
        message = parse_ecl(frame_payload.decode("utf-8"))
        return self.submit(message, peer_ip=peer_ip, peer_port=peer_port)

    def wire_response(self, message_id: str) -> bytes | None:
        """Wire egress for a delivered message's response."""
        response = self.bus.response_for(message_id)
        if response is None:
            return None
        payload = serialize_ecl(response).encode("utf-8")
        if self.key is not None:
            payload = security.encrypt_envelope(payload, self.key, rng=self.rng)
        return payload

    # -- event wiring ----------------------------------------------------------------

    def _on_security_event(self, kind: str, m: EclMessage, detail: str, now: float) -> None:
        self._emit_event("security", kind=kind, detail=detail, serviceID=m.destination_id)
        if kind == "acm-denied" and self.registry.get(m.destination_id) is not None:
            self.monitor.apply(m.destination_id, HealthEvent(EV_POLICY_VIOLATION, detail), now)
        elif kind == "threat" and self.registry.get(m.destination_id) is not None:
            self.monitor.apply(m.destination_id, HealthEvent(EV_EXPLOIT_DETECTED, detail), now)

    def _on_health_transition(self, service_id, old, new, event, now) -> None:
        self._emit_event(
            "health", serviceID=service_id, fromState=old, toState=new, event=event.kind
        )
        if new == FAULT and self.config.recovery_auto:
            self._pending_recoveries.append(service_id)

    def _emit_event(self, type_: str, **data) -> None:
        self.events.append({"seq": len(self.events), "t": self.clock.now(), "type": type_, **data})

    # -- recovery ---------------------------------------------------------------------

    def run_recovery(self, service_id: int) -> dict:
        """Execute the recovery plan for a faulted service: wall it off,
        optionally replicate a healthy twin, reintegrate a replacement from
        the stored description, then mark the recovery done."""
        plan = recovery_plan(self.monitor, self.registry, service_id)
        report = {"serviceID": service_id, "actions": [], "replacement": None}
        now = self.clock.now()
        for action in plan:
            if action.kind == "quarantine":
                order = min((r.order for r in self.policy.firewall_rules), default=1) - 1
                self.policy.firewall_rules.append(
                    security.FirewallRule(
                        order=order, service_id=str(service_id), verdict=security.VERDICT_REJECT
                    )
                )
                report["actions"].append(f"quarantine {service_id}")
            elif action.kind == "replicate-twin":
                record = self.replicate(action.target)
                report["actions"].append(f"replicate-twin {action.target} -> {record.service_id}")
            elif action.kind == "reintegrate":
                snapshot = self.monitor.sdl_snapshot(service_id)
                if snapshot is None:
                    raise NoStoredSdl(f"no stored description for service {service_id}")
                sdl, ip, protocol = snapshot
                host_id = self._host_for_ip(ip)
                faulted_instance = None
                for inst in list(self.instances.values()):
                    if inst.service_id == service_id:
                        faulted_instance = inst
                saved_state = self.monitor.state_of(service_id)
                self.unbind(service_id)
                # the faulted identity must finish its plan after the unbind
                self.monitor.restore(saved_state, now)
                port = self.allocate_port(host_id) if host_id else 0
                if faulted_instance is not None and host_id is not None:
                    replacement_spec = DemoServiceSpec(
                        name=f"{faulted_instance.spec.name}-recovered-{port}",
                        functions=faulted_instance.spec.functions,
                        host_id=host_id,
                        port=port,
                    )
                    replacement = DemoServiceInstance(
                        spec=replacement_spec, service_ip=ip, port=port
                    )
                    self.instances[replacement_spec.name] = replacement
                    self._pending_integrations[(ip, port)] = replacement
                result = self.integrate(
                    IntegrationRequest(service_ip=ip, port=port, protocol=protocol, sdl=sdl)
                )
                if isinstance(result, Reject):
                    report["actions"].append("reintegration rejected: " + "; ".join(result.issues))
                    return report
                report["replacement"] = result.service_id
                report["actions"].append(f"reintegrate -> {result.service_id}")
            elif action.kind == "emit-event":
                self.monitor.apply(service_id, HealthEvent(action.event, "recovery plan"), now)
                report["actions"].append(action.event)
        # the faulted identity is gone from the registry; retire its FSM
        state = self.monitor.state_of(service_id)
        if state is not None and state.state == "Good" and self.registry.get(service_id) is None:
            self.monitor.drop(service_id)
        return report

    # -- periodic work -------------------------------------------------------------------

    def pump(self) -> list:
        outcomes = self.bus.pump()
        for outcome in outcomes:
            self._emit_event("delivery", **outcome.to_dict())
        self._drain_adaptation_events()
        while self._pending_recoveries:
            sid = self._pending_recoveries.pop(0)
            try:
                report = self.run_recovery(sid)
                self._emit_event("recovery", **report)
            except NoStoredSdl as exc:
                self._emit_event("recovery-failed", serviceID=sid, reason=str(exc))
        return outcomes

    def settle(self, max_rounds: int = 10) -> list:
        """Pump until a pass moves nothing (retries waiting on future time
        stay queued)."""
        all_outcomes = []
        for _ in range(max_rounds):
            outcomes = self.pump()
            if not outcomes:
                break
            all_outcomes.extend(outcomes)
        return all_outcomes

    def tick(self) -> None:
        """One periodic maintenance beat: live instances heartbeat, the
        sweep reaps the silent, vulnerable services may quiet out, queued
        work pumps."""
        now = self.clock.now()
        for inst in self.instances.values():
            if inst.alive and inst.service_id is not None:
                integration.heartbeat(self.registry, inst.service_id, now)
        removed = integration.sweep_unreachable(
            self.registry, now, self.config.heartbeat_timeout
        )
        for sid in removed:
            self.bus.handlers.pop(sid, None)
            self.resources.release(sid)
            self.monitor.drop(sid)
            self._emit_event("swept", serviceID=sid)
        self.monitor.tick(now)
        self.pump()

    def advance_to(self, t: float) -> None:
        """Move the virtual clock to t, running the maintenance beat at
        every heartbeat-period boundary on the way."""
        period = self.config.heartbeat_period
        now = self.clock.now()
        if t < now:
            raise ValueError(f"cannot advance backwards from {now} to {t}")
        next_beat = (int(now / period) + 1) * period
        while next_beat <= t:
            self.clock.set(next_beat)
            self.tick()
            next_beat += period
        self.clock.set(t)

    def adapt(self, metrics: dict[int, ServiceMetrics]) -> list:
        directives = self.resources.adapt_tick(metrics, self.clock.now())
        for d in directives:
            self._emit_event("directive", line=d.as_line())
        self._drain_adaptation_events()
        return directives

    def _drain_adaptation_events(self) -> None:
        while self._adaptation_event_cursor < len(self.resources.events):
            ev = self.resources.events[self._adaptation_event_cursor]
            self._adaptation_event_cursor += 1
            self._emit_event("adaptation", kind=ev.kind, target=ev.target, detail=ev.detail)

    # -- admin surface -------------------------------------------------------------------

    def execute_eml(self, line: str) -> eml_lang.EmlResult:
        return eml_lang.run_line(self, line)

    def execute_wmi(self, service_id: int, script: str, subject_id: int | None = None):
        """Admin/bus entry to the script engine. The target must be
        registered; service callers need the adapt right."""
        if self.registry.get(service_id) is None:
            report = DirectiveReport()
            report.failures.append(f"service {service_id} is not registered")
            return False, report
        if subject_id is not None and not self.acm.check(subject_id, service_id, "adapt"):
            report = DirectiveReport()
            report.failures.append(
                f"subject {subject_id} lacks the adapt right on {service_id}"
            )
            return False, report
        ack, report = self.resources.execute_wmi(service_id, script, self.clock.now())
        self._emit_event("wmi", serviceID=service_id, ack=ack)
        return ack, report

    def registry_snapshot(self) -> list[dict]:
        return [
            {
                "serviceID": r.service_id,
                "protocol": r.protocol,
                "serviceIP": r.service_ip,
                "port": r.port,
                "registeredAt": r.registered_at,
                "lastHeartbeat": r.last_heartbeat,
                "online": r.online,
                "functions": [f.name for f in r.sdl.functions],
            }
            for r in sorted(self.registry.records(), key=lambda r: r.service_id)
        ]

    def health_snapshot(self) -> list[dict]:
        return [
            {"serviceID": s.service_id, "state": s.state, "since": s.since}
            for s in self.monitor.states()
        ]

    def metrics_snapshot(self) -> dict:
        return {
            "bus": self.bus.conservation(),
            "registry": len(self.registry),
            "audit": self.audit.summary(),
            "resources": self.resources.snapshot(),
        }

    def state_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.registry.state_digest().encode())
        h.update(self.acm.state_digest().encode())
        h.update(self.resources.state_digest().encode())
        return h.hexdigest()
