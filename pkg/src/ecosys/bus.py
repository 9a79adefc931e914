"""The message bus: storage, routing, transformation, and delivery.

Every submitted message becomes an envelope that terminates in exactly one
of Delivered, Quarantined, or Rejected. Delivery runs each envelope through
the security pipeline in the fixed order firewall, spam filter, access
check, then routes and hands the message to the destination's handler.
Failures retry with doubling backoff up to a cap, after which the envelope
is quarantined. Ordering is FIFO per (source, destination) pair: a later
message of a pair never overtakes an earlier one that is still queued.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ecl import EclMessage, EclParam, parse_ecl, serialize_ecl
from .registry import BUS_ID, ServiceRecord, ServiceRegistry, WILDCARD_ID
from .sdl import FunctionSig, PROTOCOLS, SdlDocument
from . import integration
from . import security

STATE_QUEUED = "Queued"
STATE_DELIVERED = "Delivered"
STATE_QUARANTINED = "Quarantined"
STATE_REJECTED = "Rejected"
TERMINAL_STATES = (STATE_DELIVERED, STATE_QUARANTINED, STATE_REJECTED)

MEDIATION_FUNCTION = "__mediate"
INTEGRATION_FUNCTION = "__integrate"
RESERVED_PREFIX = "__"


class BusError(Exception):
    pass


class QueueFull(BusError):
    pass


class UnsupportedProtocol(BusError):
    pass


class RouteError(BusError):
    """kind is one of UnknownDestination, NoProvider, Offline, NoHandler."""

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind


@dataclass
class BusEnvelope:
    message_id: str
    payload: EclMessage
    received_at: float
    attempts: int = 0
    state: str = STATE_QUEUED
    seq: int = 0
    next_attempt_at: float = 0.0
    peer_ip: str | None = None
    peer_port: int = 0
    response: EclMessage | None = None


@dataclass(frozen=True)
class DeliveryOutcome:
    message_id: str
    verdict_chain: tuple[tuple[str, str], ...]
    final_state: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "messageID": self.message_id,
            "verdictChain": [list(v) for v in self.verdict_chain],
            "finalState": self.final_state,
            "detail": self.detail,
        }


@dataclass
class SecurityPolicy:
    firewall_rules: list[security.FirewallRule] = field(default_factory=list)
    firewall_default: str = security.VERDICT_REJECT
    spam_rules: list[security.SpamRule] = field(default_factory=list)
    signatures: list[security.ThreatSignature] = field(default_factory=list)
    acm: security.AccessControlMatrix = field(default_factory=security.AccessControlMatrix)
    audit: security.AuditLog = field(default_factory=security.AuditLog)


class MessageBus:
    def __init__(
        self,
        registry: ServiceRegistry,
        policy: SecurityPolicy,
        clock,
        rng: random.Random | None = None,
        max_attempts: int = 3,
        queue_cap: int = 1024,
        backoff_base: float = 1.0,
        on_security_event=None,
    ):
        self.registry = registry
        self.policy = policy
        self.clock = clock
        self.rng = rng or random.Random()
        self.max_attempts = max_attempts
        self.queue_cap = queue_cap
        self.backoff_base = backoff_base
        self.on_security_event = on_security_event
        self.handlers: dict[int, object] = {}
        self.bus_handler = None  # serves functions addressed to the bus itself
        self.envelopes: list[BusEnvelope] = []
        self.outcomes: list[DeliveryOutcome] = []
        self._by_id: dict[str, BusEnvelope] = {}
        self._seen_ids: set[str] = set()
        self._seq = 0

    # -- intake --------------------------------------------------------------

    def submit(
        self,
        m: EclMessage,
        message_id: str | None = None,
        peer_ip: str | None = None,
        peer_port: int = 0,
    ) -> str:
        """Queue a message; replayed message IDs are rejected on the spot."""
        m.validate()
        now = self.clock.now()
        if message_id is None:
            message_id = f"{self.rng.getrandbits(128):032x}"
        self._seq += 1
        envelope = BusEnvelope(
            message_id=message_id,
            payload=m,
            received_at=now,
            seq=self._seq,
            peer_ip=peer_ip,
            peer_port=peer_port,
        )
        if message_id in self._seen_ids:
            envelope.state = STATE_REJECTED
            self.envelopes.append(envelope)
            self._finish(envelope, (), "duplicate messageID", now)
            return message_id
        if sum(1 for e in self.envelopes if e.state == STATE_QUEUED) >= self.queue_cap:
            self._seq -= 1
            raise QueueFull(f"bounded queue holds {self.queue_cap} envelopes")
        self._seen_ids.add(message_id)
        self.envelopes.append(envelope)
        self._by_id[message_id] = envelope
        return message_id

    # -- routing and transformation -------------------------------------------

    def route(self, m: EclMessage) -> ServiceRecord:
        """Resolve the destination record; wildcard destination 0 picks the
        best-scoring provider of the invoked function."""
        if m.destination_id == WILDCARD_ID:
            candidates = self.registry.find_by_function(m.function_invoked)
            if not candidates:
                raise RouteError("NoProvider", f"no online provider of {m.function_invoked!r}")
            query = SdlDocument(
                functions=(
                    FunctionSig(
                        name=m.function_invoked,
                        params=tuple(p.type for p in m.params),
                        returns=m.return_type,
                    ),
                )
            )
            best = max(
                candidates,
                key=lambda r: (integration.match_score(query, r.sdl), -r.service_id),
            )
            return best
        record = self.registry.get(m.destination_id)
        if record is None:
            raise RouteError("UnknownDestination", f"no record for ID {m.destination_id}")
        if not record.online:
            raise RouteError("Offline", f"service {m.destination_id} is offline")
        return record

    def transform(self, m: EclMessage, target_protocol: str) -> EclMessage:
        """Identity for the native protocol; other targets wrap the message
        in a stub mediation envelope that untransform undoes."""
        if target_protocol not in PROTOCOLS:
            raise UnsupportedProtocol(f"unknown protocol {target_protocol!r}")
        if target_protocol == "ECL":
            return m
        return EclMessage(
            source_ip=m.source_ip,
            destination_ip=m.destination_ip,
            source_id=m.source_id,
            destination_id=m.destination_id,
            function_invoked=MEDIATION_FUNCTION,
            params=(
                EclParam(target_protocol, "string"),
                EclParam(serialize_ecl(m), "string"),
            ),
            return_type="string",
            stamp=m.stamp,
            version=m.version,
            kind=m.kind,
            status=m.status,
            return_value=m.return_value,
        )

    def untransform(self, m: EclMessage) -> EclMessage:
        if m.function_invoked != MEDIATION_FUNCTION:
            return m
        return parse_ecl(m.params[1].value)

    # -- delivery -------------------------------------------------------------

    def pump(self, now: float | None = None) -> list[DeliveryOutcome]:
        """One pass over the queue in submission order. Envelopes of a pair
        whose head is backing off are skipped to preserve pair FIFO."""
        if now is None:
            now = self.clock.now()
        outcomes: list[DeliveryOutcome] = []
        blocked_pairs: set[tuple[int, int]] = set()
        for envelope in list(self.envelopes):
            if envelope.state != STATE_QUEUED:
                continue
            pair = (envelope.payload.source_id, envelope.payload.destination_id)
            if pair in blocked_pairs:
                continue
            if envelope.next_attempt_at > now:
                blocked_pairs.add(pair)
                continue
            outcome = self._attempt(envelope, now)
            if outcome is None:
                blocked_pairs.add(pair)
            else:
                outcomes.append(outcome)
        return outcomes

    def _attempt(self, envelope: BusEnvelope, now: float) -> DeliveryOutcome | None:
        m = envelope.payload
        chain: list[tuple[str, str]] = []

        # firewall (connection metadata plus the message header); loopback
        # peers carry virtual addresses, so only a real remote mismatch is
        # treated as spoofing
        if (
            envelope.peer_ip is not None
            and not envelope.peer_ip.startswith("127.")
            and envelope.peer_ip != m.source_ip
        ):
            chain.append(("firewall", security.VERDICT_REJECT))
            self._emit("spoof", m, f"peer {envelope.peer_ip} declared {m.source_ip}", now)
            return self._terminal(envelope, chain, STATE_REJECTED, "source address mismatch", now)
        dest_record = self.registry.get(m.destination_id)
        meta = security.PacketMeta(
            src_ip=envelope.peer_ip or m.source_ip,
            dst_ip=m.destination_ip,
            src_port=envelope.peer_port,
            dst_port=dest_record.port if dest_record else 0,
            service_id=m.destination_id,
        )
        verdict, rule_order = security.firewall_eval(
            meta, self.policy.firewall_rules, self.policy.firewall_default
        )
        chain.append(("firewall", verdict))
        if verdict != security.VERDICT_ACCEPT:
            detail = f"rule {rule_order}" if rule_order is not None else "default verdict"
            return self._terminal(envelope, chain, STATE_REJECTED, f"firewall {detail}", now)

        # spam filter, then content scan against the threat signatures
        spam_verdict, spam_rule = security.filter_spam(m, self.policy.spam_rules, now)
        if spam_verdict == "quarantine":
            chain.append(("spam", "quarantine"))
            return self._terminal(envelope, chain, STATE_QUARANTINED, f"spam rule {spam_rule}", now)
        findings = security.scan_threat(
            serialize_ecl(m).encode("utf-8"), self.policy.signatures
        )
        if findings:
            chain.append(("spam", "quarantine"))
            first = findings[0]
            self._emit(
                "threat", m, f"signature {first.signature_id} ({first.category})", now
            )
            return self._terminal(
                envelope,
                chain,
                STATE_QUARANTINED,
                f"threat signature {first.signature_id}",
                now,
            )
        chain.append(("spam", "pass"))

        # access control; bus-reserved functions are admission paths and skip it
        if m.destination_id == BUS_ID and m.function_invoked.startswith(RESERVED_PREFIX):
            chain.append(("acm", "skip"))
        elif self.policy.acm.check(m.source_id, m.destination_id, "invoke"):
            chain.append(("acm", security.VERDICT_ACCEPT))
        else:
            chain.append(("acm", security.VERDICT_REJECT))
            self._emit(
                "acm-denied",
                m,
                f"subject {m.source_id} lacks invoke on {m.destination_id}",
                now,
            )
            return self._terminal(envelope, chain, STATE_REJECTED, "access denied", now)

        # route and deliver
        try:
            if m.destination_id == BUS_ID:
                if self.bus_handler is None:
                    raise RouteError("NoHandler", "no bus handler installed")
                response = self.bus_handler(m, now)
                resolved_id = BUS_ID
                protocol = "ECL"
            else:
                record = self.route(m)
                handler = self.handlers.get(record.service_id)
                if handler is None:
                    raise RouteError("NoHandler", f"service {record.service_id} has no handler")
                inbound = self.transform(self.transform(m, record.protocol), "ECL")
                inbound = self.untransform(inbound)
                response = handler(inbound, now)
                resolved_id = record.service_id
                protocol = record.protocol
        except Exception as exc:  # service faults and route errors both retry
            kind = exc.kind if isinstance(exc, RouteError) else "HandlerError"
            detail = str(exc) if isinstance(exc, RouteError) else f"exception {type(exc).__name__}: {exc}"
            envelope.attempts += 1
            if envelope.attempts >= self.max_attempts:
                chain.append(("route", f"fail:{kind}"))
                return self._terminal(
                    envelope,
                    chain,
                    STATE_QUARANTINED,
                    f"gave up after {envelope.attempts} attempts: {detail}",
                    now,
                )
            envelope.next_attempt_at = now + self.backoff_base * (2 ** (envelope.attempts - 1))
            return None

        chain.append(("route", "deliver"))
        envelope.attempts += 1
        envelope.response = response
        envelope.state = STATE_DELIVERED
        bytes_served = len(serialize_ecl(response).encode("utf-8")) if response else 0
        outcome = DeliveryOutcome(
            envelope.message_id, tuple(chain), STATE_DELIVERED, f"service={resolved_id}"
        )
        self.outcomes.append(outcome)
        self.policy.audit.log_event(
            security.AuditEntry(
                timestamp=now,
                service_id=resolved_id,
                peer_ip=envelope.peer_ip or m.source_ip,
                function_invoked=m.function_invoked,
                protocol=protocol,
                bytes_served=bytes_served,
                user_agent=f"ecl/{m.version}",
                outcome="delivered",
                unit_verdicts=tuple(chain),
            )
        )
        return outcome

    def _terminal(
        self,
        envelope: BusEnvelope,
        chain: list[tuple[str, str]],
        state: str,
        detail: str,
        now: float,
    ) -> DeliveryOutcome:
        envelope.state = state
        return self._finish(envelope, tuple(chain), detail, now)

    def _finish(
        self,
        envelope: BusEnvelope,
        chain: tuple[tuple[str, str], ...],
        detail: str,
        now: float,
    ) -> DeliveryOutcome:
        m = envelope.payload
        outcome = DeliveryOutcome(envelope.message_id, chain, envelope.state, detail)
        self.outcomes.append(outcome)
        self.policy.audit.log_event(
            security.AuditEntry(
                timestamp=now,
                service_id=m.destination_id,
                peer_ip=envelope.peer_ip or m.source_ip,
                function_invoked=m.function_invoked,
                protocol="ECL",
                bytes_served=0,
                user_agent=f"ecl/{m.version}",
                outcome=envelope.state.lower(),
                unit_verdicts=chain,
                detail=detail,
            )
        )
        return outcome

    def _emit(self, kind: str, m: EclMessage, detail: str, now: float) -> None:
        if self.on_security_event is not None:
            self.on_security_event(kind, m, detail, now)

    # -- introspection ----------------------------------------------------------

    def response_for(self, message_id: str) -> EclMessage | None:
        envelope = self._by_id.get(message_id)
        return envelope.response if envelope else None

    def envelope_for(self, message_id: str) -> BusEnvelope | None:
        return self._by_id.get(message_id)

    def conservation(self) -> dict[str, int]:
        counts = {"submitted": len(self.envelopes)}
        for state in (STATE_QUEUED,) + TERMINAL_STATES:
            counts[state.lower()] = sum(1 for e in self.envelopes if e.state == state)
        return counts

    def conserved(self) -> bool:
        c = self.conservation()
        return c["submitted"] == c["queued"] + c["delivered"] + c["quarantined"] + c["rejected"]
