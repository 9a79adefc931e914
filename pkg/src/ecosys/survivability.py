"""Per-service health state machine and recovery orchestration.

Each service walks Good / Vulnerable / Fault / Recovery. A policy violation
makes it Vulnerable, an exploited vulnerability makes it Fault, and recovery
brings it back to Good. Event/state pairs outside the legal relation leave
the state untouched and are recorded as ignored.
"""
from __future__ import annotations

from dataclasses import dataclass

GOOD = "Good"
VULNERABLE = "Vulnerable"
FAULT = "Fault"
RECOVERY = "Recovery"
STATES = (GOOD, VULNERABLE, FAULT, RECOVERY)

EV_POLICY_VIOLATION = "PolicyViolation"
EV_EXPLOIT_DETECTED = "ExploitDetected"
EV_RECOVERY_STARTED = "RecoveryStarted"
EV_RECOVERY_COMPLETED = "RecoveryCompleted"
EV_VULNERABILITY_CLEARED = "VulnerabilityCleared"
EVENTS = (
    EV_POLICY_VIOLATION,
    EV_EXPLOIT_DETECTED,
    EV_RECOVERY_STARTED,
    EV_RECOVERY_COMPLETED,
    EV_VULNERABILITY_CLEARED,
)

TRANSITIONS: dict[tuple[str, str], str] = {
    (GOOD, EV_POLICY_VIOLATION): VULNERABLE,
    (VULNERABLE, EV_EXPLOIT_DETECTED): FAULT,
    (VULNERABLE, EV_VULNERABILITY_CLEARED): GOOD,
    (FAULT, EV_RECOVERY_STARTED): RECOVERY,
    (RECOVERY, EV_RECOVERY_COMPLETED): GOOD,
}


class SurvivabilityError(Exception):
    pass


class NotInFault(SurvivabilityError):
    """Recovery planning needs a faulted service."""


class NoStoredSdl(SurvivabilityError):
    """No description snapshot exists to reintegrate from."""


@dataclass(frozen=True)
class HealthEvent:
    kind: str
    evidence: str = ""


@dataclass(frozen=True)
class HealthState:
    service_id: int
    state: str = GOOD
    since: float = 0.0
    history: tuple[tuple[str, str, str, float], ...] = ()


def transition(s: HealthState, e: HealthEvent, now: float = 0.0) -> HealthState:
    """Total function: illegal (state, event) pairs return the state as-is."""
    nxt = TRANSITIONS.get((s.state, e.kind))
    if nxt is None:
        return s
    return HealthState(
        service_id=s.service_id,
        state=nxt,
        since=now,
        history=s.history + ((e.kind, s.state, nxt, now),),
    )


def replay_history(service_id: int, history: tuple[tuple[str, str, str, float], ...]) -> HealthState:
    """Fold a history from Good; used to check the append-only invariant."""
    s = HealthState(service_id=service_id)
    for event_kind, _from, _to, at in history:
        s = transition(s, HealthEvent(event_kind), at)
    return s


@dataclass(frozen=True)
class RecoveryAction:
    kind: str  # quarantine | replicate-twin | reintegrate | emit-event
    target: int
    event: str = ""


class HealthMonitor:
    """Tracks one state machine per service and the snapshots recovery
    needs. Vulnerable services with a quiet stretch auto-clear to Good."""

    def __init__(self, quiet_period: float = 30.0, on_transition=None):
        self.quiet_period = quiet_period
        self.on_transition = on_transition
        self._states: dict[int, HealthState] = {}
        self._last_event_at: dict[int, float] = {}
        self.ignored: list[tuple[int, str, str, float]] = []
        self._sdl_snapshots: dict[int, tuple] = {}  # sid -> (sdl, ip, protocol)

    def track(self, service_id: int, now: float) -> None:
        if service_id not in self._states:
            self._states[service_id] = HealthState(service_id=service_id, since=now)
            self._last_event_at[service_id] = now

    def drop(self, service_id: int) -> None:
        self._states.pop(service_id, None)
        self._last_event_at.pop(service_id, None)
        self._sdl_snapshots.pop(service_id, None)

    def restore(self, state: HealthState | None, now: float) -> None:
        """Reinstate a dropped state machine so an in-flight recovery plan
        can finish for an identity that just left the registry."""
        if state is None:
            return
        self._states[state.service_id] = state
        self._last_event_at[state.service_id] = now

    def store_sdl(self, service_id: int, sdl, service_ip: str, protocol: str) -> None:
        self._sdl_snapshots[service_id] = (sdl, service_ip, protocol)

    def sdl_snapshot(self, service_id: int):
        return self._sdl_snapshots.get(service_id)

    def state_of(self, service_id: int) -> HealthState | None:
        return self._states.get(service_id)

    def states(self) -> list[HealthState]:
        return [self._states[sid] for sid in sorted(self._states)]

    def apply(self, service_id: int, event: HealthEvent, now: float) -> HealthState:
        self.track(service_id, now)
        old = self._states[service_id]
        new = transition(old, event, now)
        self._last_event_at[service_id] = now
        if new is old:
            self.ignored.append((service_id, event.kind, old.state, now))
            return old
        self._states[service_id] = new
        if self.on_transition is not None:
            self.on_transition(service_id, old.state, new.state, event, now)
        return new

    def tick(self, now: float) -> list[int]:
        """Auto-clear vulnerable services whose quiet period elapsed."""
        cleared = []
        for sid in sorted(self._states):
            s = self._states[sid]
            if s.state == VULNERABLE and now - self._last_event_at[sid] >= self.quiet_period:
                self.apply(sid, HealthEvent(EV_VULNERABILITY_CLEARED, "quiet period elapsed"), now)
                cleared.append(sid)
        return cleared


def recovery_plan(monitor: HealthMonitor, registry, service_id: int) -> list[RecoveryAction]:
    """Ordered actions that bring a faulted service back: wall it off,
    replicate a healthy twin when one exists, reintegrate from the stored
    description, then mark recovery started and completed."""
    state = monitor.state_of(service_id)
    if state is None or state.state != FAULT:
        raise NotInFault(f"service {service_id} is not in {FAULT}")
    snapshot = monitor.sdl_snapshot(service_id)
    if snapshot is None:
        raise NoStoredSdl(f"no stored description for service {service_id}")
    sdl = snapshot[0]
    plan = [RecoveryAction("quarantine", service_id)]
    twin = _find_good_twin(monitor, registry, service_id, sdl)
    if twin is not None:
        plan.append(RecoveryAction("replicate-twin", twin))
    plan.append(RecoveryAction("reintegrate", service_id))
    plan.append(RecoveryAction("emit-event", service_id, EV_RECOVERY_STARTED))
    plan.append(RecoveryAction("emit-event", service_id, EV_RECOVERY_COMPLETED))
    return plan


def _find_good_twin(monitor: HealthMonitor, registry, service_id: int, sdl) -> int | None:
    """A twin offers the identical signature set (descriptions may differ)."""
    for record in sorted(registry.records(), key=lambda r: r.service_id):
        if record.service_id == service_id or not record.online:
            continue
        if record.sdl.functions != sdl.functions:
            continue
        twin_state = monitor.state_of(record.service_id)
        if twin_state is not None and twin_state.state == GOOD:
            return record.service_id
    return None
