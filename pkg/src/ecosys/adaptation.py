"""Resource adaptation over virtual host profiles.

Scripts are line-oriented (`set <resource> <target> <value>` / `get
<resource> <target>`) and run transactionally: the whole script applies or
none of it does, answered by a boolean ack. A watermark policy also walks
usage metrics each tick and grows quotas, adds cores, suggests replicas,
or drops a host into reduced power.
"""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

POWER_NORMAL = "Normal"
POWER_REDUCED = "Reduced"
POWER_MODES = (POWER_NORMAL, POWER_REDUCED)

RESOURCES = ("cpu", "memory", "disk", "bandwidth", "power")


class AdaptationError(Exception):
    pass


class ScriptSyntaxError(AdaptationError):
    def __init__(self, line_no: int, line: str, why: str):
        super().__init__(f"line {line_no}: {why}: {line!r}")
        self.line_no = line_no


class CapacityError(AdaptationError):
    """A host cannot fit the requested assignment."""


@dataclass
class ResourceQuota:
    assigned: int
    capacity: int


@dataclass
class HostResourceProfile:
    host_id: str
    cpu_cores: ResourceQuota
    memory_mb: ResourceQuota
    disk_quota_mb: ResourceQuota
    bandwidth_mbps: ResourceQuota
    power_mode: str = POWER_NORMAL


@dataclass
class ServiceAllocation:
    service_id: int
    host_id: str
    cpu_cores: int
    memory_mb: int
    disk_quota_mb: int
    bandwidth_mbps: int


# Footprint a freshly spawned service instance reserves on its host.
DEFAULT_FOOTPRINT = {"cpu": 1, "memory": 256, "disk": 512, "bandwidth": 10}

_RESOURCE_FIELDS = {
    "cpu": "cpu_cores",
    "memory": "memory_mb",
    "disk": "disk_quota_mb",
    "bandwidth": "bandwidth_mbps",
}


@dataclass(frozen=True)
class WmiDirective:
    action: str              # set | get
    resource: str
    target: str              # service ID or host ID, as written
    value: int | str | None = None

    def as_line(self) -> str:
        if self.action == "get":
            return f"get {self.resource} {self.target}"
        return f"set {self.resource} {self.target} {self.value}"


@dataclass
class DirectiveReport:
    applied: list[WmiDirective] = field(default_factory=list)
    reads: list[tuple[WmiDirective, int | str]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "applied": [d.as_line() for d in self.applied],
            "reads": [[d.as_line(), v] for d, v in self.reads],
            "failures": list(self.failures),
        }


def parse_script(text: str) -> list[WmiDirective]:
    directives: list[WmiDirective] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        action = parts[0].lower()
        if action == "set":
            if len(parts) != 4:
                raise ScriptSyntaxError(line_no, raw, "set needs <resource> <target> <value>")
            resource = parts[1].lower()
            if resource not in RESOURCES:
                raise ScriptSyntaxError(line_no, raw, f"unknown resource {resource!r}")
            if resource == "power":
                value: int | str = parts[3].capitalize()
                if value not in POWER_MODES:
                    raise ScriptSyntaxError(line_no, raw, f"power mode must be one of {POWER_MODES}")
            else:
                try:
                    value = int(parts[3])
                except ValueError:
                    raise ScriptSyntaxError(line_no, raw, "value must be an integer") from None
            directives.append(WmiDirective("set", resource, parts[2], value))
        elif action == "get":
            if len(parts) != 3:
                raise ScriptSyntaxError(line_no, raw, "get needs <resource> <target>")
            resource = parts[1].lower()
            if resource not in RESOURCES:
                raise ScriptSyntaxError(line_no, raw, f"unknown resource {resource!r}")
            directives.append(WmiDirective("get", resource, parts[2]))
        else:
            raise ScriptSyntaxError(line_no, raw, f"unknown action {action!r}")
    return directives


@dataclass(frozen=True)
class AdaptationEvent:
    kind: str        # starvation | replica-suggested | power-reduced | power-normal
    target: str
    detail: str
    at: float


@dataclass(frozen=True)
class ServiceMetrics:
    service_id: int
    disk_used_mb: int = 0
    cpu_util: float = 0.0
    mem_util: float = 0.0
    bw_util: float = 0.0
    queue_depth: int = 0


class ResourceManager:
    """Owns the virtual host profiles and per-service assignments, and
    enforces that assignments never exceed host capacity."""

    def __init__(
        self,
        disk_high: float = 0.80,
        disk_grow: float = 0.25,
        cpu_high: float = 0.90,
        idle_low: float = 0.05,
        idle_ticks: int = 5,
        queue_threshold: int = 10,
        queue_sustain: int = 3,
    ):
        self.hosts: dict[str, HostResourceProfile] = {}
        self.allocations: dict[int, ServiceAllocation] = {}
        self.events: list[AdaptationEvent] = []
        self.disk_high = disk_high
        self.disk_grow = disk_grow
        self.cpu_high = cpu_high
        self.idle_low = idle_low
        self.idle_ticks = idle_ticks
        self.queue_threshold = queue_threshold
        self.queue_sustain = queue_sustain
        self._queue_streak: dict[int, int] = {}
        self._idle_streak: dict[str, int] = {}

    def add_host(
        self,
        host_id: str,
        cpu: int = 8,
        memory_mb: int = 8192,
        disk_mb: int = 65536,
        bandwidth_mbps: int = 1000,
    ) -> HostResourceProfile:
        profile = HostResourceProfile(
            host_id=host_id,
            cpu_cores=ResourceQuota(0, cpu),
            memory_mb=ResourceQuota(0, memory_mb),
            disk_quota_mb=ResourceQuota(0, disk_mb),
            bandwidth_mbps=ResourceQuota(0, bandwidth_mbps),
        )
        self.hosts[host_id] = profile
        return profile

    def can_fit(self, host_id: str, footprint: dict[str, int] | None = None) -> bool:
        footprint = footprint or DEFAULT_FOOTPRINT
        host = self.hosts.get(host_id)
        if host is None:
            return False
        for resource, amount in footprint.items():
            quota: ResourceQuota = getattr(host, _RESOURCE_FIELDS[resource])
            if quota.assigned + amount > quota.capacity:
                return False
        return True

    def allocate(self, service_id: int, host_id: str, footprint: dict[str, int] | None = None) -> ServiceAllocation:
        footprint = footprint or DEFAULT_FOOTPRINT
        if host_id not in self.hosts:
            raise CapacityError(f"unknown host {host_id!r}")
        if not self.can_fit(host_id, footprint):
            raise CapacityError(f"host {host_id!r} cannot fit {footprint}")
        host = self.hosts[host_id]
        alloc = ServiceAllocation(
            service_id=service_id,
            host_id=host_id,
            cpu_cores=footprint["cpu"],
            memory_mb=footprint["memory"],
            disk_quota_mb=footprint["disk"],
            bandwidth_mbps=footprint["bandwidth"],
        )
        for resource, fld in _RESOURCE_FIELDS.items():
            getattr(host, fld).assigned += footprint[resource]
        self.allocations[service_id] = alloc
        return alloc

    def release(self, service_id: int) -> bool:
        alloc = self.allocations.pop(service_id, None)
        if alloc is None:
            return False
        host = self.hosts[alloc.host_id]
        for fld in _RESOURCE_FIELDS.values():
            getattr(host, fld).assigned -= getattr(alloc, fld)
        self._queue_streak.pop(service_id, None)
        return True

    # -- script execution ---------------------------------------------------

    def execute_wmi(self, service_id: int, script: str, now: float = 0.0) -> tuple[bool, DirectiveReport]:
        """Run a script for a service, all-or-nothing. The ack is True only
        when every directive applied."""
        report = DirectiveReport()
        try:
            directives = parse_script(script)
        except ScriptSyntaxError as exc:
            report.failures.append(str(exc))
            return False, report
        snapshot = copy.deepcopy((self.hosts, self.allocations))
        for directive in directives:
            try:
                self._apply(directive, default_service=service_id, report=report)
            except AdaptationError as exc:
                self.hosts, self.allocations = snapshot
                report.applied.clear()
                report.reads.clear()
                report.failures.append(str(exc))
                return False, report
        return True, report

    def _apply(self, d: WmiDirective, default_service: int, report: DirectiveReport) -> None:
        if d.resource == "power":
            host = self.hosts.get(d.target)
            if host is None:
                raise CapacityError(f"unknown host {d.target!r}")
            if d.action == "get":
                report.reads.append((d, host.power_mode))
                return
            host.power_mode = str(d.value)
            report.applied.append(d)
            return
        try:
            sid = int(d.target)
        except ValueError:
            raise CapacityError(f"service target must be numeric, got {d.target!r}") from None
        alloc = self.allocations.get(sid)
        if alloc is None:
            raise CapacityError(f"service {sid} has no allocation")
        fld = _RESOURCE_FIELDS[d.resource]
        if d.action == "get":
            report.reads.append((d, getattr(alloc, fld)))
            return
        value = int(d.value)  # type: ignore[arg-type]
        if value < 0:
            raise CapacityError(f"{d.resource} assignment must be non-negative, got {value}")
        host = self.hosts[alloc.host_id]
        quota: ResourceQuota = getattr(host, fld)
        new_assigned = quota.assigned - getattr(alloc, fld) + value
        if new_assigned > quota.capacity:
            raise CapacityError(
                f"{d.resource} request of {value} for service {sid} exceeds host "
                f"{alloc.host_id!r} capacity ({quota.assigned}/{quota.capacity} assigned)"
            )
        quota.assigned = new_assigned
        setattr(alloc, fld, value)
        report.applied.append(d)

    # -- watermark policy ---------------------------------------------------

    def adapt_tick(self, metrics: dict[int, ServiceMetrics], now: float = 0.0) -> list[WmiDirective]:
        """Apply the watermark policy to one usage snapshot. Deterministic:
        services are visited in ascending ID order, hosts in name order."""
        issued: list[WmiDirective] = []
        for sid in sorted(metrics):
            m = metrics[sid]
            alloc = self.allocations.get(sid)
            if alloc is None:
                continue
            host = self.hosts[alloc.host_id]

            quota = alloc.disk_quota_mb
            if quota > 0 and m.disk_used_mb / quota > self.disk_high:
                target = int(quota * (1 + self.disk_grow))
                free = host.disk_quota_mb.capacity - host.disk_quota_mb.assigned
                capped = min(target, quota + free)
                if capped > quota:
                    d = WmiDirective("set", "disk", str(sid), capped)
                    self._apply(d, sid, DirectiveReport())
                    issued.append(d)
                else:
                    self.events.append(
                        AdaptationEvent(
                            "starvation",
                            str(sid),
                            f"disk at {m.disk_used_mb}/{quota} MB but host {host.host_id!r} is full",
                            now,
                        )
                    )

            if m.cpu_util > self.cpu_high:
                free_cores = host.cpu_cores.capacity - host.cpu_cores.assigned
                if free_cores >= 1:
                    d = WmiDirective("set", "cpu", str(sid), alloc.cpu_cores + 1)
                    self._apply(d, sid, DirectiveReport())
                    issued.append(d)

            if m.queue_depth > self.queue_threshold:
                streak = self._queue_streak.get(sid, 0) + 1
                if streak >= self.queue_sustain:
                    self.events.append(
                        AdaptationEvent(
                            "replica-suggested",
                            str(sid),
                            f"queue depth {m.queue_depth} above {self.queue_threshold} "
                            f"for {streak} ticks",
                            now,
                        )
                    )
                    streak = 0
                self._queue_streak[sid] = streak
            else:
                self._queue_streak[sid] = 0

        issued.extend(self._power_policy(metrics, now))
        return issued

    def _service_idle(self, m: ServiceMetrics, alloc: ServiceAllocation) -> bool:
        disk_frac = m.disk_used_mb / alloc.disk_quota_mb if alloc.disk_quota_mb else 0.0
        return all(
            frac < self.idle_low
            for frac in (m.cpu_util, m.mem_util, m.bw_util, disk_frac)
        )

    def _power_policy(self, metrics: dict[int, ServiceMetrics], now: float) -> list[WmiDirective]:
        issued: list[WmiDirective] = []
        for host_id in sorted(self.hosts):
            host = self.hosts[host_id]
            residents = [a for a in self.allocations.values() if a.host_id == host_id]
            if not residents:
                continue
            idle = all(
                a.service_id in metrics and self._service_idle(metrics[a.service_id], a)
                for a in residents
            )
            if idle:
                streak = self._idle_streak.get(host_id, 0) + 1
                self._idle_streak[host_id] = streak
                if streak >= self.idle_ticks and host.power_mode == POWER_NORMAL:
                    host.power_mode = POWER_REDUCED
                    issued.append(WmiDirective("set", "power", host_id, POWER_REDUCED))
                    self.events.append(
                        AdaptationEvent("power-reduced", host_id, f"idle for {streak} ticks", now)
                    )
            else:
                self._idle_streak[host_id] = 0
                if host.power_mode == POWER_REDUCED:
                    host.power_mode = POWER_NORMAL
                    issued.append(WmiDirective("set", "power", host_id, POWER_NORMAL))
                    self.events.append(AdaptationEvent("power-normal", host_id, "activity resumed", now))
        return issued

    # -- introspection ------------------------------------------------------

    def conservation_ok(self) -> bool:
        """Sum of assignments on each host equals the host's assigned figure
        and stays within capacity."""
        for host_id, host in self.hosts.items():
            for resource, fld in _RESOURCE_FIELDS.items():
                total = sum(
                    getattr(a, fld) for a in self.allocations.values() if a.host_id == host_id
                )
                quota: ResourceQuota = getattr(host, fld)
                if total != quota.assigned or not 0 <= quota.assigned <= quota.capacity:
                    return False
        return True

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for host_id in sorted(self.hosts):
            host = self.hosts[host_id]
            h.update(
                f"{host_id} {host.cpu_cores} {host.memory_mb} {host.disk_quota_mb} "
                f"{host.bandwidth_mbps} {host.power_mode}\n".encode("utf-8")
            )
        for sid in sorted(self.allocations):
            h.update(f"{sid} {self.allocations[sid]}\n".encode("utf-8"))
        return h.hexdigest()

    def snapshot(self) -> dict:
        return {
            "hosts": {
                host_id: {
                    "cpu": [host.cpu_cores.assigned, host.cpu_cores.capacity],
                    "memory": [host.memory_mb.assigned, host.memory_mb.capacity],
                    "disk": [host.disk_quota_mb.assigned, host.disk_quota_mb.capacity],
                    "bandwidth": [host.bandwidth_mbps.assigned, host.bandwidth_mbps.capacity],
                    "powerMode": host.power_mode,
                }
                for host_id, host in sorted(self.hosts.items())
            },
            "allocations": {
                str(sid): {
                    "host": a.host_id,
                    "cpu": a.cpu_cores,
                    "memory": a.memory_mb,
                    "disk": a.disk_quota_mb,
                    "bandwidth": a.bandwidth_mbps,
                }
                for sid, a in sorted(self.allocations.items())
            },
        }
