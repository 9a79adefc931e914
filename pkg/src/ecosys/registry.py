"""The service registry: the authoritative table of integrated services.

Every mutation is appended to a plain-text log (`INSERT|REMOVE|HEARTBEAT
<serviceID> <payload-as-canonical-XML>`, one line each) and the table is
rebuilt from that log on startup, so a restarted runtime keeps its
registrations. HEARTBEAT lines carry the online flag, which is how a kill
(online=false) survives a restart too.
"""
from __future__ import annotations

import hashlib
import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

from .sdl import SdlDocument, sdl_from_xml, sdl_to_xml

# IDs 0 and 1 are reserved: 0 is the wildcard destination, 1 is the bus itself.
RESERVED_IDS = 2
WILDCARD_ID = 0
BUS_ID = 1


class RegistryError(Exception):
    pass


class DuplicateEndpoint(RegistryError):
    """The same IP:port is already registered."""


class UnknownService(RegistryError, KeyError):
    """No record with that service ID."""


@dataclass
class ServiceRecord:
    service_id: int
    protocol: str
    service_ip: str
    port: int
    sdl: SdlDocument
    registered_at: float
    last_heartbeat: float
    online: bool = True


def record_to_xml(r: ServiceRecord) -> str:
    el = ET.Element(
        "service",
        {
            "id": str(r.service_id),
            "protocol": r.protocol,
            "ip": r.service_ip,
            "port": str(r.port),
            "registeredAt": repr(r.registered_at),
            "lastHeartbeat": repr(r.last_heartbeat),
            "online": "true" if r.online else "false",
        },
    )
    el.append(ET.fromstring(sdl_to_xml(r.sdl)))
    return ET.tostring(el, encoding="unicode")


def record_from_xml(text: str) -> ServiceRecord:
    el = ET.fromstring(text)
    sdl_el = el.find("sdl")
    return ServiceRecord(
        service_id=int(el.attrib["id"]),
        protocol=el.attrib["protocol"],
        service_ip=el.attrib["ip"],
        port=int(el.attrib["port"]),
        sdl=sdl_from_xml(ET.tostring(sdl_el, encoding="unicode")),
        registered_at=float(el.attrib["registeredAt"]),
        last_heartbeat=float(el.attrib["lastHeartbeat"]),
        online=el.attrib["online"] == "true",
    )


class ServiceRegistry:
    def __init__(self, rng: random.Random | None = None, log_path: str | Path | None = None):
        self._rng = rng or random.Random()
        self._records: dict[int, ServiceRecord] = {}
        self._endpoints: dict[tuple[str, int], int] = {}
        self._log_path = Path(log_path) if log_path else None
        if self._log_path and self._log_path.exists():
            self._replay(self._log_path)

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[ServiceRecord]:
        return list(self._records.values())

    def insert_record(
        self,
        protocol: str,
        service_ip: str,
        port: int,
        sdl: SdlDocument,
        now: float,
    ) -> ServiceRecord:
        """Store a fresh record under a collision-free random 64-bit ID."""
        endpoint = (service_ip, port)
        if endpoint in self._endpoints:
            raise DuplicateEndpoint(f"{service_ip}:{port} is already registered")
        service_id = self._rng.getrandbits(64)
        while service_id < RESERVED_IDS or service_id in self._records:
            service_id = self._rng.getrandbits(64)
        record = ServiceRecord(
            service_id=service_id,
            protocol=protocol,
            service_ip=service_ip,
            port=port,
            sdl=sdl,
            registered_at=now,
            last_heartbeat=now,
            online=True,
        )
        self._records[service_id] = record
        self._endpoints[endpoint] = service_id
        self._log("INSERT", service_id, record_to_xml(record))
        return record

    def lookup(self, service_id: int) -> ServiceRecord:
        try:
            return self._records[service_id]
        except KeyError:
            raise UnknownService(service_id) from None

    def get(self, service_id: int) -> ServiceRecord | None:
        return self._records.get(service_id)

    def remove(self, service_id: int) -> bool:
        record = self._records.pop(service_id, None)
        if record is None:
            return False
        self._endpoints.pop((record.service_ip, record.port), None)
        self._log("REMOVE", service_id, "<removed />")
        return True

    def find_by_function(self, name: str) -> list[ServiceRecord]:
        """Online records offering a function with exactly this name, by ID."""
        hits = [
            r
            for r in self._records.values()
            if r.online and r.sdl.find(name) is not None
        ]
        return sorted(hits, key=lambda r: r.service_id)

    def touch(self, service_id: int, now: float, online: bool = True) -> bool:
        """Refresh a heartbeat; never moves lastHeartbeat backwards."""
        record = self._records.get(service_id)
        if record is None:
            return False
        record.last_heartbeat = max(record.last_heartbeat, now)
        record.online = online
        self._log(
            "HEARTBEAT",
            service_id,
            f'<heartbeat at="{record.last_heartbeat!r}" online="{"true" if online else "false"}" />',
        )
        return True

    def mark_offline(self, service_id: int) -> bool:
        record = self._records.get(service_id)
        if record is None:
            return False
        record.online = False
        self._log(
            "HEARTBEAT",
            service_id,
            f'<heartbeat at="{record.last_heartbeat!r}" online="false" />',
        )
        return True

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for sid in sorted(self._records):
            h.update(record_to_xml(self._records[sid]).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def _log(self, verb: str, service_id: int, payload_xml: str) -> None:
        if self._log_path is None:
            return
        self._log_path.parent.mkdir(parents=True, exist_ok=True)
        with self._log_path.open("a", encoding="utf-8") as f:
            f.write(f"{verb} {service_id} {payload_xml}\n")

    def _replay(self, path: Path) -> None:
        with path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                verb, sid_text, payload = line.split(" ", 2)
                sid = int(sid_text)
                if verb == "INSERT":
                    record = record_from_xml(payload)
                    self._records[sid] = record
                    self._endpoints[(record.service_ip, record.port)] = sid
                elif verb == "REMOVE":
                    record = self._records.pop(sid, None)
                    if record is not None:
                        self._endpoints.pop((record.service_ip, record.port), None)
                elif verb == "HEARTBEAT":
                    record = self._records.get(sid)
                    if record is not None:
                        el = ET.fromstring(payload)
                        record.last_heartbeat = float(el.attrib["at"])
                        record.online = el.attrib["online"] == "true"
                else:
                    raise RegistryError(f"unknown log verb {verb!r}")
