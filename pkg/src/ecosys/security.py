"""Security suite for the bus: firewall, spam filter, threat scanner,
authenticated message encryption, access control matrix, and the audit log.

Everything here is deliberately policy-as-data: rule tables and the rights
matrix are plain values the event loop swaps atomically, and the evaluation
functions are pure so they can be oracle-tested.
"""
from __future__ import annotations

import hashlib
import ipaddress
import json
import os
import random
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .ecl import EclMessage, serialize_ecl

VERDICT_ACCEPT = "accept"
VERDICT_REJECT = "reject"

RIGHTS = ("invoke", "manage", "adapt", "read-log")

THREAT_CATEGORIES = ("virus", "spyware", "trojan", "backdoor", "dos", "spoof")

SPAM_RULE_KINDS = ("content", "regex", "max-size", "origin", "type-profile", "rate-limit")


class SecurityError(Exception):
    pass


class UnknownRight(SecurityError):
    pass


class AuthError(SecurityError):
    """Envelope failed authentication: tampered, truncated, or wrong key."""


class BadKeyLength(SecurityError):
    pass


class RuleError(SecurityError):
    """A rule table violates its invariants."""


# --------------------------------------------------------------------------
# Firewall
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PacketMeta:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    service_id: int


@dataclass(frozen=True)
class FirewallRule:
    order: int
    src_ip: str = "*"      # IPv4, CIDR, or "*"
    dst_ip: str = "*"
    src_port: str = "*"    # "80", "1-1024", or "*"
    dst_port: str = "*"
    service_id: str = "*"  # decimal ID or "*"
    verdict: str = VERDICT_ACCEPT


def _check_port_expr(expr: str) -> None:
    if expr == "*":
        return
    parts = expr.split("-", 1)
    for p in parts:
        v = int(p)
        if not 1 <= v <= 65535:
            raise RuleError(f"port {v} outside 1-65535 in {expr!r}")
    if len(parts) == 2 and int(parts[0]) > int(parts[1]):
        raise RuleError(f"empty port range {expr!r}")


def validate_firewall_rules(rules: list[FirewallRule]) -> None:
    orders = [r.order for r in rules]
    if len(set(orders)) != len(orders):
        raise RuleError("firewall rule order values must be unique")
    for r in rules:
        if r.verdict not in (VERDICT_ACCEPT, VERDICT_REJECT):
            raise RuleError(f"unknown verdict {r.verdict!r} in rule {r.order}")
        for expr in (r.src_port, r.dst_port):
            _check_port_expr(expr)
        for ip in (r.src_ip, r.dst_ip):
            if ip != "*":
                ipaddress.ip_network(ip, strict=False)
        if r.service_id != "*":
            int(r.service_id)


def _ip_matches(expr: str, ip: str) -> bool:
    if expr == "*":
        return True
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError:
        return False
    return addr in ipaddress.ip_network(expr, strict=False)


def _port_matches(expr: str, port: int) -> bool:
    if expr == "*":
        return True
    if "-" in expr:
        lo, hi = expr.split("-", 1)
        return int(lo) <= port <= int(hi)
    return int(expr) == port


def firewall_eval(
    meta: PacketMeta,
    rules: list[FirewallRule],
    default: str = VERDICT_REJECT,
) -> tuple[str, int | None]:
    """First-match evaluation in ascending rule order; (verdict, rule order)
    with rule order None when the default applied."""
    for rule in sorted(rules, key=lambda r: r.order):
        if not _ip_matches(rule.src_ip, meta.src_ip):
            continue
        if not _ip_matches(rule.dst_ip, meta.dst_ip):
            continue
        if not _port_matches(rule.src_port, meta.src_port):
            continue
        if not _port_matches(rule.dst_port, meta.dst_port):
            continue
        if rule.service_id != "*" and int(rule.service_id) != meta.service_id:
            continue
        return rule.verdict, rule.order
    return default, None


# --------------------------------------------------------------------------
# Spam filter
# --------------------------------------------------------------------------

@dataclass
class SpamRule:
    rule_id: str
    kind: str           # content | regex | max-size | origin | type-profile | rate-limit
    value: str
    window: float = 0.0  # rate-limit only, seconds
    _recent: dict[str, list[float]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in SPAM_RULE_KINDS:
            raise RuleError(f"unknown spam rule kind {self.kind!r}")
        if self.kind == "rate-limit" and self.window <= 0:
            raise RuleError("rate-limit rule needs a positive window")


def filter_spam(
    m: EclMessage, rules: list[SpamRule], now: float = 0.0
) -> tuple[str, str | None]:
    """("pass", None) or ("quarantine", rule_id) for the first matching rule."""
    text = serialize_ecl(m)
    for rule in rules:
        if _spam_matches(rule, m, text, now):
            return "quarantine", rule.rule_id
    return "pass", None


def _spam_matches(rule: SpamRule, m: EclMessage, text: str, now: float) -> bool:
    if rule.kind == "content":
        return rule.value in text
    if rule.kind == "regex":
        return re.search(rule.value, text) is not None
    if rule.kind == "max-size":
        return len(text.encode("utf-8")) > int(rule.value)
    if rule.kind == "origin":
        origins = {s.strip() for s in rule.value.split(",") if s.strip()}
        return m.source_ip in origins
    if rule.kind == "type-profile":
        profile = ",".join(p.type for p in m.params)
        return profile == rule.value
    if rule.kind == "rate-limit":
        limit = int(rule.value)
        recent = rule._recent.setdefault(m.source_ip, [])
        recent[:] = [t for t in recent if now - t < rule.window]
        recent.append(now)
        return len(recent) > limit
    raise RuleError(f"unknown spam rule kind {rule.kind!r}")


# --------------------------------------------------------------------------
# Threat scanning
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThreatSignature:
    signature_id: str
    pattern: bytes
    category: str

    def __post_init__(self):
        if self.category not in THREAT_CATEGORIES:
            raise RuleError(f"unknown threat category {self.category!r}")
        if not self.pattern:
            raise RuleError("empty threat pattern")


@dataclass(frozen=True)
class Finding:
    signature_id: str
    category: str
    offset: int


def scan_threat(payload: bytes, signatures: list[ThreatSignature]) -> list[Finding]:
    """Every occurrence of every signature pattern, overlapping included."""
    findings: list[Finding] = []
    for sig in signatures:
        start = 0
        while True:
            idx = payload.find(sig.pattern, start)
            if idx < 0:
                break
            findings.append(Finding(sig.signature_id, sig.category, idx))
            start = idx + 1
    return findings


# --------------------------------------------------------------------------
# Envelope encryption
# --------------------------------------------------------------------------

ENVELOPE_MAGIC = b"EOA1"
KEY_BYTES = 16
NONCE_BYTES = 12


def encrypt_envelope(plaintext: bytes, key: bytes, rng: random.Random | None = None) -> bytes:
    """Authenticated encryption with a fresh nonce. A seeded rng may supply
    the nonce so scripted runs stay byte-reproducible; the default is the
    OS entropy pool."""
    if len(key) != KEY_BYTES:
        raise BadKeyLength(f"key must be {KEY_BYTES} bytes, got {len(key)}")
    if rng is None:
        nonce = os.urandom(NONCE_BYTES)
    else:
        nonce = rng.getrandbits(NONCE_BYTES * 8).to_bytes(NONCE_BYTES, "big")
    ciphertext = AESGCM(key).encrypt(nonce, plaintext, None)
    return ENVELOPE_MAGIC + nonce + ciphertext


def decrypt_envelope(envelope: bytes, key: bytes) -> bytes:
    if len(key) != KEY_BYTES:
        raise BadKeyLength(f"key must be {KEY_BYTES} bytes, got {len(key)}")
    if len(envelope) < len(ENVELOPE_MAGIC) + NONCE_BYTES + 16:
        raise AuthError("envelope too short")
    if envelope[: len(ENVELOPE_MAGIC)] != ENVELOPE_MAGIC:
        raise AuthError("bad envelope magic")
    nonce = envelope[len(ENVELOPE_MAGIC) : len(ENVELOPE_MAGIC) + NONCE_BYTES]
    ciphertext = envelope[len(ENVELOPE_MAGIC) + NONCE_BYTES :]
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, None)
    except InvalidTag as exc:
        raise AuthError("authentication tag mismatch") from exc


def load_key(path: str | Path) -> bytes:
    """Key file: hex text, 32 hex chars for the 128-bit key."""
    text = Path(path).read_text(encoding="utf-8").strip()
    key = bytes.fromhex(text)
    if len(key) != KEY_BYTES:
        raise BadKeyLength(f"key file holds {len(key)} bytes, need {KEY_BYTES}")
    return key


# --------------------------------------------------------------------------
# Access control matrix
# --------------------------------------------------------------------------

class AccessControlMatrix:
    """Rights of subjects over objects; absent entry means no rights."""

    def __init__(self):
        self._rights: dict[tuple[int, int], set[str]] = {}

    def _check_right(self, right: str) -> None:
        if right not in RIGHTS:
            raise UnknownRight(f"unknown right {right!r}; known: {', '.join(RIGHTS)}")

    def check(self, subject_id: int, object_id: int, right: str) -> bool:
        self._check_right(right)
        return right in self._rights.get((subject_id, object_id), ())

    def grant(self, subject_id: int, object_id: int, right: str) -> None:
        self._check_right(right)
        self._rights.setdefault((subject_id, object_id), set()).add(right)

    def revoke(self, subject_id: int, object_id: int, right: str) -> None:
        self._check_right(right)
        cell = self._rights.get((subject_id, object_id))
        if cell is not None:
            cell.discard(right)
            if not cell:
                del self._rights[(subject_id, object_id)]

    def entries(self) -> list[tuple[int, int, str]]:
        out = []
        for (s, o), rights in self._rights.items():
            for r in sorted(rights):
                out.append((s, o, r))
        out.sort()
        return out

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for s, o, r in self.entries():
            h.update(f"{s} {o} {r}\n".encode("utf-8"))
        return h.hexdigest()


# --------------------------------------------------------------------------
# Audit log
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditEntry:
    timestamp: float
    service_id: int
    peer_ip: str
    function_invoked: str
    protocol: str
    bytes_served: int
    user_agent: str
    outcome: str
    unit_verdicts: tuple[tuple[str, str], ...] = ()
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "serviceID": self.service_id,
            "peerIP": self.peer_ip,
            "functionInvoked": self.function_invoked,
            "protocol": self.protocol,
            "bytesServed": self.bytes_served,
            "userAgent": self.user_agent,
            "outcome": self.outcome,
            "unitVerdicts": [list(v) for v in self.unit_verdicts],
            "detail": self.detail,
        }


class AuditLog:
    """Append-only activity record, optionally mirrored to a line-delimited
    file (one JSON document per line)."""

    def __init__(self, path: str | Path | None = None):
        self._entries: list[AuditEntry] = []
        self._path = Path(path) if path else None

    def __len__(self) -> int:
        return len(self._entries)

    def log_event(self, entry: AuditEntry) -> None:
        self._entries.append(entry)
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with self._path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")

    def query(
        self,
        since: float | None = None,
        until: float | None = None,
        service_id: int | None = None,
        outcome: str | None = None,
    ) -> list[AuditEntry]:
        out = []
        for e in self._entries:
            if since is not None and e.timestamp < since:
                continue
            if until is not None and e.timestamp > until:
                continue
            if service_id is not None and e.service_id != service_id:
                continue
            if outcome is not None and e.outcome != outcome:
                continue
            out.append(e)
        return out

    def summary(self, since: float | None = None, until: float | None = None) -> dict:
        entries = self.query(since=since, until=until)
        by_outcome: dict[str, int] = {}
        by_function: dict[str, int] = {}
        errors = 0
        for e in entries:
            by_outcome[e.outcome] = by_outcome.get(e.outcome, 0) + 1
            by_function[e.function_invoked] = by_function.get(e.function_invoked, 0) + 1
            if "error" in e.detail.lower() or "exception" in e.detail.lower():
                errors += 1
        return {
            "total": len(entries),
            "byOutcome": by_outcome,
            "byFunction": by_function,
            "errors": errors,
        }


# --------------------------------------------------------------------------
# Rule files
# --------------------------------------------------------------------------

def load_firewall_rules(path: str | Path) -> tuple[list[FirewallRule], str]:
    """<firewall default="accept|reject"> with <rule .../> children."""
    root = ET.parse(Path(path)).getroot()
    if root.tag != "firewall":
        raise RuleError(f"expected <firewall> root, got <{root.tag}>")
    default = root.attrib.get("default", VERDICT_REJECT)
    rules = [
        FirewallRule(
            order=int(el.attrib["order"]),
            src_ip=el.attrib.get("srcIP", "*"),
            dst_ip=el.attrib.get("dstIP", "*"),
            src_port=el.attrib.get("srcPort", "*"),
            dst_port=el.attrib.get("dstPort", "*"),
            service_id=el.attrib.get("serviceID", "*"),
            verdict=el.attrib.get("verdict", VERDICT_ACCEPT),
        )
        for el in root.findall("rule")
    ]
    validate_firewall_rules(rules)
    return rules, default


def load_spam_rules(path: str | Path) -> list[SpamRule]:
    """<spamRules> with <rule id= kind= value= [window=]/> children."""
    root = ET.parse(Path(path)).getroot()
    if root.tag != "spamRules":
        raise RuleError(f"expected <spamRules> root, got <{root.tag}>")
    return [
        SpamRule(
            rule_id=el.attrib["id"],
            kind=el.attrib["kind"],
            value=el.attrib.get("value", ""),
            window=float(el.attrib.get("window", 0.0)),
        )
        for el in root.findall("rule")
    ]


def load_threat_signatures(path: str | Path) -> list[ThreatSignature]:
    """<signatures> with <signature id= category= pattern=/> children."""
    root = ET.parse(Path(path)).getroot()
    if root.tag != "signatures":
        raise RuleError(f"expected <signatures> root, got <{root.tag}>")
    return [
        ThreatSignature(
            signature_id=el.attrib["id"],
            pattern=el.attrib["pattern"].encode("utf-8"),
            category=el.attrib["category"],
        )
        for el in root.findall("signature")
    ]
