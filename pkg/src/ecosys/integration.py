"""Self-integration and discovery: admission of new services into the
registry, signature matching for discovery, and the liveness sweep that
drops services that stopped heartbeating.

Match scoring is a fixed, deterministic rubric per query function:
1.0 for an exact (name, ordered param types, return) match, 0.6 when only
the parameter order differs, otherwise 0.4 times the Jaccard similarity of
the two names' character-trigram sets provided the arity matches (names
shorter than three characters contribute themselves as a single token).
The document score is the mean over the query's functions.
"""
from __future__ import annotations

from dataclasses import dataclass

from .registry import ServiceRegistry
from .sdl import FunctionSig, SdlDocument


@dataclass(frozen=True)
class IntegrationRequest:
    service_ip: str
    port: int
    protocol: str
    sdl: SdlDocument


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: tuple[str, ...] = ()


@dataclass(frozen=True)
class Ack:
    service_id: int


@dataclass(frozen=True)
class Reject:
    issues: tuple[str, ...]


@dataclass(frozen=True)
class MatchResult:
    service_id: int
    score: float
    matched: tuple[tuple[str, str], ...]


def validate_sdl(sdl: SdlDocument) -> ValidationReport:
    issues = sdl.validate()
    return ValidationReport(ok=not issues, issues=tuple(issues))


def request_integration(
    registry: ServiceRegistry, req: IntegrationRequest, now: float
) -> Ack | Reject:
    """Admit a service: valid description gets a registry record and a
    positive ack; anything else is rejected with the registry untouched."""
    report = validate_sdl(req.sdl)
    issues = list(report.issues)
    if not req.sdl.functions:
        issues.append("service description offers no functions")
    if issues:
        return Reject(tuple(issues))
    try:
        record = registry.insert_record(req.protocol, req.service_ip, req.port, req.sdl, now)
    except Exception as exc:
        return Reject((str(exc),))
    return Ack(record.service_id)


def _trigrams(name: str) -> frozenset[str]:
    if len(name) < 3:
        return frozenset((name,))
    return frozenset(name[i : i + 3] for i in range(len(name) - 2))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def _function_score(query: FunctionSig, offer: FunctionSig) -> float:
    if query.name == offer.name and query.params == offer.params and query.returns == offer.returns:
        return 1.0
    if (
        query.name == offer.name
        and query.returns == offer.returns
        and sorted(query.params) == sorted(offer.params)
    ):
        return 0.6
    if len(query.params) == len(offer.params):
        return 0.4 * _jaccard(_trigrams(query.name), _trigrams(offer.name))
    return 0.0


def match_score(query: SdlDocument, offer: SdlDocument) -> float:
    score, _ = match_detail(query, offer)
    return score


def match_detail(
    query: SdlDocument, offer: SdlDocument
) -> tuple[float, tuple[tuple[str, str], ...]]:
    """Score plus the (query function, best offer function) pairing."""
    if not query.functions:
        return 0.0, ()
    total = 0.0
    matched: list[tuple[str, str]] = []
    for qf in query.functions:
        best = 0.0
        best_name: str | None = None
        for of in offer.functions:
            s = _function_score(qf, of)
            if s > best:
                best, best_name = s, of.name
        total += best
        if best_name is not None:
            matched.append((qf.name, best_name))
    return total / len(query.functions), tuple(matched)


def discover(
    registry: ServiceRegistry, query: SdlDocument, min_score: float
) -> list[MatchResult]:
    """Rank online services against a query description, best first,
    ties broken by ascending service ID."""
    if not 0.0 <= min_score <= 1.0:
        raise ValueError(f"min_score must lie in [0, 1], got {min_score}")
    results = []
    for record in registry.records():
        if not record.online:
            continue
        score, matched = match_detail(query, record.sdl)
        if score >= min_score:
            results.append(MatchResult(record.service_id, score, matched))
    results.sort(key=lambda r: (-r.score, r.service_id))
    return results


def heartbeat(registry: ServiceRegistry, service_id: int, now: float) -> bool:
    return registry.touch(service_id, now)


def sweep_unreachable(registry: ServiceRegistry, now: float, timeout: float) -> list[int]:
    """Drop every record silent for longer than the timeout; returns the
    removed IDs in ascending order."""
    if timeout <= 0:
        raise ValueError(f"timeout must be positive, got {timeout}")
    stale = sorted(
        r.service_id for r in registry.records() if now - r.last_heartbeat > timeout
    )
    for service_id in stale:
        registry.remove(service_id)
    return stale
