"""The administrator command language: tokenizer, parser, interpreter.

Grammar, one line per command:

    bind <ip> <port> <sdl-path>
    unbind <serviceID>
    is-run <serviceID>
    grant <subjectID> <right> on <objectID>
    revoke <subjectID> <right> on <objectID>
    replica <serviceID> [on <hostID>]
    list

`list` and the `replica ... on <hostID>` placement form are extensions of
the six core commands. Keywords are case-insensitive; double-quoted strings
form one token. Execution is all-or-nothing: a failed command leaves the
ecosystem untouched.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from pathlib import Path

from .adaptation import CapacityError
from .integration import Ack, IntegrationRequest
from .sdl import SdlError, sdl_from_xml
from .security import RIGHTS, UnknownRight

VERBS = ("bind", "unbind", "is-run", "grant", "revoke", "replica", "list")
KEYWORDS = frozenset(VERBS) | {"on"} | set(RIGHTS)


class EmlError(Exception):
    pass


class UnterminatedString(EmlError):
    pass


class UnknownVerb(EmlError):
    pass


class ArityError(EmlError):
    pass


class ArgTypeError(EmlError):
    pass


@dataclass(frozen=True)
class EmlCommand:
    verb: str
    args: dict
    raw_text: str


@dataclass(frozen=True)
class EmlResult:
    ok: bool
    output: str
    effect: dict = field(default_factory=dict)
    error: str | None = None


def tokenize(line: str) -> list[str]:
    """Whitespace-separated tokens; double-quoted runs form one token and
    keep their case, bare keywords are lowercased."""
    tokens: list[str] = []
    i, n = 0, len(line)
    while i < n:
        c = line[i]
        if c.isspace():
            i += 1
            continue
        if c == '"':
            end = line.find('"', i + 1)
            if end < 0:
                raise UnterminatedString(f"unterminated string starting at column {i + 1}")
            tokens.append(line[i + 1 : end])
            i = end + 1
            continue
        j = i
        while j < n and not line[j].isspace():
            j += 1
        token = line[i:j]
        tokens.append(token.lower() if token.lower() in KEYWORDS else token)
        i = j
    return tokens


def _need(tokens: list[str], count: int, usage: str) -> None:
    if len(tokens) != count:
        raise ArityError(f"usage: {usage}")


def _int_arg(token: str, what: str) -> int:
    try:
        return int(token, 10)
    except ValueError:
        raise ArgTypeError(f"{what} must be numeric, got {token!r}") from None


def _ip_arg(token: str) -> str:
    try:
        ipaddress.IPv4Address(token)
    except (ipaddress.AddressValueError, ValueError):
        raise ArgTypeError(f"bad IPv4 address {token!r}") from None
    return token


def _port_arg(token: str) -> int:
    port = _int_arg(token, "port")
    if not 1 <= port <= 65535:
        raise ArgTypeError(f"port {port} outside 1-65535")
    return port


def _keyword(token: str, expected: str) -> None:
    if token != expected:
        raise ArgTypeError(f"expected keyword {expected!r}, got {token!r}")


def _right_arg(token: str) -> str:
    if token not in RIGHTS:
        raise ArgTypeError(f"unknown right {token!r}; known: {', '.join(RIGHTS)}")
    return token


def parse_command(tokens: list[str], raw_text: str = "") -> EmlCommand:
    if not tokens:
        raise ArityError("empty command")
    verb = tokens[0]
    if verb not in VERBS:
        raise UnknownVerb(f"unknown verb {verb!r}")
    if verb == "bind":
        _need(tokens, 4, "bind <ip> <port> <sdl-path>")
        args = {"ip": _ip_arg(tokens[1]), "port": _port_arg(tokens[2]), "sdl_path": tokens[3]}
    elif verb in ("unbind", "is-run"):
        _need(tokens, 2, f"{verb} <serviceID>")
        args = {"service_id": _int_arg(tokens[1], "serviceID")}
    elif verb in ("grant", "revoke"):
        _need(tokens, 5, f"{verb} <subjectID> <right> on <objectID>")
        _keyword(tokens[3], "on")
        args = {
            "subject_id": _int_arg(tokens[1], "subjectID"),
            "right": _right_arg(tokens[2]),
            "object_id": _int_arg(tokens[4], "objectID"),
        }
    elif verb == "replica":
        if len(tokens) == 2:
            args = {"service_id": _int_arg(tokens[1], "serviceID"), "host_id": None}
        elif len(tokens) == 4:
            _keyword(tokens[2], "on")
            args = {"service_id": _int_arg(tokens[1], "serviceID"), "host_id": tokens[3]}
        else:
            raise ArityError("usage: replica <serviceID> [on <hostID>]")
    else:  # list
        _need(tokens, 1, "list")
        args = {}
    return EmlCommand(verb=verb, args=args, raw_text=raw_text)


def execute(cmd: EmlCommand, eco) -> EmlResult:
    """Apply one parsed command to the ecosystem. Failures come back as
    results (ok=False, empty effect) so a console session keeps going."""
    handler = _HANDLERS[cmd.verb]
    return handler(cmd, eco)


def run_line(eco, line: str) -> EmlResult:
    """tokenize -> parse -> execute, with every error mapped to exactly one
    error class name in the result."""
    try:
        tokens = tokenize(line)
        if not tokens:
            return EmlResult(ok=True, output="", effect={})
        cmd = parse_command(tokens, raw_text=line)
    except EmlError as exc:
        return EmlResult(ok=False, output=str(exc), error=type(exc).__name__)
    return execute(cmd, eco)


def _do_bind(cmd: EmlCommand, eco) -> EmlResult:
    path = Path(cmd.args["sdl_path"])
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        return EmlResult(False, f"cannot read {path}: {exc}", error="IntegrationRejected")
    try:
        sdl = sdl_from_xml(text)
    except SdlError as exc:
        return EmlResult(False, f"bad service description: {exc}", error="IntegrationRejected")
    req = IntegrationRequest(
        service_ip=cmd.args["ip"], port=cmd.args["port"], protocol=sdl.protocol, sdl=sdl
    )
    result = eco.integrate(req)
    if isinstance(result, Ack):
        return EmlResult(
            True,
            f"bound service {result.service_id} at {req.service_ip}:{req.port}",
            effect={"bound": result.service_id},
        )
    return EmlResult(
        False, "integration rejected: " + "; ".join(result.issues), error="IntegrationRejected"
    )


def _do_unbind(cmd: EmlCommand, eco) -> EmlResult:
    sid = cmd.args["service_id"]
    if eco.unbind(sid):
        return EmlResult(True, f"unbound service {sid}", effect={"removed": sid})
    return EmlResult(False, f"no service {sid}", error="TargetNotFound")


def _do_is_run(cmd: EmlCommand, eco) -> EmlResult:
    sid = cmd.args["service_id"]
    record = eco.registry.get(sid)
    if record is None:
        return EmlResult(False, f"no service {sid}", error="TargetNotFound")
    mode = "online" if record.online else "offline"
    return EmlResult(True, f"service {sid} is {mode}", effect={"service": sid, "mode": mode})


def _do_grant(cmd: EmlCommand, eco) -> EmlResult:
    s, r, o = cmd.args["subject_id"], cmd.args["right"], cmd.args["object_id"]
    try:
        eco.acm.grant(s, o, r)
    except UnknownRight as exc:
        return EmlResult(False, str(exc), error="UnknownRight")
    return EmlResult(True, f"granted {r} to {s} on {o}", effect={"granted": [s, r, o]})


def _do_revoke(cmd: EmlCommand, eco) -> EmlResult:
    s, r, o = cmd.args["subject_id"], cmd.args["right"], cmd.args["object_id"]
    try:
        eco.acm.revoke(s, o, r)
    except UnknownRight as exc:
        return EmlResult(False, str(exc), error="UnknownRight")
    return EmlResult(True, f"revoked {r} from {s} on {o}", effect={"revoked": [s, r, o]})


def _do_replica(cmd: EmlCommand, eco) -> EmlResult:
    sid = cmd.args["service_id"]
    try:
        record = eco.replicate(sid, cmd.args["host_id"])
    except LookupError:
        return EmlResult(False, f"no service {sid}", error="TargetNotFound")
    except CapacityError as exc:
        return EmlResult(False, str(exc), error="ReplicaCapacity")
    return EmlResult(
        True,
        f"replicated {sid} as {record.service_id} at {record.service_ip}:{record.port}",
        effect={"replica": record.service_id, "of": sid},
    )


def _do_list(cmd: EmlCommand, eco) -> EmlResult:
    lines = []
    for r in sorted(eco.registry.records(), key=lambda r: r.service_id):
        functions = ",".join(f.name for f in r.sdl.functions)
        mode = "online" if r.online else "offline"
        lines.append(f"{r.service_id} {r.protocol} {r.service_ip}:{r.port} {mode} [{functions}]")
    return EmlResult(True, "\n".join(lines) if lines else "(registry empty)", effect={})


_HANDLERS = {
    "bind": _do_bind,
    "unbind": _do_unbind,
    "is-run": _do_is_run,
    "grant": _do_grant,
    "revoke": _do_revoke,
    "replica": _do_replica,
    "list": _do_list,
}
