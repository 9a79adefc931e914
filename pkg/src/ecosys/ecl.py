"""ECL codec: the XML envelope services exchange over the bus.

A request names its source and destination endpoints (IPv4 address plus a
numeric service ID), the function to invoke, an ordered parameter list, the
declared return type, a timestamp, and the protocol version. On the wire the
parameter list interleaves ``<param>`` and ``<type>`` elements as flat
siblings inside ``<functionParams>``; the i-th param pairs positionally with
the i-th type.

Responses reuse the same ``<protocol>`` envelope extended with ``<kind>``,
``<status>``, and ``<returnValue>``. A message without ``<kind>`` is a
request, so plain request producers need no knowledge of the extension.
"""
from __future__ import annotations

import ipaddress
import struct
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timezone

PARAM_TYPES = ("int", "double", "string", "bool")
RETURN_TYPES = PARAM_TYPES + ("void",)

KIND_REQUEST = "Request"
KIND_RESPONSE = "Response"
STATUS_OK = "Ok"
STATUS_ERROR = "Error"

PROTOCOL_VERSION = "1.0"

DEFAULT_MAX_FRAME = 1 << 20


class EclError(Exception):
    """Base class for codec failures."""


class MalformedXml(EclError):
    """Input is not parseable XML or lacks the <protocol> root."""


class SchemaError(EclError):
    """Missing required element, unknown token, or param/type count mismatch."""


class EclValueError(EclError, ValueError):
    """A field value is outside its domain (bad IP, non-numeric ID)."""


class NotARequest(EclError):
    """build_response needs a request, got something else."""


class FrameError(EclError):
    """Wire frame is truncated or exceeds the configured size cap."""


@dataclass(frozen=True)
class EclParam:
    value: str
    type: str


@dataclass(frozen=True)
class EclMessage:
    source_ip: str
    destination_ip: str
    source_id: int
    destination_id: int
    function_invoked: str
    params: tuple[EclParam, ...]
    return_type: str
    stamp: str
    version: str = PROTOCOL_VERSION
    kind: str = KIND_REQUEST
    status: str | None = None
    return_value: str | None = None

    @property
    def stamp_iso(self) -> str | None:
        """Normalized ISO-8601 UTC form of the stamp, when unambiguous."""
        return normalize_stamp(self.stamp)

    def is_request(self) -> bool:
        return self.kind == KIND_REQUEST

    def validate(self) -> None:
        for label, ip in (("sourceIP", self.source_ip), ("destinationIP", self.destination_ip)):
            try:
                ipaddress.IPv4Address(ip)
            except (ipaddress.AddressValueError, ValueError) as exc:
                raise EclValueError(f"bad {label}: {ip!r}") from exc
        for label, sid in (("sourceID", self.source_id), ("destinationID", self.destination_id)):
            if not isinstance(sid, int) or sid < 0:
                raise EclValueError(f"{label} must be a non-negative integer, got {sid!r}")
        if not self.function_invoked or any(c.isspace() for c in self.function_invoked):
            raise SchemaError(f"functionInvoked must be a non-empty token, got {self.function_invoked!r}")
        for i, p in enumerate(self.params):
            if p.type not in PARAM_TYPES:
                raise SchemaError(f"unknown param type token {p.type!r} at position {i}")
        if self.return_type not in RETURN_TYPES:
            raise SchemaError(f"unknown return type token {self.return_type!r}")
        if not self.version:
            raise SchemaError("version must be non-empty")
        if self.kind == KIND_REQUEST:
            if self.source_id == self.destination_id:
                raise EclValueError(f"request sourceID equals destinationID ({self.source_id})")
            if self.status is not None or self.return_value is not None:
                raise SchemaError("a request carries neither status nor returnValue")
        elif self.kind == KIND_RESPONSE:
            if self.status not in (STATUS_OK, STATUS_ERROR):
                raise SchemaError(f"a response requires status Ok or Error, got {self.status!r}")
        else:
            raise SchemaError(f"unknown kind token {self.kind!r}")


_ELEMENT_ORDER = (
    "sourceIP",
    "destinationIP",
    "sourceID",
    "destinationID",
    "functionInvoked",
    "functionParams",
    "functionReturnType",
    "stamp",
    "version",
)


def _required(root: ET.Element, tag: str) -> ET.Element:
    el = root.find(tag)
    if el is None:
        raise SchemaError(f"missing required element <{tag}>")
    return el


def _text(el: ET.Element) -> str:
    return el.text or ""


def _parse_id(label: str, raw: str) -> int:
    try:
        value = int(raw, 10)
    except ValueError as exc:
        raise EclValueError(f"non-numeric {label}: {raw!r}") from exc
    return value


def parse_ecl(xml_text: str) -> EclMessage:
    """Parse one ECL envelope; raises MalformedXml / SchemaError / EclValueError."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(f"not well-formed XML: {exc}") from exc
    if root.tag != "protocol":
        raise MalformedXml(f"expected <protocol> root, got <{root.tag}>")

    fp = _required(root, "functionParams")
    values: list[str] = []
    types: list[str] = []
    for child in fp:
        if child.tag == "param":
            values.append(_text(child))
        elif child.tag == "type":
            types.append(_text(child))
        else:
            raise SchemaError(f"unexpected element <{child.tag}> inside <functionParams>")
    if len(values) != len(types):
        raise SchemaError(f"{len(values)} <param> elements but {len(types)} <type> elements")

    kind_el = root.find("kind")
    kind = _text(kind_el) if kind_el is not None else KIND_REQUEST
    status_el = root.find("status")
    return_el = root.find("returnValue")

    message = EclMessage(
        source_ip=_text(_required(root, "sourceIP")),
        destination_ip=_text(_required(root, "destinationIP")),
        source_id=_parse_id("sourceID", _text(_required(root, "sourceID"))),
        destination_id=_parse_id("destinationID", _text(_required(root, "destinationID"))),
        function_invoked=_text(_required(root, "functionInvoked")),
        params=tuple(EclParam(v, t) for v, t in zip(values, types)),
        return_type=_text(_required(root, "functionReturnType")),
        stamp=_text(_required(root, "stamp")),
        version=_text(_required(root, "version")),
        kind=kind,
        status=_text(status_el) if status_el is not None else None,
        return_value=_text(return_el) if return_el is not None else None,
    )
    message.validate()
    return message


def serialize_ecl(m: EclMessage) -> str:
    """Canonical envelope text: 2-space indent, one element per line."""
    m.validate()
    root = ET.Element("protocol")

    def sub(tag: str, text: str) -> None:
        ET.SubElement(root, tag).text = text

    sub("sourceIP", m.source_ip)
    sub("destinationIP", m.destination_ip)
    sub("sourceID", str(m.source_id))
    sub("destinationID", str(m.destination_id))
    sub("functionInvoked", m.function_invoked)
    fp = ET.SubElement(root, "functionParams")
    for p in m.params:
        ET.SubElement(fp, "param").text = p.value
        ET.SubElement(fp, "type").text = p.type
    sub("functionReturnType", m.return_type)
    sub("stamp", m.stamp)
    sub("version", m.version)
    if m.kind == KIND_RESPONSE:
        sub("kind", m.kind)
        sub("status", m.status or "")
        if m.return_value is not None:
            sub("returnValue", m.return_value)
    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="unicode")


def build_response(
    request: EclMessage,
    result: str,
    status: str = STATUS_OK,
    now: float | None = None,
) -> EclMessage:
    """Answer a request: swap the four addressing fields, stamp freshly."""
    if request.kind != KIND_REQUEST:
        raise NotARequest(f"cannot respond to a {request.kind} message")
    if status not in (STATUS_OK, STATUS_ERROR):
        raise EclValueError(f"status must be Ok or Error, got {status!r}")
    return EclMessage(
        source_ip=request.destination_ip,
        destination_ip=request.source_ip,
        source_id=request.destination_id,
        destination_id=request.source_id,
        function_invoked=request.function_invoked,
        params=(),
        return_type=request.return_type,
        stamp=make_stamp(now if now is not None else time.time()),
        version=request.version,
        kind=KIND_RESPONSE,
        status=status,
        return_value=result,
    )


_SLASH_FORMATS = ("%m/%d/%Y %I:%M:%S%p", "%d/%m/%Y %I:%M:%S%p")


def _to_iso(dt: datetime) -> str:
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def normalize_stamp(raw: str) -> str | None:
    """Best-effort UTC normalization; None when the date order is ambiguous.

    Slash-formatted stamps are accepted in both month-first and day-first
    order. When the two readings disagree the raw string is kept as the only
    authority and no normalized form is produced.
    """
    s = raw.strip()
    if not s:
        return None
    iso_candidate = s[:-1] + "+00:00" if s.endswith("Z") else s
    try:
        dt = datetime.fromisoformat(iso_candidate)
    except ValueError:
        dt = None
    if dt is not None:
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return _to_iso(dt)
    readings = []
    for fmt in _SLASH_FORMATS:
        try:
            readings.append(datetime.strptime(s, fmt).replace(tzinfo=timezone.utc))
        except ValueError:
            pass
    if len(set(readings)) == 1 and readings:
        return _to_iso(readings[0])
    return None


def make_stamp(epoch: float) -> str:
    """Fresh stamp for outgoing messages, ISO-8601 UTC."""
    return _to_iso(datetime.fromtimestamp(epoch, tz=timezone.utc))


_FRAME_HEADER = struct.Struct(">I")


def encode_frame(payload: bytes, max_size: int = DEFAULT_MAX_FRAME) -> bytes:
    """4-byte big-endian length prefix plus the payload."""
    if len(payload) > max_size:
        raise FrameError(f"payload of {len(payload)} bytes exceeds frame cap {max_size}")
    return _FRAME_HEADER.pack(len(payload)) + payload


def decode_frames(buffer: bytes, max_size: int = DEFAULT_MAX_FRAME) -> tuple[list[bytes], bytes]:
    """Split a byte buffer into complete frames plus the unconsumed tail."""
    frames: list[bytes] = []
    offset = 0
    while len(buffer) - offset >= _FRAME_HEADER.size:
        (length,) = _FRAME_HEADER.unpack_from(buffer, offset)
        if length > max_size:
            raise FrameError(f"declared frame of {length} bytes exceeds cap {max_size}")
        if len(buffer) - offset - _FRAME_HEADER.size < length:
            break
        start = offset + _FRAME_HEADER.size
        frames.append(buffer[start : start + length])
        offset = start + length
    return frames, buffer[offset:]


def recv_frame(sock, max_size: int = DEFAULT_MAX_FRAME) -> bytes | None:
    """Read one frame from a socket; None on clean EOF before a header."""
    header = _recv_exact(sock, _FRAME_HEADER.size)
    if header is None:
        return None
    (length,) = _FRAME_HEADER.unpack(header)
    if length > max_size:
        raise FrameError(f"declared frame of {length} bytes exceeds cap {max_size}")
    body = _recv_exact(sock, length)
    if body is None:
        raise FrameError("connection closed mid-frame")
    return body


def send_frame(sock, payload: bytes, max_size: int = DEFAULT_MAX_FRAME) -> None:
    sock.sendall(encode_frame(payload, max_size))


def _recv_exact(sock, n: int) -> bytes | None:
    chunks = bytearray()
    while len(chunks) < n:
        chunk = sock.recv(n - len(chunks))
        if not chunk:
            if chunks:
                raise FrameError("connection closed mid-frame")
            return None
        chunks.extend(chunk)
    return bytes(chunks)
