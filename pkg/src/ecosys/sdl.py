"""Service description documents: the function signatures a service offers.

The XML form mirrors the <functionParams>/<functionReturnType> vocabulary of
the message envelope so one type alphabet covers the whole system.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass

TYPE_TOKENS = ("int", "double", "string", "bool", "void")
PARAM_TOKENS = ("int", "double", "string", "bool")
PROTOCOLS = ("ECL", "SOAP", "REST")


class SdlError(ValueError):
    """Document text is not a parseable service description."""


@dataclass(frozen=True)
class FunctionSig:
    name: str
    params: tuple[str, ...] = ()
    returns: str = "void"


@dataclass(frozen=True)
class SdlDocument:
    functions: tuple[FunctionSig, ...] = ()
    protocol: str = "ECL"
    description: str = ""

    def validate(self) -> list[str]:
        """All invariant violations, empty when the document is sound."""
        issues: list[str] = []
        if self.protocol not in PROTOCOLS:
            issues.append(f"unknown protocol {self.protocol!r}")
        seen: set[str] = set()
        for fn in self.functions:
            if not fn.name or any(c.isspace() for c in fn.name):
                issues.append(f"function name must be a non-empty token, got {fn.name!r}")
                continue
            if fn.name in seen:
                issues.append(f"duplicate function name {fn.name!r}")
            seen.add(fn.name)
            for i, p in enumerate(fn.params):
                if p == "void":
                    issues.append(f"{fn.name}: void is not a parameter type (position {i})")
                elif p not in PARAM_TOKENS:
                    issues.append(f"{fn.name}: unknown param type {p!r} (position {i})")
            if fn.returns not in TYPE_TOKENS:
                issues.append(f"{fn.name}: unknown return type {fn.returns!r}")
        return issues

    def find(self, name: str) -> FunctionSig | None:
        for fn in self.functions:
            if fn.name == name:
                return fn
        return None


def sdl_to_xml(doc: SdlDocument, pretty: bool = False) -> str:
    root = ET.Element("sdl")
    ET.SubElement(root, "protocol").text = doc.protocol
    ET.SubElement(root, "description").text = doc.description
    fns = ET.SubElement(root, "functions")
    for fn in doc.functions:
        el = ET.SubElement(fns, "function")
        ET.SubElement(el, "name").text = fn.name
        fp = ET.SubElement(el, "functionParams")
        for p in fn.params:
            ET.SubElement(fp, "type").text = p
        ET.SubElement(el, "functionReturnType").text = fn.returns
    if pretty:
        ET.indent(root, space="  ")
    return ET.tostring(root, encoding="unicode")


def sdl_from_xml(text: str) -> SdlDocument:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise SdlError(f"not well-formed XML: {exc}") from exc
    if root.tag != "sdl":
        raise SdlError(f"expected <sdl> root, got <{root.tag}>")
    protocol = root.findtext("protocol", default="ECL") or "ECL"
    description = root.findtext("description", default="") or ""
    functions: list[FunctionSig] = []
    fns = root.find("functions")
    for el in (fns if fns is not None else ()):
        if el.tag != "function":
            raise SdlError(f"unexpected element <{el.tag}> inside <functions>")
        name = el.findtext("name", default="") or ""
        fp = el.find("functionParams")
        params = tuple((p.text or "") for p in fp) if fp is not None else ()
        returns = el.findtext("functionReturnType", default="void") or "void"
        functions.append(FunctionSig(name=name, params=params, returns=returns))
    return SdlDocument(functions=tuple(functions), protocol=protocol, description=description)
