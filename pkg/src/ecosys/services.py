"""Simulated demo services: in-process endpoints with executable function
bodies drawn from a small builtin set. A spawned instance answers messages
synchronously and integrates itself by sending the reserved admission
request through the bus."""
from __future__ import annotations

from dataclasses import dataclass, field

from .ecl import EclMessage, STATUS_ERROR, STATUS_OK, build_response
from .sdl import FunctionSig, SdlDocument


class ServiceFault(Exception):
    """Raised by a scripted flaky function; the bus treats it as a failed
    delivery attempt."""


def _coerce(value: str, type_token: str):
    if type_token == "int":
        return int(value)
    if type_token == "double":
        return float(value)
    if type_token == "bool":
        return value.strip().lower() in ("true", "1")
    return value


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


# name -> (param types, return type)
BUILTIN_SIGNATURES: dict[str, tuple[tuple[str, ...], str]] = {
    "Max": (("int", "int"), "int"),
    "Min": (("int", "int"), "int"),
    "Echo": (("string",), "string"),
    "Sum": (("int", "int"), "int"),
    "FailAfterN": (("int",), "int"),
}


@dataclass(frozen=True)
class DemoServiceSpec:
    name: str
    functions: tuple[str, ...]
    host_id: str
    port: int = 0  # 0 lets the runtime pick one

    def __post_init__(self):
        unknown = [f for f in self.functions if f not in BUILTIN_SIGNATURES]
        if unknown:
            raise ValueError(f"unknown builtin functions: {unknown}")

    def sdl(self) -> SdlDocument:
        return SdlDocument(
            functions=tuple(
                FunctionSig(name, *BUILTIN_SIGNATURES[name]) for name in self.functions
            ),
            protocol="ECL",
            description=f"demo service {self.name}",
        )


@dataclass
class DemoServiceInstance:
    spec: DemoServiceSpec
    service_ip: str
    port: int
    service_id: int | None = None
    alive: bool = True
    call_counts: dict[str, int] = field(default_factory=dict)

    def handle(self, m: EclMessage, now: float) -> EclMessage:
        """Execute the invoked function and answer; unknown functions and
        badly typed arguments come back as Error responses."""
        if not self.alive:
            raise ServiceFault(f"{self.spec.name} is down")
        name = m.function_invoked
        if name not in self.spec.functions:
            return build_response(m, f"unknown function {name!r}", STATUS_ERROR, now)
        count = self.call_counts.get(name, 0) + 1
        self.call_counts[name] = count
        params, _returns = BUILTIN_SIGNATURES[name]
        if len(m.params) != len(params):
            return build_response(
                m, f"{name} expects {len(params)} params, got {len(m.params)}", STATUS_ERROR, now
            )
        try:
            args = [_coerce(p.value, t) for p, t in zip(m.params, params)]
        except ValueError:
            return build_response(m, f"bad argument for {name}", STATUS_ERROR, now)
        if name == "Max":
            result = max(args[0], args[1])
        elif name == "Min":
            result = min(args[0], args[1])
        elif name == "Sum":
            result = args[0] + args[1]
        elif name == "Echo":
            result = args[0]
        elif name == "FailAfterN":
            if count > args[0]:
                raise ServiceFault(f"{self.spec.name}.FailAfterN failed on call {count}")
            result = count
        else:  # unreachable, guarded above
            return build_response(m, f"unknown function {name!r}", STATUS_ERROR, now)
        return build_response(m, _render(result), STATUS_OK, now)
