"""Runtime configuration: `key=value` lines, `#` comments, a closed key set.
Unknown keys fail startup by name so typos surface immediately."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class EcosystemConfig:
    bus_port: int = 7420
    admin_port: int = 7421
    security_encrypt: bool = False
    security_key_file: str = ""
    firewall_rules_file: str = ""
    spam_rules_file: str = ""
    signatures_file: str = ""
    heartbeat_period: float = 5.0
    heartbeat_timeout: float = 15.0
    adapt_disk_high: float = 0.80
    adapt_disk_grow: float = 0.25
    adapt_cpu_high: float = 0.90
    adapt_idle_low: float = 0.05
    adapt_idle_ticks: int = 5
    adapt_queue_threshold: int = 10
    adapt_queue_sustain: int = 3
    recovery_quiet_period: float = 30.0
    recovery_auto: bool = True
    bus_max_attempts: int = 3
    bus_queue_cap: int = 1024
    bus_backoff_base: float = 1.0
    bus_max_frame: int = 1 << 20
    registry_log_file: str = ""
    audit_log_file: str = ""
    seed: int = 0


_KEY_MAP = {
    "bus.port": "bus_port",
    "admin.port": "admin_port",
    "security.encrypt": "security_encrypt",
    "security.key-file": "security_key_file",
    "firewall.rules-file": "firewall_rules_file",
    "spam.rules-file": "spam_rules_file",
    "signatures.file": "signatures_file",
    "heartbeat.period": "heartbeat_period",
    "heartbeat.timeout": "heartbeat_timeout",
    "adapt.disk-high": "adapt_disk_high",
    "adapt.disk-grow": "adapt_disk_grow",
    "adapt.cpu-high": "adapt_cpu_high",
    "adapt.idle-low": "adapt_idle_low",
    "adapt.idle-ticks": "adapt_idle_ticks",
    "adapt.queue-threshold": "adapt_queue_threshold",
    "adapt.queue-sustain": "adapt_queue_sustain",
    "recovery.quiet-period": "recovery_quiet_period",
    "recovery.auto": "recovery_auto",
    "bus.max-attempts": "bus_max_attempts",
    "bus.queue-cap": "bus_queue_cap",
    "bus.backoff-base": "bus_backoff_base",
    "bus.max-frame": "bus_max_frame",
    "registry.log-file": "registry_log_file",
    "audit.log-file": "audit_log_file",
    "seed": "seed",
}

_FIELD_TYPES = {f.name: f.type for f in fields(EcosystemConfig)}


def _convert(field_name: str, raw: str):
    ftype = _FIELD_TYPES[field_name]
    if ftype == "bool":
        low = raw.strip().lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"expected a boolean for {field_name}, got {raw!r}")
    if ftype == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"expected an integer for {field_name}, got {raw!r}") from None
    if ftype == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"expected a number for {field_name}, got {raw!r}") from None
    return raw


def parse_config(text: str) -> EcosystemConfig:
    config = EcosystemConfig()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_MAP:
            raise ConfigError(f"line {line_no}: unknown config key: {key}")
        field_name = _KEY_MAP[key]
        setattr(config, field_name, _convert(field_name, value))
    return config


def load_config(path: str | Path) -> EcosystemConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
