"""Shared fixtures: the canonical sample request and a permissive-but-
nonempty ecosystem wired for end-to-end flows."""
from __future__ import annotations

import random

import pytest

from ecosys.config import EcosystemConfig
from ecosys.ecl import EclMessage, EclParam, make_stamp
from ecosys.ecosystem import Ecosystem
from ecosys.security import FirewallRule, SpamRule
from ecosys.services import DemoServiceSpec

SAMPLE_REQUEST_XML = """<protocol>
  <sourceIP>192.168.1.20</sourceIP>
  <destinationIP>192.168.1.177</destinationIP>
  <sourceID>24</sourceID>
  <destinationID>91</destinationID>
  <functionInvoked>Max</functionInvoked>
  <functionParams>
    <param>10</param>
    <type>int</type>
    <param>50</param>
    <type>int</type>
  </functionParams>
  <functionReturnType>int</functionReturnType>
  <stamp>5/4/2011 09:32:10PM</stamp>
  <version>1.0</version>
</protocol>"""


@pytest.fixture
def sample_xml() -> str:
    return SAMPLE_REQUEST_XML


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20260809)


def make_ecosystem(seed: int = 42, permissive: bool = True, **config_kw) -> Ecosystem:
    eco = Ecosystem(EcosystemConfig(seed=seed, **config_kw))
    eco.add_host("alpha", "192.168.1.177")
    eco.add_host("beta", "192.168.1.20")
    if permissive:
        eco.policy.firewall_rules.append(FirewallRule(order=1, verdict="accept"))
        eco.policy.spam_rules.append(SpamRule(rule_id="cap", kind="max-size", value="65536"))
    return eco


@pytest.fixture
def eco() -> Ecosystem:
    return make_ecosystem()


def spawn_max(eco: Ecosystem, name: str = "Max-1", port: int = 9100):
    instance = eco.spawn_service(
        DemoServiceSpec(name=name, functions=("Max",), host_id="alpha", port=port)
    )
    eco.settle()
    assert instance.service_id is not None
    return instance


def max_request(eco: Ecosystem, destination_id: int, a: str = "10", b: str = "50") -> EclMessage:
    return EclMessage(
        source_ip="192.168.1.20",
        destination_ip="192.168.1.177",
        source_id=24,
        destination_id=destination_id,
        function_invoked="Max",
        params=(EclParam(a, "int"), EclParam(b, "int")),
        return_type="int",
        stamp=make_stamp(eco.clock.now()),
    )
