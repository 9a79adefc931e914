"""Acceptance suite: one test per acceptance criterion, each printing a
PASS line when its checks hold (run with `pytest -s` to see them). All
scenario-based checks run on the virtual clock at desk scale."""
from __future__ import annotations

import json
import random

from conftest import SAMPLE_REQUEST_XML, make_ecosystem, max_request
from ecosys.cli import main_ecosysd
from ecosys.ecl import (
    EclMessage,
    EclParam,
    KIND_REQUEST,
    KIND_RESPONSE,
    STATUS_ERROR,
    STATUS_OK,
    make_stamp,
    parse_ecl,
    serialize_ecl,
)
from ecosys.integration import (
    Ack,
    IntegrationRequest,
    Reject,
    discover,
    match_score,
    request_integration,
    sweep_unreachable,
)
from ecosys.registry import ServiceRegistry
from ecosys.sdl import FunctionSig, SdlDocument, sdl_to_xml
from ecosys.security import (
    AccessControlMatrix,
    AuthError,
    FirewallRule,
    PacketMeta,
    SpamRule,
    decrypt_envelope,
    encrypt_envelope,
    firewall_eval,
)
from ecosys.services import DemoServiceSpec
from ecosys.survivability import EVENTS as HEALTH_EVENTS
from ecosys.survivability import (
    FAULT,
    GOOD,
    HealthEvent,
    HealthState,
    RECOVERY,
    STATES,
    TRANSITIONS,
    VULNERABLE,
    transition,
)

MAX_SDL = SdlDocument(functions=(FunctionSig("Max", ("int", "int"), "int"),))


def ok(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def random_message(rng: random.Random) -> EclMessage:
    def ip():
        return f"{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}"

    source = rng.randint(0, 2**32)
    destination = rng.randint(0, 2**32)
    while destination == source:
        destination = rng.randint(0, 2**32)
    kind = rng.choice((KIND_REQUEST, KIND_RESPONSE))
    alphabet = "abcXYZ019 <>&\"'\n\t/.:-"
    text = lambda: "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 24)))
    return EclMessage(
        source_ip=ip(),
        destination_ip=ip(),
        source_id=source,
        destination_id=destination,
        function_invoked="Fn" + str(rng.randint(0, 999)),
        params=tuple(
            EclParam(text(), rng.choice(("int", "double", "string", "bool")))
            for _ in range(rng.randint(0, 5))
        ),
        return_type=rng.choice(("int", "double", "string", "bool", "void")),
        stamp=rng.choice(("5/4/2011 09:32:10PM", "1970-01-01T00:00:05Z", text())),
        version=rng.choice(("1.0", "1.1")),
        kind=kind,
        status=rng.choice((STATUS_OK, STATUS_ERROR)) if kind == KIND_RESPONSE else None,
        return_value=text() if kind == KIND_RESPONSE and rng.random() < 0.7 else None,
    )


def test_ecl_conformance():
    m = parse_ecl(SAMPLE_REQUEST_XML)
    assert m.source_ip == "192.168.1.20"
    assert m.destination_ip == "192.168.1.177"
    assert m.source_id == 24 and m.destination_id == 91
    assert m.function_invoked == "Max"
    assert m.params == (EclParam("10", "int"), EclParam("50", "int"))
    assert m.return_type == "int"
    assert m.stamp == "5/4/2011 09:32:10PM"
    assert m.version == "1.0"
    assert serialize_ecl(m) == SAMPLE_REQUEST_XML
    assert parse_ecl(serialize_ecl(m)) == m

    rng = random.Random(42)
    failures = 0
    for _ in range(1000):
        message = random_message(rng)
        if parse_ecl(serialize_ecl(message)) != message:
            failures += 1
    assert failures == 0
    ok("ECL conformance (sample fields exact, round-trip on sample + 1000 seeded messages)")


def test_integration_algorithm():
    registry = ServiceRegistry(rng=random.Random(42))
    valid = IntegrationRequest("192.168.1.177", 9100, "ECL", MAX_SDL)
    result = request_integration(registry, valid, now=0.0)
    assert isinstance(result, Ack)
    record = registry.lookup(result.service_id)
    assert record.service_id == result.service_id
    assert record.protocol == "ECL"
    assert record.service_ip == "192.168.1.177"
    assert record.sdl == MAX_SDL

    digest_before = registry.state_digest()
    invalid = IntegrationRequest(
        "10.0.0.9", 9, "ECL", SdlDocument(functions=(FunctionSig("F", ("void",), "int"),))
    )
    rejected = request_integration(registry, invalid, now=1.0)
    assert isinstance(rejected, Reject) and rejected.issues
    assert registry.state_digest() == digest_before
    ok("integration algorithm (ack + record fields, reject leaves registry bit-identical)")


def test_end_to_end_sample_scenario(tmp_path):
    key_file = tmp_path / "key.hex"
    key_file.write_text("00112233445566778899aabbccddeeff")
    eco = make_ecosystem(
        permissive=False, security_encrypt=True, security_key_file=str(key_file)
    )
    # permissive but nonempty policies on every unit
    eco.policy.firewall_rules.append(
        FirewallRule(order=1, src_ip="192.168.1.0/24", verdict="accept")
    )
    eco.policy.spam_rules.append(SpamRule("cap", "max-size", "65536"))

    instance = eco.spawn_service(
        DemoServiceSpec(name="Max-1", functions=("Max",), host_id="alpha", port=9100)
    )
    eco.settle()
    assert instance.service_id is not None
    eco.acm.grant(24, instance.service_id, "invoke")

    request = EclMessage(
        source_ip="192.168.1.20",
        destination_ip="192.168.1.177",
        source_id=24,
        destination_id=instance.service_id,
        function_invoked="Max",
        params=(EclParam("10", "int"), EclParam("50", "int")),
        return_type="int",
        stamp=make_stamp(eco.clock.now()),
    )
    wire = encrypt_envelope(serialize_ecl(request).encode("utf-8"), eco.key, rng=eco.rng)
    mid = eco.submit_wire(wire, peer_ip=request.source_ip)
    eco.settle()

    reply_wire = eco.wire_response(mid)
    assert reply_wire is not None
    response = parse_ecl(decrypt_envelope(reply_wire, eco.key).decode("utf-8"))
    assert response.kind == KIND_RESPONSE
    assert response.status == STATUS_OK
    assert response.return_value == "50"
    assert response.destination_id == 24

    max_entries = [e for e in eco.audit.query() if e.function_invoked == "Max"]
    assert len(max_entries) == 1
    assert max_entries[0].bytes_served > 0
    ok("end-to-end sample scenario (firewall+spam+ACM+encryption on, response 50, one audit entry)")


def test_eml_suite(tmp_path):
    eco = make_ecosystem()
    sdl_path = tmp_path / "max.sdl"
    sdl_path.write_text(sdl_to_xml(DemoServiceSpec(name="s", functions=("Max",), host_id="alpha").sdl()))

    cardinality = len(eco.registry)
    bound = eco.execute_eml(f'bind 192.168.1.177 9100 "{sdl_path}"')
    assert bound.ok and len(eco.registry) == cardinality + 1
    sid = bound.effect["bound"]

    running = eco.execute_eml(f"is-run {sid}")
    assert running.ok and "online" in running.output

    granted = eco.execute_eml(f"grant 24 invoke on {sid}")
    assert granted.ok and eco.acm.check(24, sid, "invoke")
    revoked = eco.execute_eml(f"revoke 24 invoke on {sid}")
    assert revoked.ok and not eco.acm.check(24, sid, "invoke")

    replica = eco.execute_eml(f"replica {sid}")
    assert replica.ok
    twin_id = replica.effect["replica"]
    a, b = eco.registry.lookup(sid), eco.registry.lookup(twin_id)
    assert a.sdl == b.sdl and a.service_id != b.service_id

    assert eco.execute_eml(f"unbind {twin_id}").ok
    assert eco.execute_eml(f"unbind {sid}").ok
    assert len(eco.registry) == cardinality

    error_classes = {
        "": None,
        "frobnicate 1": "UnknownVerb",
        "bind": "ArityError",
        "bind 1.2.3 1 x": "ArgTypeError",
        "unbind zero": "ArgTypeError",
        "is-run": "ArityError",
        "grant 1 invoke 2": "ArityError",
        "grant 1 warp on 2": "ArgTypeError",
        "revoke 1 invoke": "ArityError",
        "replica 1 on": "ArityError",
        'bind 1.2.3.4 1 "oops': "UnterminatedString",
    }
    for line, expected in error_classes.items():
        result = eco.execute_eml(line)
        if expected is None:
            assert result.ok
        else:
            assert not result.ok and result.error == expected, line
            assert result.effect == {}
    ok("EML suite (six commands executed, bind+unbind restores, replica clones, error classes)")


def test_ewsu_ack_rollback_conservation():
    eco = make_ecosystem()
    instance = eco.spawn_service(
        DemoServiceSpec(name="Max-1", functions=("Max",), host_id="alpha", port=9100)
    )
    eco.settle()
    sid = instance.service_id

    ack, report = eco.execute_wmi(sid, f"set disk {sid} 2048")
    assert ack is True

    digest_before = eco.resources.state_digest()
    ack, report = eco.execute_wmi(
        sid, f"set disk {sid} 4096\nset cpu {sid} 2\nset memory {sid} 99999999"
    )
    assert ack is False
    assert eco.resources.state_digest() == digest_before

    # unregistered target and permission-less subject both ack False
    assert eco.execute_wmi(424242, "get disk 424242")[0] is False
    assert eco.execute_wmi(sid, f"get disk {sid}", subject_id=777)[0] is False
    eco.acm.grant(777, sid, "adapt")
    assert eco.execute_wmi(sid, f"get disk {sid}", subject_id=777)[0] is True

    rng = random.Random(4242)
    rm = eco.resources
    violations = 0
    ids = [sid]
    for _ in range(10_000):
        target = rng.choice(ids + [999999])
        resource = rng.choice(["cpu", "memory", "disk", "bandwidth"])
        value = rng.randint(-500, 120_000)
        rm.execute_wmi(target, f"set {resource} {target} {value}")
        if not rm.conservation_ok():
            violations += 1
    assert violations == 0
    ok("EWSU (boolean ack protocol, transactional rollback, 10^4 scripts with 0 conservation violations)")


def test_esu_oracles():
    # firewall: 50 random rules x 200 random packets against brute force
    from test_security import oracle_first_match

    rng = random.Random(7)

    def rand_ip():
        return f"{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}"

    rules = []
    for order in range(50):
        roll = rng.random()
        src = "*" if roll < 0.4 else (f"{rng.randint(0, 255)}.{rng.randint(0, 255)}.0.0/16" if roll < 0.7 else rand_ip())
        lo = rng.randint(1, 60000)
        port = "*" if rng.random() < 0.5 else f"{lo}-{rng.randint(lo, 65535)}"
        rules.append(
            FirewallRule(
                order=order,
                src_ip=src,
                dst_ip="*" if rng.random() < 0.6 else rand_ip(),
                src_port=port,
                dst_port="*" if rng.random() < 0.6 else str(rng.randint(1, 65535)),
                service_id="*" if rng.random() < 0.5 else str(rng.randint(1, 40)),
                verdict=rng.choice(["accept", "reject"]),
            )
        )
    mismatches = 0
    for _ in range(200):
        meta = PacketMeta(rand_ip(), rand_ip(), rng.randint(0, 65535), rng.randint(0, 65535), rng.randint(1, 50))
        if firewall_eval(meta, rules, "reject") != oracle_first_match(meta, rules, "reject"):
            mismatches += 1
    assert mismatches == 0

    # ACM: random grant/revoke against a set-algebra oracle
    acm = AccessControlMatrix()
    oracle: set[tuple[int, int, str]] = set()
    for _ in range(2000):
        s, o = rng.randint(0, 9), rng.randint(0, 9)
        right = rng.choice(["invoke", "manage", "adapt", "read-log"])
        if rng.random() < 0.5:
            acm.grant(s, o, right)
            oracle.add((s, o, right))
        else:
            acm.revoke(s, o, right)
            oracle.discard((s, o, right))
    assert set(acm.entries()) == oracle

    # encryption: 100 frames, one flipped bit each -> 100 auth failures
    key = bytes.fromhex("00112233445566778899aabbccddeeff")
    auth_errors = 0
    for i in range(100):
        envelope = bytearray(encrypt_envelope(f"frame {i}".encode(), key, rng=rng))
        index = rng.randrange(4, len(envelope))
        envelope[index] ^= 1 << rng.randrange(8)
        try:
            decrypt_envelope(bytes(envelope), key)
        except AuthError:
            auth_errors += 1
    assert auth_errors == 100

    # audit conservation: entries == terminal envelopes in a mixed run
    eco = make_ecosystem()
    instance = eco.spawn_service(
        DemoServiceSpec(name="Max-1", functions=("Max",), host_id="alpha", port=9100)
    )
    eco.settle()
    sid = instance.service_id
    eco.acm.grant(24, sid, "invoke")
    mids = [eco.submit(max_request(eco, sid)) for _ in range(5)]
    denied = EclMessage(
        source_ip="192.168.1.20",
        destination_ip="192.168.1.177",
        source_id=66,
        destination_id=sid,
        function_invoked="Max",
        params=(),
        return_type="int",
        stamp=make_stamp(eco.clock.now()),
    )
    eco.submit(denied)
    eco.bus.submit(max_request(eco, sid), message_id=mids[0])  # replay
    eco.advance_to(30.0)
    counts = eco.bus.conservation()
    terminal = counts["delivered"] + counts["quarantined"] + counts["rejected"]
    assert counts["queued"] == 0
    assert len(eco.audit) == terminal
    ok("ESU oracles (firewall 50x200, ACM set algebra, 100/100 tamper detections, audit conservation)")


def test_survivability_relation_and_recovery():
    stated_table = {
        (GOOD, "PolicyViolation"): VULNERABLE,
        (VULNERABLE, "ExploitDetected"): FAULT,
        (VULNERABLE, "VulnerabilityCleared"): GOOD,
        (FAULT, "RecoveryStarted"): RECOVERY,
        (RECOVERY, "RecoveryCompleted"): GOOD,
    }
    for state in STATES:
        for event in HEALTH_EVENTS:
            got = transition(HealthState(1, state=state), HealthEvent(event), 0.0).state
            assert got == stated_table.get((state, event), state)

    for start in STATES:
        reachable = {start}
        changed = True
        while changed:
            changed = False
            for s in list(reachable):
                for event in HEALTH_EVENTS:
                    nxt = TRANSITIONS.get((s, event), s)
                    if nxt not in reachable:
                        reachable.add(nxt)
                        changed = True
        assert GOOD in reachable

    from ecosys.security import ThreatSignature

    eco = make_ecosystem()
    instance = eco.spawn_service(
        DemoServiceSpec(name="Max-1", functions=("Max",), host_id="alpha", port=9100)
    )
    eco.settle()
    sid = instance.service_id
    eco.policy.signatures.append(ThreatSignature("sig", b"OWNED", "backdoor"))
    registry_before = len(eco.registry)

    eco.submit(max_request(eco, sid))  # no invoke right -> violation
    eco.settle()
    assert eco.monitor.state_of(sid).state == VULNERABLE
    exploit = EclMessage(
        source_ip="192.168.1.20",
        destination_ip="192.168.1.177",
        source_id=24,
        destination_id=sid,
        function_invoked="Max",
        params=(EclParam("OWNED", "string"),),
        return_type="int",
        stamp=make_stamp(eco.clock.now()),
    )
    eco.submit(exploit)
    eco.settle()

    transitions = [(e["fromState"], e["toState"]) for e in eco.events if e["type"] == "health"]
    assert transitions == [
        (GOOD, VULNERABLE),
        (VULNERABLE, FAULT),
        (FAULT, RECOVERY),
        (RECOVERY, GOOD),
    ]
    assert len(eco.registry) == registry_before
    ok("survivability (20-cell relation exact, Good reachable everywhere, scripted recovery ends Good)")


def test_monitoring_sweep_and_discover():
    rng = random.Random(13)
    registry = ServiceRegistry(rng=random.Random(99))
    timeout, now = 15.0, 200.0
    beats = {}
    for i in range(20):
        record = registry.insert_record("ECL", "10.0.0.1", i + 1, MAX_SDL, 0.0)
        beat = rng.uniform(now - 45.0, now)
        registry.touch(record.service_id, beat)
        beats[record.service_id] = beat
    expected_removed = sorted(sid for sid, beat in beats.items() if now - beat > timeout)
    assert sweep_unreachable(registry, now, timeout) == expected_removed

    registry = ServiceRegistry(rng=random.Random(98))
    names = ["Max", "MaxValue", "Maximum", "Min", "Sum", "Echo", "Mash", "Mix", "Map", "Hash"]
    for i, name in enumerate(names):
        sdl = SdlDocument(
            functions=(
                FunctionSig(
                    name,
                    tuple(rng.choice(["int", "double"]) for _ in range(rng.randint(0, 3))),
                    rng.choice(["int", "void"]),
                ),
            )
        )
        registry.insert_record("ECL", "10.0.0.1", 100 + i, sdl, 0.0)
    oracle = sorted(
        ((match_score(MAX_SDL, r.sdl), r.service_id) for r in registry.records()),
        key=lambda pair: (-pair[0], pair[1]),
    )
    got = [(r.score, r.service_id) for r in discover(registry, MAX_SDL, 0.0)]
    assert got == oracle
    ok("monitoring (sweep matches brute-force filter on 20 histories, discover matches exhaustive rank)")


def test_determinism_seeded_cli(tmp_path):
    script = tmp_path / "scenario.json"
    script.write_text(
        json.dumps(
            {
                "steps": [
                    {"at": 0, "action": "spawn", "name": "Max-1", "functions": ["Max"], "host": "alpha"},
                    {"at": 1, "action": "eml", "line": "grant 24 invoke on @Max-1"},
                    {
                        "at": 2,
                        "action": "submit",
                        "id": "m1",
                        "destination": "@Max-1",
                        "function": "Max",
                        "params": [["10", "int"], ["50", "int"]],
                        "return": "int",
                    },
                    {"at": 3, "action": "assert", "check": "response-value", "msg": "m1", "equals": "50"},
                    {"at": 20, "action": "advance"},
                ]
            }
        )
    )
    fw = tmp_path / "fw.xml"
    fw.write_text('<firewall default="reject"><rule order="1" verdict="accept" /></firewall>')
    key = tmp_path / "key.hex"
    key.write_text("00112233445566778899aabbccddeeff")
    config = tmp_path / "run.conf"
    config.write_text(
        f"firewall.rules-file = {fw}\nsecurity.encrypt = true\nsecurity.key-file = {key}\n"
    )
    t1, t2 = tmp_path / "t1", tmp_path / "t2"
    assert main_ecosysd(
        ["scenario", str(script), "--seed", "42", "--config", str(config), "--trace-out", str(t1)]
    ) == 0
    assert main_ecosysd(
        ["scenario", str(script), "--seed", "42", "--config", str(config), "--trace-out", str(t2)]
    ) == 0
    assert t1.read_bytes() == t2.read_bytes()
    assert len(t1.read_bytes()) > 0
    ok("determinism (seeded scenario CLI produces byte-identical traces)")
