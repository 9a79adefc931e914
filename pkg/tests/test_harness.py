"""Runtime skin: configuration parsing, the scenario runner and its
determinism, the daemon's TCP and admin HTTP surfaces, and restart
continuity from the registry log."""
from __future__ import annotations

import json
import socket
import time
import urllib.request

import pytest

from conftest import make_ecosystem, max_request
from ecosys.cli import main_ctl, main_ecosysd
from ecosys.config import ConfigError, EcosystemConfig, parse_config
from ecosys.daemon import Daemon
from ecosys.ecl import parse_ecl, recv_frame, send_frame, serialize_ecl
from ecosys.scenario import (
    ScenarioError,
    ScenarioRunner,
    load_scenario,
    steps_from_doc,
    trace_to_bytes,
)
from ecosys.sdl import sdl_to_xml
from ecosys.security import decrypt_envelope, encrypt_envelope
from ecosys.services import DemoServiceSpec


class TestConfig:
    def test_defaults(self):
        config = parse_config("")
        assert config.bus_port == 7420
        assert config.heartbeat_period == 5.0

    def test_round_values(self):
        config = parse_config("bus.port = 9000\nsecurity.encrypt = true\nheartbeat.timeout=20")
        assert config.bus_port == 9000
        assert config.security_encrypt is True
        assert config.heartbeat_timeout == 20.0

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError) as err:
            parse_config("bus.prot = 1")
        assert "bus.prot" in str(err.value)

    def test_bad_value_type(self):
        with pytest.raises(ConfigError):
            parse_config("bus.port = lots")


class TestScenarioRunner:
    def test_empty_script_empty_trace(self):
        assert ScenarioRunner(seed=1).run([]) == []

    def test_times_must_not_decrease(self):
        with pytest.raises(ScenarioError):
            steps_from_doc({"steps": [{"at": 5, "action": "advance"}, {"at": 1, "action": "advance"}]})

    def test_end_to_end_max_scenario(self):
        steps = steps_from_doc(
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
                    {"at": 3, "action": "assert", "check": "registry-count", "equals": 1},
                ]
            }
        )
        runner = ScenarioRunner(seed=7)
        runner.eco.policy.firewall_rules.append(
            __import__("ecosys.security", fromlist=["FirewallRule"]).FirewallRule(order=1, verdict="accept")
        )
        trace = runner.run(steps)
        asserts = [t for t in trace if t["type"] == "assert"]
        assert asserts and all(t["ok"] for t in asserts)

    def test_seeded_rerun_is_byte_identical(self, tmp_path):
        config_text = (
            "security.encrypt = true\n"
            f"security.key-file = {tmp_path / 'key.hex'}\n"
            f"firewall.rules-file = {tmp_path / 'fw.xml'}\n"
        )
        (tmp_path / "key.hex").write_text("00112233445566778899aabbccddeeff")
        (tmp_path / "fw.xml").write_text(
            '<firewall default="reject"><rule order="1" verdict="accept" /></firewall>'
        )
        steps_doc = {
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
                {"at": 10, "action": "advance"},
            ]
        }

        def run_once() -> bytes:
            config = parse_config(config_text)
            runner = ScenarioRunner(config=config, seed=42)
            return trace_to_bytes(runner.run(steps_from_doc(steps_doc)))

        assert run_once() == run_once()

    def test_shipped_demo_scenario_passes(self, monkeypatch):
        monkeypatch.chdir("/root/pkg")
        from ecosys.config import load_config

        steps = load_scenario("scripts/demo_scenario.json")
        runner = ScenarioRunner(config=load_config("scripts/demo_config.conf"), seed=42)
        trace = runner.run(steps)
        asserts = [t for t in trace if t["type"] == "assert"]
        assert asserts and all(t["ok"] for t in asserts)


class TestCli:
    def test_scenario_determinism_through_cli(self, tmp_path, capsys):
        script = tmp_path / "s.json"
        script.write_text(
            json.dumps(
                {
                    "steps": [
                        {"at": 0, "action": "spawn", "name": "E", "functions": ["Echo"], "host": "alpha"},
                        {"at": 5, "action": "advance"},
                    ]
                }
            )
        )
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        assert main_ecosysd(["scenario", str(script), "--seed", "42", "--trace-out", str(out1)]) == 0
        assert main_ecosysd(["scenario", str(script), "--seed", "42", "--trace-out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert main_ecosysd(["scenario", str(script), "--seed", "7", "--trace-out", str(out2)]) == 0
        assert out1.read_bytes() != out2.read_bytes()

    def test_bad_config_key_fails_startup(self, tmp_path, capsys):
        config = tmp_path / "bad.conf"
        config.write_text("bus.prot = 1\n")
        script = tmp_path / "s.json"
        script.write_text(json.dumps({"steps": []}))
        code = main_ecosysd(["scenario", str(script), "--config", str(config)])
        captured = capsys.readouterr()
        assert code == 1
        assert "bus.prot" in captured.err


@pytest.fixture
def daemon(tmp_path):
    key = tmp_path / "key.hex"
    key.write_text("00112233445566778899aabbccddeeff")
    fw = tmp_path / "fw.xml"
    fw.write_text('<firewall default="reject"><rule order="1" verdict="accept" /></firewall>')
    config = EcosystemConfig(
        bus_port=0,
        admin_port=0,
        security_encrypt=True,
        security_key_file=str(key),
        firewall_rules_file=str(fw),
        registry_log_file=str(tmp_path / "registry.log"),
        seed=42,
    )
    d = Daemon(config)
    d.start()
    yield d
    d.stop()


def admin_get(daemon: Daemon, path: str) -> dict:
    with urllib.request.urlopen(
        f"http://127.0.0.1:{daemon.admin_port}{path}", timeout=10
    ) as resp:
        return json.loads(resp.read().decode("utf-8"))


def admin_post(daemon: Daemon, path: str, body: bytes, content_type="text/plain") -> dict:
    req = urllib.request.Request(
        f"http://127.0.0.1:{daemon.admin_port}{path}",
        data=body,
        headers={"Content-Type": content_type},
        method="POST",
    )
    with urllib.request.urlopen(req, timeout=10) as resp:
        return json.loads(resp.read().decode("utf-8"))


class TestDaemon:
    def test_both_ports_listening_and_full_wire_round_trip(self, daemon):
        assert admin_get(daemon, "/registry") == {"services": []}

        instance = daemon.loop.call(
            lambda: daemon.eco.spawn_service(
                DemoServiceSpec(name="Max-1", functions=("Max",), host_id="alpha", port=9100)
            )
        )
        deadline = time.monotonic() + 5
        while time.monotonic() < deadline and instance.service_id is None:
            time.sleep(0.05)
        assert instance.service_id is not None
        sid = instance.service_id

        result = admin_post(daemon, "/eml", f"grant 24 invoke on {sid}".encode())
        assert result["ok"]

        key = daemon.eco.key
        request = max_request(daemon.eco, sid)
        payload = encrypt_envelope(serialize_ecl(request).encode("utf-8"), key)
        with socket.create_connection(("127.0.0.1", daemon.bus_port), timeout=10) as sock:
            send_frame(sock, payload)
            reply = recv_frame(sock)
        response = parse_ecl(decrypt_envelope(reply, key).decode("utf-8"))
        assert response.return_value == "50"
        assert response.status == "Ok"

        registry = admin_get(daemon, "/registry")["services"]
        assert [r["serviceID"] for r in registry] == [sid]
        health = admin_get(daemon, "/health")["services"]
        assert health and health[0]["state"] == "Good"
        metrics = admin_get(daemon, "/metrics")
        assert metrics["bus"]["delivered"] >= 1
        logs = admin_get(daemon, f"/logs?service={sid}")["entries"]
        assert any(e["functionInvoked"] == "Max" for e in logs)

    def test_wmi_endpoint(self, daemon):
        instance = daemon.loop.call(
            lambda: daemon.eco.spawn_service(
                DemoServiceSpec(name="E", functions=("Echo",), host_id="alpha", port=9200)
            )
        )
        deadline = time.monotonic() + 5
        while time.monotonic() < deadline and instance.service_id is None:
            time.sleep(0.05)
        sid = instance.service_id
        doc = admin_post(
            daemon,
            "/wmi",
            json.dumps({"serviceID": sid, "script": f"set disk {sid} 2048"}).encode(),
            content_type="application/json",
        )
        assert doc["ack"] is True
        doc = admin_post(
            daemon,
            "/wmi",
            json.dumps({"serviceID": sid, "script": f"set memory {sid} 99999999"}).encode(),
            content_type="application/json",
        )
        assert doc["ack"] is False

    def test_event_stream_delivers(self, daemon):
        daemon.loop.call(
            lambda: daemon.eco.spawn_service(
                DemoServiceSpec(name="S", functions=("Sum",), host_id="beta", port=9300)
            )
        )
        deadline = time.monotonic() + 5
        body = b""
        with urllib.request.urlopen(
            f"http://127.0.0.1:{daemon.admin_port}/events?max=1", timeout=10
        ) as resp:
            body = resp.read()
        assert b"data:" in body

    def test_ctl_one_shot(self, daemon, capsys):
        code = main_ctl([f"http://127.0.0.1:{daemon.admin_port}", "-c", "list"])
        captured = capsys.readouterr()
        assert code == 0
        assert "ok" in captured.out


class TestSpawning:
    def test_twenty_five_spawns_make_twenty_five_records(self):
        eco = make_ecosystem()
        eco.add_host("roomy", "10.2.0.1", cpu=32, memory_mb=32768, disk_mb=262144, bandwidth_mbps=4000)
        for i in range(25):
            eco.spawn_service(DemoServiceSpec(name=f"svc-{i}", functions=("Echo",), host_id="roomy"))
        eco.settle()
        assert len(eco.registry) == 25  # count oracle
        assert len({r.service_id for r in eco.registry.records()}) == 25

    def test_malformed_sdl_admission_rejected_on_the_bus(self):
        from ecosys.bus import INTEGRATION_FUNCTION
        from ecosys.ecl import EclMessage, EclParam, make_stamp
        from ecosys.registry import BUS_ID

        eco = make_ecosystem()
        bad_sdl = (
            "<sdl><protocol>ECL</protocol><description></description><functions>"
            "<function><name>F</name><functionParams><type>void</type></functionParams>"
            "<functionReturnType>int</functionReturnType></function></functions></sdl>"
        )
        message = EclMessage(
            source_ip="192.168.1.50",
            destination_ip="10.0.0.1",
            source_id=0,
            destination_id=BUS_ID,
            function_invoked=INTEGRATION_FUNCTION,
            params=(EclParam(bad_sdl, "string"), EclParam("9400", "int"), EclParam("ECL", "string")),
            return_type="string",
            stamp=make_stamp(0.0),
        )
        mid = eco.submit(message)
        eco.settle()
        response = eco.bus.response_for(mid)
        assert response is not None and response.status == "Error"
        assert "void" in (response.return_value or "")
        assert len(eco.registry) == 0


class TestQuietLongRun:
    def test_default_deny_empty_system_stays_empty_over_long_virtual_run(self):
        eco = make_ecosystem(permissive=False)  # empty rule tables, default deny
        eco.advance_to(100_000.0)
        counts = eco.bus.conservation()
        assert counts["submitted"] == 0
        assert counts["delivered"] == 0
        assert len(eco.registry) == 0
        assert len(eco.audit) == 0
        assert eco.events == []
        assert eco.bus.envelopes == []


class TestRestartContinuity:
    def test_registry_replayed_after_restart(self, tmp_path):
        log = tmp_path / "registry.log"
        sdl_file = tmp_path / "svc.sdl"
        spec = DemoServiceSpec(name="seed", functions=("Max",), host_id="alpha")
        sdl_file.write_text(sdl_to_xml(spec.sdl()))

        config = EcosystemConfig(registry_log_file=str(log), seed=1)
        eco1 = make_ecosystem(registry_log_file=str(log), seed=1)
        result = eco1.execute_eml(f'bind 192.168.1.177 9100 "{sdl_file}"')
        assert result.ok
        digest = eco1.registry.state_digest()

        eco2 = make_ecosystem(registry_log_file=str(log), seed=99)
        assert eco2.registry.state_digest() == digest
        assert len(eco2.registry) == 1
