"""Command line entry points: `ecosysd` (serve / scenario) and
`ecosys-ctl` (admin console REPL posting command lines to the HTTP API)."""
from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request

from .config import EcosystemConfig, load_config
from .scenario import ScenarioAssertionError, ScenarioRunner, load_scenario, trace_to_bytes


def main_ecosysd(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ecosysd", description="ecosystem runtime daemon")
    sub = parser.add_subparsers(dest="cmd", required=True)

    serve_p = sub.add_parser("serve", help="run the bus and admin API")
    serve_p.add_argument("--config", required=False, help="key=value config file")

    scen_p = sub.add_parser("scenario", help="replay a scripted run on the virtual clock")
    scen_p.add_argument("script", help="scenario JSON file")
    scen_p.add_argument("--seed", type=int, default=0)
    scen_p.add_argument("--config", required=False)
    scen_p.add_argument("--trace-out", required=False, help="write the trace here instead of stdout")

    args = parser.parse_args(argv)

    if args.cmd == "serve":
        return _cmd_serve(args)
    return _cmd_scenario(args)


def _load(args) -> EcosystemConfig:
    if args.config:
        return load_config(args.config)
    return EcosystemConfig()


def _cmd_serve(args) -> int:
    from .daemon import serve

    try:
        config = _load(args)
        daemon = serve(config)
    except Exception as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    print(f"bus listening on 127.0.0.1:{daemon.bus_port}")
    print(f"admin API on http://127.0.0.1:{daemon.admin_port}")
    try:
        import signal
        import threading

        stopper = threading.Event()
        signal.signal(signal.SIGINT, lambda *a: stopper.set())
        signal.signal(signal.SIGTERM, lambda *a: stopper.set())
        stopper.wait()
    finally:
        daemon.stop()
    return 0


def _cmd_scenario(args) -> int:
    try:
        config = _load(args)
        steps = load_scenario(args.script)
    except Exception as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    runner = ScenarioRunner(config=config, seed=args.seed)
    code = 0
    try:
        trace = runner.run(steps)
    except ScenarioAssertionError as exc:
        trace = runner.trace
        print(f"scenario assertions failed: {exc}", file=sys.stderr)
        code = 2
    payload = trace_to_bytes(trace)
    if args.trace_out:
        with open(args.trace_out, "wb") as f:
            f.write(payload)
    else:
        sys.stdout.buffer.write(payload)
    return code


def main_ctl(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ecosys-ctl", description="admin console")
    parser.add_argument("url", help="admin API base URL, e.g. http://127.0.0.1:7421")
    parser.add_argument("-c", "--command", help="run one command line and exit")
    args = parser.parse_args(argv)

    base = args.url.rstrip("/")
    if args.command is not None:
        return _post_line(base, args.command)

    print("ecosys-ctl console; 'exit' quits")
    while True:
        try:
            line = input("eml> ")
        except EOFError:
            break
        if line.strip() in ("exit", "quit"):
            break
        if not line.strip():
            continue
        _post_line(base, line)
    return 0


def _post_line(base: str, line: str) -> int:
    req = urllib.request.Request(
        base + "/eml",
        data=line.encode("utf-8"),
        headers={"Content-Type": "text/plain"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            doc = json.loads(resp.read().decode("utf-8"))
    except urllib.error.URLError as exc:
        print(f"cannot reach {base}: {exc}", file=sys.stderr)
        return 1
    marker = "ok" if doc.get("ok") else f"error[{doc.get('error')}]"
    print(f"{marker}: {doc.get('output', '')}")
    return 0 if doc.get("ok") else 1


if __name__ == "__main__":
    raise SystemExit(main_ecosysd())
