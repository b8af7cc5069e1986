"""Command-line driver: run, replay, lint, metrics, serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from pathlib import Path

from .mcnsim import ScenarioSpec, Simulation, check_provenance, metrics_from_log, read_log
from .node import CGHF
from .rules import ContextModel, RuleSyntaxError, parse, shipped_model, validate


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    spec = ScenarioSpec.from_file(args.scenario)
    if args.seed is not None:
        spec.seed = args.seed
    sim = Simulation(spec, control=args.control)
    out = Path(args.out or Path("out") / (spec.name + ("-control" if args.control else "")))
    events, metrics = sim.write(out)
    report = json.loads(metrics.read_text(encoding="utf-8"))
    print(f"{spec.name}: {report['contexts']} contexts, {sum(report['actions'].values())} actions")
    print(f"wrote {events} and {metrics}")
    return 0


def cmd_replay(args) -> int:
    path = Path(args.log)
    records = read_log(path)
    header = records[0]
    if header.get("kind") != "header":
        print(f"{path}: first record is not a header", file=sys.stderr)
        return 2
    spec = ScenarioSpec.from_log_header(header["spec"])
    lines, _ = Simulation(spec, control=header["control"]).run()
    rerun = "".join(line + "\n" for line in lines)
    identical = rerun == path.read_text(encoding="utf-8")
    problems = check_provenance(records)
    print(f"replay: {'identical' if identical else 'DIFFERS'} ({len(lines)} records)")
    for p in problems:
        print(f"provenance: {p}")
    return 0 if identical and not problems else 1


def cmd_lint(args) -> int:
    text = Path(args.rules).read_text(encoding="utf-8")
    try:
        rs = parse(text)
    except RuleSyntaxError as exc:
        for e in exc.errors:
            print(f"{args.rules}:{e}")
        return 1
    model = ContextModel.from_file(args.model) if args.model else shipped_model()
    errors = validate(rs, model)
    for e in errors:
        print(f"{args.rules}:{e}")
    if not errors:
        print(f"{args.rules}: ok ({len(rs.entities)} entities, {len(rs.factdefs)} factdefs, {len(rs.rules)} rules)")
    return 1 if errors else 0


def cmd_metrics(args) -> int:
    _print_json(metrics_from_log(args.log))
    return 0


def cmd_serve(args) -> int:
    from .nbi import NBIServer, NBIService, principals_from_config

    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    base = Path(args.config).parent
    model = ContextModel.from_file(base / config["model"]) if "model" in config else shipped_model()
    node = CGHF(config.get("name", "cghf"), model)
    service = NBIService(node, principals_from_config(config))
    server = NBIServer(service, config.get("host", "127.0.0.1"), args.port or config.get("port", 7878))
    tick = float(config.get("tick_s", 1.0))
    stop = threading.Event()

    def loop():
        while not stop.wait(tick):
            node.step(int(time.time() * 1000))

    threading.Thread(target=loop, daemon=True).start()
    print(f"NBI listening on {server.server_address[0]}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cghf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write events.ndjson and metrics.json")
    p.add_argument("--scenario", required=True, help="scenario JSON file or shipped scenario name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--control", action="store_true", help="drop scripted anomalies (baseline run)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-run a logged scenario and compare byte for byte")
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("lint", help="parse and validate a rule file")
    p.add_argument("--rules", required=True)
    p.add_argument("--model", help="context model file (default: the shipped model)")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("metrics", help="derive the metrics report from an event log")
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("serve", help="serve the northbound interface over newline-delimited JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
