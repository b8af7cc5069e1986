"""Run metrics, computed from event-log records only so a saved log can be re-scored."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from pathlib import Path
from typing import Any, Iterable


class MetricsAccumulator:
    def __init__(self):
        self.scenario = ""
        self.seed = None
        self.control = False
        self.first_anomaly_ms: int | None = None
        self.contexts: list[tuple[int, str]] = []
        self.by_topic: Counter = Counter()
        self.actions: Counter = Counter()
        self.constrained: set[str] = set()
        self.reselections: list[dict[str, Any]] = []
        self.relocations: list[dict[str, Any]] = []
        self.handovers = 0
        self.facts = 0
        self.envelopes = 0
        self.drops: dict[str, int] = {}
        self._acted: dict[tuple[int, str], set[str]] = defaultdict(set)

    def feed(self, rec: dict[str, Any]) -> None:
        kind = rec["kind"]
        if kind == "header":
            self.scenario = rec["spec"]["name"]
            self.seed = rec["spec"]["seed"]
            self.control = rec["control"]
        elif kind == "script":
            if rec["event"]["anomaly"] and self.first_anomaly_ms is None:
                self.first_anomaly_ms = rec["event"]["at_ms"]
        elif kind == "envelope":
            self.envelopes += 1
        elif kind == "fact":
            self.facts += 1
        elif kind == "context":
            self.contexts.append((rec["t"], rec["topic"]))
            self.by_topic[rec["topic"]] += 1
        elif kind == "action":
            self._action(rec)
        elif kind == "stats":
            self.drops = dict(rec["drops"])

    def _action(self, rec: dict[str, Any]) -> None:
        self.actions[rec["status"]] += 1
        self._acted[(rec["t"], rec["context"])].add(rec["nf"])
        if rec["status"] == "infeasible":
            return
        change, effect = rec["change"], rec["effect"]
        if rec["nf"] == "PolicyFunction":
            self.constrained |= set(effect.get("constrained", ()))
        elif "anchor" in change:
            self.reselections.append({
                "ue": rec["target"], "t": rec["t"], **change["anchor"],
                "latency_before_ms": effect["latency_before_ms"],
                "latency_after_ms": effect["latency_after_ms"],
            })
        elif "host" in change:
            self.relocations.append({
                "service": rec["target"], "t": rec["t"], **change["host"],
                "qoe_before": effect["qoe_before"], "qoe_after": effect["qoe_after"],
            })
        elif "access_point" in change:
            self.handovers += 1

    def report(self) -> dict[str, Any]:
        anomaly = self.first_anomaly_ms
        if anomaly is None:
            false_pos = len(self.contexts)
            first = None
        else:
            false_pos = sum(1 for t, _ in self.contexts if t < anomaly)
            first = next((t for t, _ in self.contexts if t >= anomaly), None)
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "control": self.control,
            "first_anomaly_ms": anomaly,
            "first_context_ms": first,
            "detection_latency_ms": None if first is None else first - anomaly,
            "false_positive_contexts": false_pos,
            "contexts": len(self.contexts),
            "contexts_by_topic": dict(sorted(self.by_topic.items())),
            "actions": {k: self.actions.get(k, 0) for k in ("applied", "noop", "infeasible")},
            "qos_constrained_subscribers": sorted(self.constrained),
            "anchor_reselections": self.reselections,
            "service_relocations": self.relocations,
            "handover_count": self.handovers,
            "bus_drops": self.drops,
            "conflict_actions": sum(1 for nfs in self._acted.values() if len(nfs) > 1),
            "facts": self.facts,
            "envelopes": self.envelopes,
        }


def metrics_from_records(records: Iterable[dict[str, Any]]) -> dict[str, Any]:
    acc = MetricsAccumulator()
    for rec in records:
        acc.feed(rec)
    return acc.report()


def read_log(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def metrics_from_log(path: str | Path) -> dict[str, Any]:
    return metrics_from_records(read_log(path))


def check_provenance(records: list[dict[str, Any]]) -> list[str]:
    """Walk action -> context -> rule -> facts -> envelopes; return every broken link."""
    header = next(r for r in records if r["kind"] == "header")
    rules = set(header["rule_names"])
    contexts = {r["msg_id"]: r for r in records if r["kind"] == "context"}
    facts = {r["fact_id"]: r for r in records if r["kind"] == "fact"}
    streams: dict[str, list[int]] = defaultdict(list)
    for r in records:
        if r["kind"] == "envelope":
            streams[r["topic"]].append(r["ts"])

    problems = []

    def fact_ok(fid: str, before: int, where: str) -> None:
        f = facts.get(fid)
        if f is None or f["asserted_at"] > before:
            problems.append(f"{where}: fact {fid} missing from the log")
            return
        for p in f["provenance"]:
            if "stream" in p:
                if not any(p["from"] <= ts < p["to"] for ts in streams.get(p["stream"], ())):
                    problems.append(f"{where}: fact {fid} has no envelope on {p['stream']} in [{p['from']}, {p['to']})")
            elif "rule" in p:
                if p["rule"] not in rules:
                    problems.append(f"{where}: fact {fid} derived by unknown rule {p['rule']}")
            elif p.get("source") != "topology":
                problems.append(f"{where}: fact {fid} has unknown provenance {p}")

    for r in records:
        if r["kind"] != "action":
            continue
        where = f"action {r['nf']}@{r['t']}"
        ctx = contexts.get(r["context"])
        if ctx is None or ctx["t"] > r["t"]:
            problems.append(f"{where}: context {r['context']} missing from the log")
            continue
        if ctx["rule"] not in rules:
            problems.append(f"{where}: context from unknown rule {ctx['rule']}")
        if not ctx["matched_facts"]:
            problems.append(f"{where}: context {r['context']} lists no facts")
        for fid in ctx["matched_facts"]:
            fact_ok(fid, ctx["t"], where)
    return problems
