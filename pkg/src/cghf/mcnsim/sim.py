"""Deterministic tick-driven simulation of the mobile core around one CGHF.

Per tick: script events, telemetry publish, fact generation and inference,
then NF subscribers enforce actions. Every observable step is appended to the
event log as one compact, key-sorted JSON line.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from pathlib import Path
from typing import Any

from ..bus import Bus, Envelope
from ..facts import Fact
from ..node import CGHF, RuleLoadError
from ..rules import ContextModel, RuleSyntaxError, parse
from .metrics import MetricsAccumulator
from .nf import NFSubscriber, make_nf
from .scenario import ScenarioSpec, Script
from .topology import Topology

log = logging.getLogger(__name__)

# which static attribute an NF change rewrites
CHANGE_ATTRIBUTE = {"anchor": "anchor", "access_point": "access_point", "host": "hosted_at"}


def dumps(rec: dict[str, Any]) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), allow_nan=False)


class Simulation:
    def __init__(self, spec: ScenarioSpec, control: bool = False):
        self.spec = spec.without_anomalies() if control else spec
        self.control = control
        self.topo = Topology.from_json(self.spec.topology)
        self.now = 0
        self.bus = Bus(name="mcn", clock=lambda: self.now)
        try:
            model = ContextModel.from_ruleset(parse(self.spec.model))
        except RuleSyntaxError as exc:
            raise RuleLoadError(exc.errors) from None
        self.cghf = CGHF("cghf", model, self.bus)
        self.rule_names: list[str] = []
        windows = [0]
        for name, text in self.spec.rules.items():
            try:
                rs = parse(text)
            except RuleSyntaxError as exc:
                raise RuleLoadError(exc.errors) from None
            self.cghf.load(rs)
            self.rule_names += [r.name for r in rs.rules]
            windows += [d.window_ms for d in rs.factdefs]
        # facts are only generated once the longest window has filled
        self.warmup_ms = self.spec.warmup_ms if self.spec.warmup_ms is not None else max(windows)
        self.rng = random.Random(self.spec.seed)
        self.script = Script(self.spec.events)
        self.nfs: list[NFSubscriber] = [make_nf(n) for n in self.spec.nfs]
        for nf in self.nfs:
            nf.attach(self.bus)
        self._tap = self.bus.subscribe("raw/#", "event-log")
        self._seq: dict[str, int] = {}
        self.lines: list[str] = []
        self.metrics = MetricsAccumulator()
        self.finished = False
        self._record({"kind": "header", "control": control, "rule_names": self.rule_names,
                      "warmup_ms": self.warmup_ms, "spec": self.spec.to_json()})
        for subject, attr, value in self.topo.static_facts():
            self._static(subject, attr, value)

    # -- log --

    def _record(self, rec: dict[str, Any]) -> None:
        self.lines.append(dumps(rec))
        self.metrics.feed(rec)

    def _fact(self, fact: Fact) -> None:
        self._record({"kind": "fact", "t": self.now, **fact.to_json()})

    def _static(self, subject: str, attr: str, value: Any) -> None:
        self._fact(self.cghf.assert_static(subject, attr, value, self.now))

    # -- telemetry --

    def telemetry(self) -> list[tuple[str, str, float, str]]:
        """(source, topic, true value, unit) for every stream, in a fixed order."""
        t = self.topo
        out = []
        for r in t.regions:
            out.append(("access-nf", f"raw/region/{r}/cell_utilization", t.region_utilization(r), "ratio"))
            out.append(("ue-agent", f"raw/region/{r}/ue_throughput_ratio", t.region_throughput_ratio(r), "ratio"))
        for c in t.cells.values():
            out.append(("access-nf", f"raw/cell/{c.id}/utilization", t.cell_utilization(c.id), "ratio"))
            out.append(("access-nf", f"raw/cell/{c.id}/density", c.density, "ratio"))
        for ap in t.access_points.values():
            if ap.active:
                out.append(("access-nf", f"raw/ap/{ap.id}/load", t.ap_load(ap.id), "ratio"))
        for g in t.gateways.values():
            out.append(("dplane-monitor", f"raw/gw/{g.id}/throughput", t.gateway_throughput(g.id), "Mbps"))
            out.append(("anchor-monitor", f"raw/gw/{g.id}/load", g.load, "ratio"))
            out.append(("anchor-monitor", f"raw/gw/{g.id}/jitter", g.jitter_ms, "ms"))
        for d in t.data_centers.values():
            out.append(("dc-monitor", f"raw/dc/{d.id}/headroom", d.headroom, "cores"))
        for s in t.services.values():
            q = t.service_qoe(s.id)
            if q is not None:
                out.append(("ue-agent", f"raw/service/{s.id}/qoe", q, "score"))
                out.append(("flow-monitor", f"raw/service/{s.id}/latency", t.service_delay(s.id), "ms"))
        for u in t.ues.values():
            if u.monitored:
                out.append(("ue-agent", f"raw/ue/{u.id}/cpu_load", u.cpu_load, "ratio"))
                out.append(("dplane-monitor", f"raw/ue/{u.id}/latency", t.ue_latency(u.id), "ms"))
        return out

    def _noisy(self, value: float) -> float:
        sigma = self.spec.noise_sigma
        if sigma > 0:
            value *= 1.0 + self.rng.gauss(0.0, sigma)
        return round(max(0.0, value), 6)

    def _publish_telemetry(self) -> None:
        for source, topic, value, unit in self.telemetry():
            seq = self._seq[topic] = self._seq.get(topic, 0) + 1
            self.bus.publish(Envelope(topic, source, self.now, seq, {"value": self._noisy(value), "unit": unit}))
        while True:
            batch = self.bus.poll(self._tap, 10_000, now=self.now)
            if not batch:
                break
            for env in batch:
                self._record({"kind": "envelope", **env.to_json()})

    # -- the loop --

    def step(self) -> None:
        t = self.now
        for event in self.script.due(t):
            changed = self.script.apply(event, self.topo, t)
            self._record({"kind": "script", "t": t, "event": event.to_json()})
            for subject, attr, value in changed:
                self._static(subject, attr, value)
        self.script.advance(self.topo, t)
        self._publish_telemetry()
        if t >= self.warmup_ms:
            res = self.cghf.step(t)
            for fact in res.facts + res.derived:
                self._fact(fact)
            for ctx in res.contexts:
                self._record({"kind": "context", "t": ctx.produced_at, "msg_id": ctx.msg_id,
                              "topic": ctx.topic, **ctx.payload()})
            if res.budget_exceeded:
                self._record({"kind": "diagnostic", "t": t, "detail": "inference budget exceeded"})
        else:
            self.cghf.ingest(t)
        for nf in self.nfs:
            for ctx in nf.poll(self.bus, t):
                action = nf.enforce(ctx, self.topo, t)
                self._record({"kind": "action", **action.to_json()})
                if action.status == "applied":
                    for key, attr in CHANGE_ATTRIBUTE.items():
                        if key in action.change:
                            self._static(action.target, attr, action.change[key]["to"])
        self.now += self.spec.tick_ms

    def run(self) -> tuple[list[str], dict[str, Any]]:
        if not self.finished:
            while self.now < self.spec.duration_ms:
                self.step()
            self._record({
                "kind": "stats",
                "drops": self.bus.drop_counters(),
                "fact_diagnostics": len(self.cghf.facts.diagnostics),
                "rule_diagnostics": len(self.cghf.kb.diagnostics),
            })
            self.finished = True
        return self.lines, self.metrics.report()

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        lines, report = self.run()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        events = out / "events.ndjson"
        events.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        metrics = out / "metrics.json"
        metrics.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return events, metrics


def load_scenario(spec: ScenarioSpec | str | Path, control: bool = False, seed: int | None = None) -> Simulation:
    if not isinstance(spec, ScenarioSpec):
        spec = ScenarioSpec.from_file(spec)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    return Simulation(spec, control)


def run(spec: ScenarioSpec | str | Path, control: bool = False, seed: int | None = None):
    return load_scenario(spec, control, seed).run()
