"""Scenario specifications and the timed event script."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..rules import SHIPPED_DIR
from .topology import COLLECTIONS, InvalidTopology, Topology, schema_errors

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"
SHIPPED_SCENARIOS = (
    "scenario1_congestion",
    "scenario2_anchor",
    "scenario3_service_point",
    "scenario4_multi_access",
)

# attributes a set/ramp event may change
SETTABLE = {
    "cells": {"density"},
    "access_points": {"background_load"},
    "gateways": {"load", "jitter_ms"},
    "data_centers": {"headroom"},
    "ues": {"cpu_load", "demand_mbps"},
}


class InvalidScenario(ValueError):
    pass


def _ms(seconds: float) -> int:
    return int(round(seconds * 1000))


@dataclass(frozen=True)
class ScriptEvent:
    at_ms: int
    kind: str
    params: dict[str, Any]
    anomaly: bool = False

    def to_json(self) -> dict[str, Any]:
        return {"at_ms": self.at_ms, "kind": self.kind, "anomaly": self.anomaly, **self.params}


@dataclass
class ScenarioSpec:
    name: str
    topology: dict[str, Any]
    rules: dict[str, str]  # file name -> rule text, in load order
    model: str
    seed: int = 0
    duration_ms: int = 600_000
    tick_ms: int = 1000
    warmup_ms: int | None = None
    noise_sigma: float = 0.05
    nfs: list[dict[str, Any]] = field(default_factory=list)
    events: list[ScriptEvent] = field(default_factory=list)
    description: str = ""

    @classmethod
    def from_json(cls, obj: dict[str, Any], base: Path | None = None) -> "ScenarioSpec":
        errors = schema_errors(obj, "scenario")
        if errors:
            raise InvalidScenario("; ".join(errors))
        base = base or SCENARIO_DIR
        topo_path = _resolve(obj["topology"], base, SCENARIO_DIR)
        with open(topo_path, encoding="utf-8") as fh:
            topology = json.load(fh)
        rules = {name: _resolve(name, base, SHIPPED_DIR).read_text(encoding="utf-8") for name in obj["rules"]}
        model = _resolve(obj.get("model", "model.rules"), base, SHIPPED_DIR).read_text(encoding="utf-8")
        events = []
        for e in obj.get("events", []):
            params = {k: v for k, v in e.items() if k not in ("at_s", "kind", "anomaly")}
            if "duration_s" in params:
                params["duration_ms"] = _ms(params.pop("duration_s"))
            events.append(ScriptEvent(_ms(e["at_s"]), e["kind"], params, bool(e.get("anomaly", False))))
        spec = cls(
            name=obj["name"],
            topology=topology,
            rules=rules,
            model=model,
            seed=obj.get("seed", 0),
            duration_ms=_ms(obj.get("duration_s", 600)),
            tick_ms=_ms(obj.get("tick_s", 1)),
            warmup_ms=_ms(obj["warmup_s"]) if "warmup_s" in obj else None,
            noise_sigma=obj.get("noise_sigma", 0.05),
            nfs=list(obj.get("nfs", [])),
            events=events,
            description=obj.get("description", ""),
        )
        spec.check()
        return spec

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioSpec":
        path = Path(path)
        if not path.exists() and path.suffix == "" and (SCENARIO_DIR / f"{path}.json").exists():
            path = SCENARIO_DIR / f"{path}.json"
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), path.parent)

    @classmethod
    def shipped(cls, name: str) -> "ScenarioSpec":
        return cls.from_file(SCENARIO_DIR / f"{name}.json")

    def check(self) -> None:
        times = [e.at_ms for e in self.events]
        if times != sorted(times):
            raise InvalidScenario("events must be sorted by time")
        if self.tick_ms <= 0 or self.duration_ms <= 0:
            raise InvalidScenario("tick and duration must be positive")
        topo = Topology.from_json(self.topology)
        for e in self.events:
            _check_event(e, topo)

    def without_anomalies(self) -> "ScenarioSpec":
        """The control variant: same topology and rules, anomaly events removed."""
        return ScenarioSpec(
            self.name, self.topology, self.rules, self.model, self.seed, self.duration_ms,
            self.tick_ms, self.warmup_ms, self.noise_sigma, self.nfs,
            [e for e in self.events if not e.anomaly], self.description,
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "topology": self.topology,
            "rules": self.rules,
            "model": self.model,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "tick_ms": self.tick_ms,
            "warmup_ms": self.warmup_ms,
            "noise_sigma": self.noise_sigma,
            "nfs": self.nfs,
            "events": [e.to_json() for e in self.events],
        }

    @classmethod
    def from_log_header(cls, obj: dict[str, Any]) -> "ScenarioSpec":
        """Rebuild a spec from the self-contained form written to the event log."""
        events = [
            ScriptEvent(e["at_ms"], e["kind"],
                        {k: v for k, v in e.items() if k not in ("at_ms", "kind", "anomaly")},
                        e["anomaly"])
            for e in obj["events"]
        ]
        return cls(obj["name"], obj["topology"], obj["rules"], obj["model"], obj["seed"],
                   obj["duration_ms"], obj["tick_ms"], obj["warmup_ms"], obj["noise_sigma"],
                   obj["nfs"], events, obj.get("description", ""))


def _resolve(name: str, base: Path, fallback: Path) -> Path:
    for candidate in (base / name, fallback / name):
        if candidate.exists():
            return candidate
    raise InvalidScenario(f"cannot find {name!r} (looked in {base} and {fallback})")


def parse_target(target: str) -> tuple[str, str, str]:
    parts = target.split(".")
    if len(parts) != 3:
        raise InvalidScenario(f"target {target!r} must look like collection.id.attribute")
    return parts[0], parts[1], parts[2]


def _check_event(e: ScriptEvent, topo: Topology) -> None:
    p = e.params
    if e.kind in ("set", "ramp"):
        coll, ident, attr = parse_target(p["target"])
        if attr not in SETTABLE.get(coll, ()):
            raise InvalidScenario(f"{p['target']}: {coll}.{attr} cannot be scripted")
        if ident not in getattr(topo, coll):
            raise InvalidScenario(f"{p['target']}: unknown {coll} id {ident!r}")
        if e.kind == "ramp" and p["duration_ms"] <= 0:
            raise InvalidScenario("ramp duration must be positive")
    elif e.kind == "ue_move":
        if p["ue"] not in topo.ues or p["cell"] not in topo.cells:
            raise InvalidScenario(f"ue_move references unknown UE or cell: {p}")
        ap = p.get("access_point")
        if ap is not None and ap not in topo.access_points:
            raise InvalidScenario(f"ue_move references unknown access point {ap!r}")
    elif e.kind == "ap_appear":
        if p["access_point"] not in topo.access_points:
            raise InvalidScenario(f"unknown access point {p['access_point']!r}")
    elif e.kind == "congestion_onset":
        if p["region"] not in topo.regions:
            raise InvalidScenario(f"unknown region {p['region']!r}")
        if p["factor"] <= 0:
            raise InvalidScenario("congestion factor must be positive")


@dataclass
class Ramp:
    collection: str
    ident: str
    attr: str
    start_ms: int
    duration_ms: int
    origin: float
    to: float

    def value(self, now: int) -> float:
        frac = min(1.0, (now - self.start_ms) / self.duration_ms)
        return self.origin + (self.to - self.origin) * frac

    def done(self, now: int) -> bool:
        return now >= self.start_ms + self.duration_ms


class Script:
    """Applies timed events to a topology; returns the static-fact subjects that changed."""

    def __init__(self, events: list[ScriptEvent]):
        self.pending = list(events)
        self.ramps: list[Ramp] = []

    def due(self, now: int) -> list[ScriptEvent]:
        out = []
        while self.pending and self.pending[0].at_ms <= now:
            out.append(self.pending.pop(0))
        return out

    def apply(self, e: ScriptEvent, topo: Topology, now: int) -> list[tuple[str, str, Any]]:
        p = e.params
        if e.kind == "set":
            coll, ident, attr = parse_target(p["target"])
            self.ramps = [r for r in self.ramps if (r.collection, r.ident, r.attr) != (coll, ident, attr)]
            setattr(getattr(topo, coll)[ident], attr, float(p["value"]))
            return []
        if e.kind == "ramp":
            coll, ident, attr = parse_target(p["target"])
            obj = getattr(topo, coll)[ident]
            self.ramps = [r for r in self.ramps if (r.collection, r.ident, r.attr) != (coll, ident, attr)]
            self.ramps.append(Ramp(coll, ident, attr, e.at_ms, p["duration_ms"], float(getattr(obj, attr)), float(p["to"])))
            return []
        if e.kind == "ue_move":
            ue = topo.ues[p["ue"]]
            ue.cell = p["cell"]
            changed: list[tuple[str, str, Any]] = [(ue.id, "cell", ue.cell)]
            if p.get("access_point"):
                ue.access_point = p["access_point"]
                changed.append((ue.id, "access_point", ue.access_point))
            return changed
        if e.kind == "ap_appear":
            ap = topo.access_points[p["access_point"]]
            ap.active = True
            return topo.ap_facts(ap.id)
        if e.kind == "congestion_onset":
            topo.demand_factor[p["region"]] = float(p["factor"])
            return []
        raise InvalidScenario(f"unknown event kind {e.kind!r}")

    def advance(self, topo: Topology, now: int) -> None:
        for r in self.ramps:
            setattr(getattr(topo, r.collection)[r.ident], r.attr, r.value(now))
        self.ramps = [r for r in self.ramps if not r.done(now)]


__all__ = [
    "COLLECTIONS",
    "InvalidScenario",
    "InvalidTopology",
    "Ramp",
    "ScenarioSpec",
    "Script",
    "ScriptEvent",
]
