"""Mobile-core topology: entities, reference checks, static facts and the telemetry model."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import jsonschema

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "data" / "schema"

# added to a UE's one-way latency at full gateway load
LOAD_DELAY_MS = 20.0


class InvalidTopology(ValueError):
    pass


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict[str, Any]:
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text(encoding="utf-8"))


def schema_errors(obj: Any, name: str) -> list[str]:
    validator = jsonschema.Draft202012Validator(load_schema(name))
    return [
        f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
        for e in sorted(validator.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))
    ]


def qoe(delay_ms: float, requirement_ms: float) -> float:
    """1 at or below the requirement, falling linearly to 0 at three times it."""
    return min(1.0, max(0.0, 1.0 - (delay_ms - requirement_ms) / (2.0 * requirement_ms)))


@dataclass
class Cell:
    id: str
    region: str
    capacity_mbps: float
    density: float = 0.5


@dataclass
class AccessPoint:
    id: str
    technology: str
    covers: str
    bandwidth_mbps: float
    gateway: str
    qos_classes: list[str] = field(default_factory=lambda: ["best_effort"])
    protocols: list[str] = field(default_factory=lambda: ["ipv4"])
    background_load: float = 0.0
    active: bool = True


@dataclass
class Gateway:
    id: str
    region: str
    capacity_mbps: float
    load: float = 0.3
    jitter_ms: float = 5.0
    path_delay_ms: dict[str, float] = field(default_factory=dict)
    default_delay_ms: float = 20.0

    def delay_to(self, cell: str) -> float:
        return self.path_delay_ms.get(cell, self.default_delay_ms)


@dataclass
class DataCenter:
    id: str
    headroom: float
    delay_ms: dict[str, float] = field(default_factory=dict)
    default_delay_ms: float = 50.0

    def delay_to(self, cell: str) -> float:
        return self.delay_ms.get(cell, self.default_delay_ms)


@dataclass
class Service:
    id: str
    host: str
    cpu: float
    latency_requirement_ms: float


@dataclass
class UE:
    id: str
    cell: str
    anchor: str
    access_point: str
    apps: list[str] = field(default_factory=list)
    demand_mbps: float = 10.0
    protocols: list[str] = field(default_factory=lambda: ["ipv4"])
    cpu_load: float = 0.3
    monitored: bool = True
    qos_cap_mbps: float | None = None

    @property
    def protocol_set(self) -> str:
        return ",".join(sorted(set(self.protocols)))


def _protocol_key(protocols: list[str]) -> str:
    return ",".join(sorted(set(protocols)))


COLLECTIONS = {
    "regions": None,
    "cells": Cell,
    "access_points": AccessPoint,
    "gateways": Gateway,
    "data_centers": DataCenter,
    "services": Service,
    "ues": UE,
}


@dataclass
class Topology:
    regions: list[str]
    cells: dict[str, Cell]
    access_points: dict[str, AccessPoint]
    gateways: dict[str, Gateway]
    data_centers: dict[str, DataCenter]
    services: dict[str, Service]
    ues: dict[str, UE]
    # multiplicative demand factor per region, set by congestion events
    demand_factor: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Topology":
        errors = schema_errors(obj, "topology")
        if errors:
            raise InvalidTopology("; ".join(errors))
        obj = copy.deepcopy(obj)
        built: dict[str, dict] = {}
        for key, kind in COLLECTIONS.items():
            if kind is None:
                continue
            items: dict = {}
            for item in obj.get(key, []):
                if item["id"] in items:
                    raise InvalidTopology(f"{key}: duplicate id {item['id']!r}")
                items[item["id"]] = kind(**item)
            built[key] = items
        regions = [r["id"] for r in obj["regions"]]
        if len(set(regions)) != len(regions):
            raise InvalidTopology("regions: duplicate id")
        topo = cls(regions, **built)
        topo.check_references()
        return topo

    @classmethod
    def from_file(cls, path: str | Path) -> "Topology":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def check_references(self) -> None:
        errs = []

        def need(what: str, ref: str, pool) -> None:
            if ref not in pool:
                errs.append(f"{what} references unknown {ref!r}")

        for c in self.cells.values():
            need(f"cell {c.id}", c.region, self.regions)
        for ap in self.access_points.values():
            need(f"access point {ap.id}", ap.covers, self.cells)
            need(f"access point {ap.id}", ap.gateway, self.gateways)
        for g in self.gateways.values():
            need(f"gateway {g.id}", g.region, self.regions)
            for cell in g.path_delay_ms:
                need(f"gateway {g.id} path delay", cell, self.cells)
        for d in self.data_centers.values():
            for cell in d.delay_ms:
                need(f"data center {d.id} delay", cell, self.cells)
        for s in self.services.values():
            need(f"service {s.id}", s.host, self.data_centers)
        all_ids: set[str] = set(self.regions)
        for key in COLLECTIONS:
            if key != "regions":
                pool = getattr(self, key)
                clash = all_ids & set(pool)
                if clash:
                    errs.append(f"ids used by more than one entity: {sorted(clash)}")
                all_ids |= set(pool)
        for u in self.ues.values():
            need(f"UE {u.id}", u.cell, self.cells)
            need(f"UE {u.id}", u.anchor, self.gateways)
            need(f"UE {u.id}", u.access_point, self.access_points)
        if errs:
            raise InvalidTopology("; ".join(errs))

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"regions": [{"id": r} for r in self.regions]}
        for key, kind in COLLECTIONS.items():
            if kind is None:
                continue
            items = []
            for obj in getattr(self, key).values():
                d = dict(obj.__dict__)
                d.pop("qos_cap_mbps", None)
                items.append(d)
            out[key] = items
        return out

    # -- static facts --

    def static_facts(self) -> list[tuple[str, str, Any]]:
        """(subject, attribute, value) triples describing the configuration."""
        out: list[tuple[str, str, Any]] = []
        for c in self.cells.values():
            out += [(c.id, "region", c.region), (c.id, "capacity", float(c.capacity_mbps))]
        for ap in self.access_points.values():
            if ap.active:
                out += self.ap_facts(ap.id)
        for g in self.gateways.values():
            out.append((g.id, "region", g.region))
        for s in self.services.values():
            out += self.service_facts(s.id)
        for u in self.ues.values():
            out += self.ue_facts(u.id)
        return out

    def ap_facts(self, ap_id: str) -> list[tuple[str, str, Any]]:
        ap = self.access_points[ap_id]
        return [
            (ap.id, "technology", ap.technology),
            (ap.id, "covers", ap.covers),
            (ap.id, "protocols", _protocol_key(ap.protocols)),
            (ap.id, "bandwidth", float(ap.bandwidth_mbps)),
            (ap.id, "connected_gw", ap.gateway),
        ]

    def service_facts(self, service_id: str) -> list[tuple[str, str, Any]]:
        s = self.services[service_id]
        return [(s.id, "hosted_at", s.host), (s.id, "latency_requirement", float(s.latency_requirement_ms))]

    def ue_facts(self, ue_id: str) -> list[tuple[str, str, Any]]:
        u = self.ues[ue_id]
        out = [
            (u.id, "cell", u.cell),
            (u.id, "anchor", u.anchor),
            (u.id, "access_point", u.access_point),
            (u.id, "protocols", u.protocol_set),
        ]
        if u.apps:
            out.append((u.id, "app", u.apps[0]))
        return out

    # -- telemetry model --

    def region_of(self, ue: UE) -> str:
        return self.cells[ue.cell].region

    def offered(self, ue: UE) -> float:
        d = ue.demand_mbps * self.demand_factor.get(self.region_of(ue), 1.0)
        return d if ue.qos_cap_mbps is None else min(d, ue.qos_cap_mbps)

    def cell_demand(self, cell_id: str) -> float:
        return math.fsum(self.offered(u) for u in self.ues.values() if u.cell == cell_id)

    def cell_utilization(self, cell_id: str) -> float:
        return min(1.0, self.cell_demand(cell_id) / self.cells[cell_id].capacity_mbps)

    def region_cells(self, region: str) -> list[Cell]:
        return [c for c in self.cells.values() if c.region == region]

    def region_utilization(self, region: str) -> float:
        cells = self.region_cells(region)
        cap = math.fsum(c.capacity_mbps for c in cells)
        if cap == 0:
            return 0.0
        served = math.fsum(min(self.cell_demand(c.id), c.capacity_mbps) for c in cells)
        return served / cap

    def region_throughput_ratio(self, region: str) -> float:
        cells = self.region_cells(region)
        offered = math.fsum(self.cell_demand(c.id) for c in cells)
        if offered == 0:
            return 1.0
        served = math.fsum(min(self.cell_demand(c.id), c.capacity_mbps) for c in cells)
        return served / offered

    def ap_load(self, ap_id: str, exclude: str | None = None) -> float:
        ap = self.access_points[ap_id]
        attached = math.fsum(
            self.offered(u) for u in self.ues.values() if u.access_point == ap_id and u.id != exclude
        )
        return ap.background_load + attached / ap.bandwidth_mbps

    def gateway_throughput(self, gw_id: str) -> float:
        return math.fsum(self.offered(u) for u in self.ues.values() if u.anchor == gw_id)

    def ue_latency(self, ue_id: str, gw_id: str | None = None) -> float:
        u = self.ues[ue_id]
        g = self.gateways[gw_id or u.anchor]
        return g.delay_to(u.cell) + g.jitter_ms + LOAD_DELAY_MS * g.load

    def service_users(self, service_id: str) -> list[UE]:
        return [u for u in self.ues.values() if service_id in u.apps]

    def service_delay(self, service_id: str, dc_id: str | None = None) -> float | None:
        users = self.service_users(service_id)
        if not users:
            return None
        dc = self.data_centers[dc_id or self.services[service_id].host]
        return math.fsum(dc.delay_to(u.cell) for u in users) / len(users)

    def service_qoe(self, service_id: str, dc_id: str | None = None) -> float | None:
        users = self.service_users(service_id)
        if not users:
            return None
        s = self.services[service_id]
        dc = self.data_centers[dc_id or s.host]
        return math.fsum(qoe(dc.delay_to(u.cell), s.latency_requirement_ms) for u in users) / len(users)
