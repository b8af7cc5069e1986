"""Control-plane NFs that subscribe to context and enforce actions on the topology.

Each enforcing NF enumerates its candidates exhaustively and records the
pre-action snapshot it scored, so the choice can be re-checked from the log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..bus import Bus, TopicPattern
from ..inference import Context
from .topology import Topology


class InfeasibleAction(Exception):
    def __init__(self, reason: str, snapshot: dict[str, Any] | None = None):
        self.reason = reason
        self.snapshot = snapshot or {}
        super().__init__(reason)


@dataclass
class Action:
    nf: str
    at_ms: int
    context: str  # msg_id of the triggering context
    topic: str
    status: str  # applied | noop | infeasible
    target: str = ""
    change: dict[str, Any] = field(default_factory=dict)
    objective: dict[str, Any] = field(default_factory=dict)
    snapshot: dict[str, Any] = field(default_factory=dict)
    effect: dict[str, Any] = field(default_factory=dict)
    reason: str = ""

    def to_json(self) -> dict[str, Any]:
        out = {
            "nf": self.nf,
            "t": self.at_ms,
            "context": self.context,
            "topic": self.topic,
            "status": self.status,
            "target": self.target,
            "change": self.change,
            "objective": self.objective,
            "snapshot": self.snapshot,
            "effect": self.effect,
        }
        if self.reason:
            out["reason"] = self.reason
        return out


# -- objectives, shared with the acceptance checks through the snapshot format --

def anchor_score(gw: dict[str, float], w_jitter: float, w_delay: float) -> float:
    return w_jitter * gw["jitter_ms"] * gw["load"] + w_delay * gw["path_delay_ms"]


def placement_score(dc: dict[str, Any]) -> float:
    return dc["mean_delay_ms"]


def attachment_score(ap: dict[str, float], demand: float, w_load: float, w_bw: float) -> float:
    return w_load * ap["load"] + w_bw * demand / ap["bandwidth_mbps"]


class NFSubscriber:
    kind = "NF"
    default_pattern = "context/#"
    owns: tuple[str, ...] = ()

    def __init__(self, pattern: str | None = None, params: dict[str, Any] | None = None):
        self.pattern = TopicPattern.parse(pattern or self.default_pattern)
        self.params = dict(params or {})
        self.handle: str | None = None

    def attach(self, bus: Bus) -> None:
        self.handle = bus.subscribe(self.pattern, self.kind).handle

    def poll(self, bus: Bus, now: int) -> list[Context]:
        return [Context.from_envelope(e) for e in bus.poll(self.handle, 10_000, now=now)]

    def param(self, name: str, default: float) -> float:
        return float(self.params.get(name, default))

    def enforce(self, ctx: Context, topo: Topology, now: int) -> Action:
        if not self.pattern.matches(ctx.topic):
            raise ValueError(f"{self.kind} is not subscribed to {ctx.topic}")
        action = Action(self.kind, now, ctx.msg_id or "", ctx.topic, "applied")
        try:
            self._enforce(ctx, topo, action)
        except InfeasibleAction as exc:
            action.status = "infeasible"
            action.reason = exc.reason
            action.snapshot = exc.snapshot
            action.change = {}
        return action

    def _enforce(self, ctx: Context, topo: Topology, action: Action) -> None:
        raise NotImplementedError

    @staticmethod
    def _field(ctx: Context, name: str, pool: dict) -> str:
        value = ctx.fields.get(name)
        if value not in pool:
            raise InfeasibleAction(f"context field {name}={value!r} does not name a known entity")
        return value


class PolicyFunction(NFSubscriber):
    """Constrains the QoS cap of every subscriber in a congested region."""

    kind = "PolicyFunction"
    default_pattern = "context/congestion/#"
    owns = ("qos_cap_mbps",)

    def _enforce(self, ctx, topo, action):
        region = ctx.fields.get("region")
        if region not in topo.regions:
            raise InfeasibleAction(f"unknown region {region!r}")
        cap = self.param("qos_cap_mbps", 10.0)
        affected = sorted(u.id for u in topo.ues.values() if topo.region_of(u) == region)
        changed = {}
        for uid in affected:
            ue = topo.ues[uid]
            if ue.qos_cap_mbps is None or ue.qos_cap_mbps > cap:
                changed[uid] = {"from": ue.qos_cap_mbps, "to": cap}
                ue.qos_cap_mbps = cap
        action.target = region
        action.change = {"qos_cap_mbps": changed}
        action.snapshot = {"region": region, "subscribers": affected, "cap_mbps": cap}
        action.effect = {"constrained": sorted(u.id for u in topo.ues.values() if u.qos_cap_mbps is not None)}
        if not changed:
            action.status = "noop"


class AnchorManager(NFSubscriber):
    """Reselects a UE's data-plane anchor: min w_j * jitter * load + w_d * path delay."""

    kind = "AnchorManager"
    default_pattern = "context/latency/#"
    owns = ("anchor",)

    def _enforce(self, ctx, topo, action):
        ue = topo.ues[self._field(ctx, "ue", topo.ues)]
        w_j = self.param("w_jitter", 1.0)
        w_d = self.param("w_delay", 1.0)
        max_load = self.param("max_load", 0.85)
        gws = {
            g.id: {"jitter_ms": g.jitter_ms, "load": g.load, "path_delay_ms": g.delay_to(ue.cell)}
            for g in topo.gateways.values()
        }
        snapshot = {"ue": ue.id, "current": ue.anchor, "gateways": gws,
                    "w_jitter": w_j, "w_delay": w_d, "max_load": max_load}
        current = anchor_score(gws[ue.anchor], w_j, w_d)
        scores = {gid: anchor_score(g, w_j, w_d) for gid, g in gws.items()
                  if gid != ue.anchor and g["load"] <= max_load}
        best = min(scores, key=lambda k: (scores[k], k), default=None)
        if best is None or scores[best] >= current:
            raise InfeasibleAction("no feasible gateway improves the objective", snapshot)
        before = topo.ue_latency(ue.id)
        old, ue.anchor = ue.anchor, best
        action.target = ue.id
        action.change = {"anchor": {"from": old, "to": best}}
        action.snapshot = snapshot
        action.objective = {"current": current, "chosen": scores[best], "candidates": scores}
        action.effect = {"latency_before_ms": before, "latency_after_ms": topo.ue_latency(ue.id)}


class ServicePlacer(NFSubscriber):
    """Relocates a service point to the data center with headroom closest to its users."""

    kind = "ServicePlacer"
    default_pattern = "context/qoe/#"
    owns = ("host",)

    def _enforce(self, ctx, topo, action):
        svc = topo.services[self._field(ctx, "service", topo.services)]
        users = topo.service_users(svc.id)
        if not users:
            raise InfeasibleAction(f"service {svc.id} has no users")
        dcs = {
            d.id: {"headroom": d.headroom, "mean_delay_ms": topo.service_delay(svc.id, d.id)}
            for d in topo.data_centers.values()
        }
        snapshot = {"service": svc.id, "current": svc.host, "cpu": svc.cpu, "data_centers": dcs}
        current = placement_score(dcs[svc.host])
        scores = {did: placement_score(d) for did, d in dcs.items()
                  if did != svc.host and d["headroom"] >= svc.cpu}
        best = min(scores, key=lambda k: (scores[k], k), default=None)
        if best is None or scores[best] >= current:
            raise InfeasibleAction("no data center with enough headroom improves the delay", snapshot)
        before = topo.service_qoe(svc.id)
        old = svc.host
        topo.data_centers[old].headroom += svc.cpu
        topo.data_centers[best].headroom -= svc.cpu
        svc.host = best
        action.target = svc.id
        action.change = {"host": {"from": old, "to": best}}
        action.snapshot = snapshot
        action.objective = {"current": current, "chosen": scores[best], "candidates": scores}
        action.effect = {"qoe_before": before, "qoe_after": topo.service_qoe(svc.id)}


class AccessFunction(NFSubscriber):
    """Redirects a UE to a better point of attachment: min w_l * load + w_b * demand / bandwidth."""

    kind = "AccessFunction"
    default_pattern = "context/attachment/#"
    owns = ("access_point",)

    def _enforce(self, ctx, topo, action):
        ue = topo.ues[self._field(ctx, "ue", topo.ues)]
        w_l = self.param("w_load", 1.0)
        w_b = self.param("w_bandwidth", 1.0)
        demand = topo.offered(ue)
        wanted = set(ue.protocols)
        aps = {}
        for ap in topo.access_points.values():
            aps[ap.id] = {
                "load": topo.ap_load(ap.id, exclude=ue.id),
                "bandwidth_mbps": ap.bandwidth_mbps,
                "technology": ap.technology,
                "feasible": ap.active and ap.covers == ue.cell and wanted <= set(ap.protocols),
            }
        snapshot = {"ue": ue.id, "current": ue.access_point, "demand_mbps": demand,
                    "access_points": aps, "w_load": w_l, "w_bandwidth": w_b}
        current = attachment_score(aps[ue.access_point], demand, w_l, w_b)
        scores = {aid: attachment_score(a, demand, w_l, w_b) for aid, a in aps.items()
                  if aid != ue.access_point and a["feasible"]}
        best = min(scores, key=lambda k: (scores[k], k), default=None)
        if best is None or scores[best] >= current:
            raise InfeasibleAction("no compatible access point improves the score", snapshot)
        old, ue.access_point = ue.access_point, best
        action.target = ue.id
        action.change = {"access_point": {"from": old, "to": best}}
        action.snapshot = snapshot
        action.objective = {"current": current, "chosen": scores[best], "candidates": scores}
        action.effect = {"technology": {"from": topo.access_points[old].technology,
                                        "to": topo.access_points[best].technology}}


NF_KINDS: dict[str, type[NFSubscriber]] = {
    cls.kind: cls for cls in (PolicyFunction, AnchorManager, ServicePlacer, AccessFunction)
}


def make_nf(spec: dict[str, Any]) -> NFSubscriber:
    kind = spec.get("kind")
    if kind not in NF_KINDS:
        raise ValueError(f"unknown NF kind {kind!r}; expected one of {', '.join(sorted(NF_KINDS))}")
    return NF_KINDS[kind](spec.get("pattern"), spec.get("params"))
