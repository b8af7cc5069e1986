"""Northbound exposure service: access control, service registration, runtime exchange.

Design-time registration installs a stakeholder's fact definitions and rules
into the CGHF and declares the raw streams it will push. At runtime the
stakeholder pushes raw information and fetches context, always through the
scopes granted to its token.

The wire protocol is newline-delimited JSON over a local socket::

    {"op": "push", "token": "...", "envelope": {...}}
    {"ok": true, "msg_id": "..."} | {"ok": false, "error": "ScopeViolation", "detail": "..."}
"""

from __future__ import annotations

import itertools
import json
import logging
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import bus as busmod
from .bus import Envelope, MalformedPattern, MalformedTopic, TopicPattern, split_topic
from .node import CGHF
from .rules import RuleSyntaxError, parse

log = logging.getLogger(__name__)

RESERVED_PREFIXES = ("facts", "context")


class NBIError(Exception):
    @property
    def name(self) -> str:
        return type(self).__name__


class Unauthorized(NBIError):
    pass


class ScopeViolation(NBIError):
    pass


class UndeclaredStream(NBIError):
    pass


class UnknownHandle(NBIError):
    pass


class UnknownRegistration(NBIError):
    pass


class MalformedRequest(NBIError):
    pass


class ValidationFailed(NBIError):
    def __init__(self, errors: list):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


def _reaches_reserved(pattern: TopicPattern) -> bool:
    head = pattern.segments[0]
    return head in ("*", "#") or head in RESERVED_PREFIXES


@dataclass(frozen=True)
class Principal:
    principal_id: str
    token: str = field(repr=False)
    allowed_publish_scope: TopicPattern
    allowed_subscribe_scope: TopicPattern

    def __post_init__(self):
        if _reaches_reserved(self.allowed_publish_scope):
            raise ValueError(
                f"{self.principal_id}: publish scope {self.allowed_publish_scope} "
                "overlaps facts/ or context/"
            )

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Principal":
        return cls(
            obj["id"],
            obj["token"],
            TopicPattern.parse(obj["publish_scope"]),
            TopicPattern.parse(obj["subscribe_scope"]),
        )


@dataclass(frozen=True)
class StreamDecl:
    topic: str
    unit: str = ""
    type: str = "number"


@dataclass(frozen=True)
class ServiceManifest:
    service: str
    streams: tuple[StreamDecl, ...] = ()
    context_topics: tuple[str, ...] = ()
    rules: str = ""

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ServiceManifest":
        try:
            return cls(
                obj["service"],
                tuple(StreamDecl(s["topic"], s.get("unit", ""), s.get("type", "number"))
                      for s in obj.get("streams", ())),
                tuple(obj.get("context_topics", ())),
                obj.get("rules", ""),
            )
        except (KeyError, TypeError) as exc:
            raise MalformedRequest(f"bad manifest: {exc}") from exc


@dataclass
class Registration:
    registration_id: str
    principal_id: str
    manifest: ServiceManifest
    rule_names: tuple[str, ...]
    factdef_names: tuple[str, ...]
    status: str = "active"
    handles: set[str] = field(default_factory=set)

    @property
    def active(self) -> bool:
        return self.status == "active"


@dataclass(frozen=True)
class AuditEntry:
    principal_id: str
    direction: str  # "in" (pushed) or "out" (delivered)
    topic: str
    msg_id: str


class NBIService:
    def __init__(self, cghf: CGHF, principals: Iterable[Principal] = ()):
        self.cghf = cghf
        self._lock = threading.RLock()
        self._by_token: dict[str, Principal] = {}
        self._revoked: set[str] = set()
        self.registrations: dict[str, Registration] = {}
        self._subs: dict[str, tuple[str, str | None]] = {}  # handle -> (principal, registration)
        self._reg_ids = itertools.count(1)
        self._seq: dict[tuple[str, str], int] = {}
        self.audit: list[AuditEntry] = []
        for p in principals:
            self.add_principal(p)

    # -- principals --

    def add_principal(self, p: Principal) -> None:
        with self._lock:
            if p.token in self._by_token:
                raise ValueError("token already registered")
            self._by_token[p.token] = p

    def revoke_principal(self, principal_id: str) -> None:
        with self._lock:
            self._revoked.add(principal_id)
            for reg in list(self.registrations.values()):
                if reg.principal_id == principal_id and reg.active:
                    self._revoke(reg)
            for handle, (owner, _) in list(self._subs.items()):
                if owner == principal_id:
                    self._close(handle)

    def authenticate(self, token: str) -> Principal:
        with self._lock:
            p = self._by_token.get(token) if isinstance(token, str) else None
            if p is None or p.principal_id in self._revoked:
                raise Unauthorized("unknown or revoked token")
            return p

    def _check(self, principal: Principal) -> None:
        current = self._by_token.get(principal.token)
        if current != principal or principal.principal_id in self._revoked:
            raise Unauthorized("principal is not (or no longer) authorized")

    # -- design time --

    def register_service(self, principal: Principal, manifest: ServiceManifest) -> Registration:
        with self._lock:
            self._check(principal)
            for s in manifest.streams:
                self._check_publishable(principal, s.topic)
            for pat in manifest.context_topics:
                self._check_subscribable(principal, pat)
            try:
                rs = parse(manifest.rules)
            except RuleSyntaxError as exc:
                raise ValidationFailed(exc.errors) from None
            errors = self.cghf.check(rs)
            if errors:
                raise ValidationFailed(errors)
            self.cghf.load(rs)
            reg = Registration(
                f"reg-{next(self._reg_ids)}",
                principal.principal_id,
                manifest,
                tuple(r.name for r in rs.rules),
                tuple(d.name for d in rs.factdefs),
            )
            self.registrations[reg.registration_id] = reg
            return reg

    def revoke(self, principal: Principal, registration_id: str) -> None:
        with self._lock:
            self._check(principal)
            reg = self.registrations.get(registration_id)
            if reg is None or reg.principal_id != principal.principal_id:
                raise UnknownRegistration(registration_id)
            if reg.active:
                self._revoke(reg)

    def _revoke(self, reg: Registration) -> None:
        self.cghf.unload(reg.rule_names, reg.factdef_names)
        for handle in list(reg.handles):
            self._close(handle)
        reg.status = "revoked"

    def _close(self, handle: str) -> None:
        owner, reg_id = self._subs.pop(handle, (None, None))
        if reg_id is not None:
            self.registrations[reg_id].handles.discard(handle)
        try:
            self.cghf.bus.unsubscribe(handle)
        except busmod.UnknownHandle:
            pass

    # -- scope checks --

    def _check_publishable(self, principal: Principal, topic: str) -> tuple[str, ...]:
        try:
            segs = split_topic(topic)
        except MalformedTopic as exc:
            raise ScopeViolation(str(exc)) from None
        if segs[0] in RESERVED_PREFIXES:
            raise ScopeViolation(f"stakeholders cannot publish under {segs[0]}/")
        if not principal.allowed_publish_scope.matches(segs):
            raise ScopeViolation(f"{topic} is outside publish scope {principal.allowed_publish_scope}")
        return segs

    def _check_subscribable(self, principal: Principal, pattern: str) -> TopicPattern:
        try:
            pat = TopicPattern.parse(pattern)
        except MalformedPattern as exc:
            raise ScopeViolation(str(exc)) from None
        prefix = pat.fixed_prefix()
        if not prefix or prefix[0] != "context":
            raise ScopeViolation(f"{pattern} is not under context/")
        if not principal.allowed_subscribe_scope.covers(pat):
            raise ScopeViolation(f"{pattern} is outside subscribe scope {principal.allowed_subscribe_scope}")
        return pat

    # -- runtime --

    def push_info(self, principal: Principal, env: "Envelope | dict[str, Any]") -> str:
        with self._lock:
            self._check(principal)
            if isinstance(env, dict):
                env = self._envelope_from_request(principal, env)
            self._check_publishable(principal, env.topic)
            declared = any(
                reg.active and reg.principal_id == principal.principal_id
                and any(s.topic == env.topic for s in reg.manifest.streams)
                for reg in self.registrations.values()
            )
            if not declared:
                raise UndeclaredStream(f"{env.topic} is not declared by an active registration")
            if env.source != principal.principal_id:
                env = Envelope(env.topic, principal.principal_id, env.timestamp, env.seq,
                               env.payload, env.ttl, env.msg_id)
            receipt = self.cghf.bus.publish(env)
            key = (principal.principal_id, env.topic)
            self._seq[key] = max(self._seq.get(key, 0), env.seq)
            self.audit.append(AuditEntry(principal.principal_id, "in", env.topic, receipt.msg_id))
            return receipt.msg_id

    def _envelope_from_request(self, principal: Principal, obj: dict[str, Any]) -> Envelope:
        topic = obj.get("topic")
        if not isinstance(topic, str):
            raise MalformedRequest("envelope needs a topic")
        key = (principal.principal_id, topic)
        seq = obj.get("seq")
        if seq is None:
            seq = self._seq.get(key, 0) + 1
        ts = obj.get("ts")
        try:
            return Envelope(
                topic,
                principal.principal_id,
                int(ts) if ts is not None else self.cghf.bus.clock(),
                int(seq),
                dict(obj.get("payload") or {}),
                None if obj.get("ttl_ms") is None else int(obj["ttl_ms"]),
            )
        except (TypeError, ValueError) as exc:
            raise MalformedRequest(f"bad envelope: {exc}") from None

    def subscribe_context(self, principal: Principal, pattern: str) -> str:
        with self._lock:
            self._check(principal)
            pat = self._check_subscribable(principal, pattern)
            sub = self.cghf.bus.subscribe(pat, principal.principal_id)
            reg_id = None
            for reg in self.registrations.values():
                if reg.active and reg.principal_id == principal.principal_id and any(
                    TopicPattern.parse(t).covers(pat) for t in reg.manifest.context_topics
                ):
                    reg_id = reg.registration_id
                    reg.handles.add(sub.handle)
                    break
            self._subs[sub.handle] = (principal.principal_id, reg_id)
            return sub.handle

    def fetch(self, principal: Principal, handle: str, max_n: int = 100, now: int | None = None) -> list[Envelope]:
        with self._lock:
            self._check(principal)
            owner = self._subs.get(handle, (None, None))[0]
            if owner != principal.principal_id:
                raise UnknownHandle(handle)
            envs = self.cghf.bus.poll(handle, max_n, now=now)
            out = [e for e in envs if principal.allowed_subscribe_scope.matches(e.topic)]
            for e in out:
                self.audit.append(AuditEntry(principal.principal_id, "out", e.topic, e.msg_id))
            return out

    # -- wire protocol --

    def handle_request(self, req: Any) -> dict[str, Any]:
        try:
            if not isinstance(req, dict) or not isinstance(req.get("op"), str):
                raise MalformedRequest("request must be an object with an 'op'")
            op = req["op"]
            handler = getattr(self, f"_op_{op}", None)
            if handler is None:
                raise MalformedRequest(f"unknown op {op!r}")
            principal = self.authenticate(req.get("token"))
            return {"ok": True, **handler(principal, req)}
        except ValidationFailed as exc:
            return {"ok": False, "error": exc.name, "detail": str(exc),
                    "errors": [str(e) for e in exc.errors]}
        except NBIError as exc:
            return {"ok": False, "error": exc.name, "detail": str(exc)}
        except busmod.BusError as exc:
            return {"ok": False, "error": type(exc).__name__, "detail": str(exc)}

    def _op_auth(self, principal, req):
        return {"principal_id": principal.principal_id}

    def _op_register(self, principal, req):
        manifest = req.get("manifest")
        if not isinstance(manifest, dict):
            raise MalformedRequest("register needs a manifest object")
        reg = self.register_service(principal, ServiceManifest.from_json(manifest))
        return {"registration_id": reg.registration_id, "rules": list(reg.rule_names),
                "factdefs": list(reg.factdef_names)}

    def _op_push(self, principal, req):
        env = req.get("envelope")
        if not isinstance(env, dict):
            raise MalformedRequest("push needs an envelope object")
        return {"msg_id": self.push_info(principal, env)}

    def _op_subscribe(self, principal, req):
        pattern = req.get("pattern")
        if not isinstance(pattern, str):
            raise MalformedRequest("subscribe needs a pattern")
        return {"handle": self.subscribe_context(principal, pattern)}

    def _op_fetch(self, principal, req):
        max_n = req.get("max_n", 100)
        if not isinstance(max_n, int) or max_n < 0:
            raise MalformedRequest("max_n must be a non-negative integer")
        envs = self.fetch(principal, req.get("handle"), max_n)
        return {"contexts": [e.to_json() for e in envs]}

    def _op_revoke(self, principal, req):
        self.revoke(principal, req.get("registration_id"))
        return {}

    def handle_line(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            resp = {"ok": False, "error": "MalformedRequest", "detail": str(exc)}
        else:
            resp = self.handle_request(req)
        return json.dumps(resp, sort_keys=True)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: NBIService = self.server.service
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.wfile.write((service.handle_line(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class NBIServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: NBIService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]


def principals_from_config(obj: dict[str, Any]) -> list[Principal]:
    return [Principal.from_json(p) for p in obj.get("principals", ())]
