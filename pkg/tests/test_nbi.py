import json
import socket
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cghf.bus import Bus, Envelope, TopicPattern
from cghf.bus import UnknownHandle as BusUnknownHandle
from cghf.nbi import (
    NBIServer,
    NBIService,
    Principal,
    ScopeViolation,
    ServiceManifest,
    Unauthorized,
    UndeclaredStream,
    UnknownHandle,
    UnknownRegistration,
    ValidationFailed,
    principals_from_config,
)
from cghf.node import CGHF
from cghf.rules import shipped_model
from test_acceptance import APP_RULES, nbi_end_to_end, nbi_matrix


def make_service():
    clock = {"now": 0}
    node = CGHF("cghf", shipped_model(), Bus("nbi", clock=lambda: clock["now"]))
    x = Principal("app-x", "tx", TopicPattern.parse("raw/app/X/#"), TopicPattern.parse("context/app/X/#"))
    y = Principal("app-y", "ty", TopicPattern.parse("raw/app/Y/#"), TopicPattern.parse("context/app/Y/#"))
    return NBIService(node, [x, y]), node, clock, x, y


def manifest(rules=APP_RULES, topic="raw/app/X/latency"):
    return ServiceManifest.from_json({"service": "x", "streams": [{"topic": topic, "unit": "ms"}],
                                      "context_topics": ["context/app/X/#"], "rules": rules})


def drive(service, node, clock, principal, until=12_000, value=80.0):
    for t in range(0, until, 1000):
        clock["now"] = t
        service.push_info(principal, {"topic": "raw/app/X/latency", "payload": {"value": value}})
        node.step(t)


def test_scope_matrix():
    assert nbi_matrix() == []


def test_end_to_end_over_socket():
    assert nbi_end_to_end() == []


def test_principal_scope_cannot_reach_reserved_prefixes():
    for bad in ("#", "*/x", "context/#", "facts/a/#"):
        with pytest.raises(ValueError):
            Principal("p", "t", TopicPattern.parse(bad), TopicPattern.parse("context/#"))


def test_authenticate():
    service, *_ = make_service()
    assert service.authenticate("tx").principal_id == "app-x"
    for token in ("nope", None, 3):
        with pytest.raises(Unauthorized):
            service.authenticate(token)


def test_register_loads_rules_and_rejects_bad_manifests():
    service, node, _, x, _ = make_service()
    reg = service.register_service(x, manifest())
    assert reg.rule_names == ("x_slow",) and reg.factdef_names == ("x_latency",)
    assert "x_slow" in node.kb.rules
    with pytest.raises(ValidationFailed):  # names already installed
        service.register_service(x, manifest())
    with pytest.raises(ValidationFailed):
        service.register_service(x, manifest(rules="rule {"))
    with pytest.raises(ScopeViolation):
        service.register_service(x, manifest(rules="", topic="raw/app/Y/latency"))


def test_push_forces_source_and_assigns_seq():
    service, node, clock, x, _ = make_service()
    service.register_service(x, manifest())
    tap = node.bus.subscribe("raw/#", "tap")
    service.push_info(x, Envelope("raw/app/X/latency", "someone-else", 0, 1, {"value": 1.0}))
    service.push_info(x, {"topic": "raw/app/X/latency", "payload": {"value": 2.0}})
    got = node.bus.poll(tap)
    assert [e.source for e in got] == ["app-x", "app-x"]
    assert [e.seq for e in got] == [1, 2]


def test_undeclared_after_revoke():
    service, _, _, x, _ = make_service()
    reg = service.register_service(x, manifest())
    service.push_info(x, {"topic": "raw/app/X/latency", "payload": {"value": 1.0}})
    service.revoke(x, reg.registration_id)
    with pytest.raises(UndeclaredStream):
        service.push_info(x, {"topic": "raw/app/X/latency", "payload": {"value": 1.0}})


def test_revoke_unknown_or_foreign_registration():
    service, _, _, x, y = make_service()
    reg = service.register_service(x, manifest())
    with pytest.raises(UnknownRegistration):
        service.revoke(y, reg.registration_id)
    with pytest.raises(UnknownRegistration):
        service.revoke(x, "reg-999")


def test_revoking_a_principal_is_complete():
    service, node, clock, x, _ = make_service()
    service.register_service(x, manifest())
    handle = service.subscribe_context(x, "context/app/X/#")
    loose = service.subscribe_context(x, "context/app/X/slow")
    drive(service, node, clock, x)
    assert service.fetch(x, handle)
    service.revoke_principal("app-x")
    assert "x_slow" not in node.kb.rules and "x_latency" not in node.facts.defs
    for h in (handle, loose):
        with pytest.raises(BusUnknownHandle):
            node.bus.pending(h)
    with pytest.raises(Unauthorized):
        service.authenticate("tx")
    with pytest.raises(Unauthorized):
        service.fetch(x, handle)
    with pytest.raises(Unauthorized):
        service.push_info(x, {"topic": "raw/app/X/latency", "payload": {"value": 1.0}})
    reply = service.handle_request({"op": "fetch", "token": "tx", "handle": handle})
    assert reply["error"] == "Unauthorized"


def test_fetch_never_leaks_other_scopes():
    service, node, clock, x, y = make_service()
    service.register_service(x, manifest())
    hy = service.subscribe_context(y, "context/app/Y/#")
    drive(service, node, clock, x)
    assert service.fetch(y, hy) == []
    with pytest.raises(UnknownHandle):
        service.fetch(y, "nope")


def test_subscribe_requires_context_prefix_within_scope():
    service, _, _, x, _ = make_service()
    for bad in ("#", "*/app/X/#", "facts/#", "raw/app/X/#", "context/#", "context/app/*/slow", "a//b"):
        with pytest.raises(ScopeViolation):
            service.subscribe_context(x, bad)
    assert service.subscribe_context(x, "context/app/X/*")


def test_wire_errors_are_structured():
    service, *_ = make_service()
    cases = [
        ("not json", "MalformedRequest"),
        ("[1, 2]", "MalformedRequest"),
        ('{"op": "dance", "token": "tx"}', "MalformedRequest"),
        ('{"op": "push", "token": "tx"}', "MalformedRequest"),
        ('{"op": "fetch", "token": "tx", "handle": "h", "max_n": -1}', "MalformedRequest"),
        ('{"op": "subscribe", "token": "tx", "pattern": 5}', "MalformedRequest"),
        ('{"op": "auth", "token": "zz"}', "Unauthorized"),
    ]
    for line, want in cases:
        resp = json.loads(service.handle_line(line))
        assert resp["ok"] is False and resp["error"] == want, line
    resp = service.handle_request({"op": "register", "token": "tx",
                                   "manifest": {"service": "s", "rules": "rule r {"}})
    assert resp["error"] == "ValidationFailed" and resp["errors"]


def test_seq_regression_is_reported():
    service, *_ = make_service()
    service.handle_request({"op": "register", "token": "tx", "manifest": {
        "service": "s", "streams": [{"topic": "raw/app/X/a"}], "rules": ""}})
    ok = service.handle_request({"op": "push", "token": "tx", "envelope": {"topic": "raw/app/X/a", "seq": 5}})
    again = service.handle_request({"op": "push", "token": "tx", "envelope": {"topic": "raw/app/X/a", "seq": 5}})
    assert ok["ok"] and again["error"] == "SeqRegression"


def test_principals_from_config():
    ps = principals_from_config({"principals": [
        {"id": "a", "token": "s3cret", "publish_scope": "raw/app/a/#", "subscribe_scope": "context/app/a/#"}]})
    assert ps[0].principal_id == "a" and ps[0].allowed_publish_scope.matches("raw/app/a/x")
    assert "s3cret" not in repr(ps[0])


def test_server_handles_concurrent_clients():
    service, *_ = make_service()
    server = NBIServer(service)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    results = []

    def client(token):
        with socket.create_connection(("127.0.0.1", server.port), timeout=5) as s:
            f = s.makefile("rw", encoding="utf-8")
            for _ in range(20):
                f.write(json.dumps({"op": "auth", "token": token}) + "\n\n")
                f.flush()
                results.append(json.loads(f.readline())["principal_id"])

    try:
        threads = [threading.Thread(target=client, args=(t,)) for t in ("tx", "ty", "tx")]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        server.shutdown()
        server.server_close()
    assert sorted(results) == sorted(["app-x"] * 40 + ["app-y"] * 20)


TOPICS = ["raw/app/X/latency", "raw/app/X/other", "raw/app/Y/latency", "context/app/X/slow", "facts/X/a"]
PATTERNS = ["context/app/X/#", "context/app/Y/#", "context/#", "context/app/*/slow", "facts/#"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["push", "subscribe", "fetch", "step"]),
                          st.sampled_from(["tx", "ty"]), st.integers(0, 4)), max_size=40))
def test_audit_log_stays_within_scopes(ops):
    service, node, clock, x, y = make_service()
    service.register_service(x, manifest())
    principals = {"tx": x, "ty": y}
    handles = {"tx": [], "ty": []}
    for i, (op, token, k) in enumerate(ops):
        p = principals[token]
        clock["now"] = i * 1000
        try:
            if op == "push":
                service.push_info(p, {"topic": TOPICS[k], "payload": {"value": 99.0}})
            elif op == "subscribe":
                handles[token].append(service.subscribe_context(p, PATTERNS[k]))
            elif op == "fetch" and handles[token]:
                service.fetch(p, handles[token][k % len(handles[token])])
            else:
                node.step(clock["now"])
        except (ScopeViolation, UndeclaredStream):
            pass
    scopes = {"app-x": x, "app-y": y}
    for entry in service.audit:
        p = scopes[entry.principal_id]
        scope = p.allowed_publish_scope if entry.direction == "in" else p.allowed_subscribe_scope
        assert scope.matches(entry.topic)
