from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..bus import is_valid_topic
from . import ast as A
from .parser import parse


@dataclass(frozen=True)
class ValidationError:
    code: str
    message: str
    line: int | None = None
    col: int | None = None

    def __str__(self) -> str:
        where = f"{self.line}:{self.col}: " if self.line is not None else ""
        return f"{where}{self.code}: {self.message}"


@dataclass
class ContextModel:
    """Flat schema of entity kinds and their attributes."""

    entities: dict[str, A.EntityDecl] = field(default_factory=dict)

    @classmethod
    def from_ruleset(cls, rs: A.RuleSet) -> "ContextModel":
        return cls({e.name: e for e in rs.entities})

    @classmethod
    def from_file(cls, path: str | Path) -> "ContextModel":
        return cls.from_ruleset(parse(Path(path).read_text(encoding="utf-8")))

    def extended(self, entities) -> "ContextModel":
        merged = dict(self.entities)
        for e in entities:
            merged.setdefault(e.name, e)
        return ContextModel(merged)

    def declarations(self, attribute: str) -> list[tuple[str, A.AttrDecl]]:
        return [
            (kind, a)
            for kind, ent in self.entities.items()
            for a in ent.attrs
            if a.name == attribute
        ]

    def is_declared(self, attribute: str) -> bool:
        return bool(self.declarations(attribute))

    def is_static(self, attribute: str) -> bool:
        decls = self.declarations(attribute)
        return bool(decls) and all(a.static for _, a in decls)

    def is_dynamic(self, attribute: str) -> bool:
        return any(not a.static for _, a in self.declarations(attribute))

    def static_attributes(self) -> frozenset[str]:
        names = {a.name for ent in self.entities.values() for a in ent.attrs}
        return frozenset(n for n in names if self.is_static(n))


def _literal_type(node) -> str | None:
    if isinstance(node, A.Bool):
        return "boolean"
    if isinstance(node, A.Num):
        return "number"
    if isinstance(node, A.Str):
        return "string"
    return None


def _accepts(decl_type: str, lit_type: str) -> bool:
    return decl_type == lit_type or (decl_type == "ref" and lit_type == "string")


class _Checker:
    def __init__(self, rs: A.RuleSet, model: ContextModel | None):
        self.rs = rs
        self.errors: list[ValidationError] = []
        base = model or ContextModel()
        self._check_entities(base)
        self.model = base.extended(rs.entities)

    def err(self, code: str, msg: str, pos=None) -> None:
        line, col = pos if pos else (None, None)
        self.errors.append(ValidationError(code, msg, line, col))

    def _check_entities(self, base: ContextModel) -> None:
        seen: dict[str, A.EntityDecl] = {}
        for ent in self.rs.entities:
            prior = seen.get(ent.name) or base.entities.get(ent.name)
            if prior is not None and prior != ent:
                self.err("DuplicateEntity", f"entity {ent.name} declared twice", ent.pos)
            seen[ent.name] = ent
            names = set()
            for a in ent.attrs:
                if a.name in names:
                    self.err("DuplicateAttribute", f"{ent.name}.{a.name} declared twice", a.pos)
                names.add(a.name)

    def attribute(self, name: str, pos, value_node=None, writing: bool = False) -> None:
        decls = self.model.declarations(name)
        if not decls:
            self.err("UndeclaredAttribute", f"attribute {name!r} is not declared in the context model", pos)
            return
        if writing and all(a.static for _, a in decls):
            self.err("StaticAttributeWrite", f"attribute {name!r} is static and cannot be derived", pos)
        lit = _literal_type(value_node) if value_node is not None else None
        if lit and not any(_accepts(a.type, lit) for _, a in decls):
            types = sorted({a.type for _, a in decls})
            self.err("TypeMismatch", f"{name!r} is declared {'/'.join(types)}, got a {lit} literal", pos)

    def duration(self, what: str, ms: int | None, pos) -> None:
        if ms is not None and ms <= 0:
            self.err("BadDuration", f"{what} must be positive", pos)

    def free_refs(self, expr, bound: set[str], aliases: set[str], allow_value: bool) -> None:
        for node in A.iter_nodes(expr):
            if isinstance(node, A.Var) and node.name not in bound:
                self.err("UnboundVariable", f"variable ${node.name} is not bound by any event pattern", node.pos)
            elif isinstance(node, A.AliasAttr) and node.alias not in aliases:
                self.err("UnknownAlias", f"alias {node.alias!r} is not defined", node.pos)
            elif isinstance(node, A.ValueRef) and not allow_value:
                self.err("UnexpectedValue", "'value' is only allowed in factdef classifiers", node.pos)

    def factdefs(self) -> None:
        names = set()
        for d in self.rs.factdefs:
            if d.name in names:
                self.err("DuplicateFactDefName", f"factdef {d.name} defined twice", d.pos)
            names.add(d.name)
            if not is_valid_topic(d.stream):
                self.err("MalformedTopic", f"stream {d.stream!r} is not a valid topic", d.pos)
            if d.function not in A.AGGREGATES:
                self.err("UnknownAggregate", f"unknown aggregate {d.function!r}", d.pos)
            self.duration("window", d.window_ms, d.pos)
            self.duration("ttl", d.ttl_ms, d.pos)
            self.duration("reemit", d.reemit_ms, d.pos)
            if d.function == "forecast" and d.horizon_ms is None:
                self.err("MissingHorizon", f"factdef {d.name}: forecast needs a horizon", d.pos)
            if d.function != "forecast" and d.horizon_ms is not None:
                self.err("UnexpectedHorizon", f"factdef {d.name}: horizon only applies to forecast", d.pos)
            self.duration("horizon", d.horizon_ms, d.pos)
            for i, entry in enumerate(d.classifier):
                if entry.predicate is None and i != len(d.classifier) - 1:
                    self.err("MisplacedOtherwise", "'otherwise' must be the last classifier entry", entry.pos)
                if entry.predicate is not None:
                    self.free_refs(entry.predicate, set(), set(), allow_value=True)
                self.free_refs(entry.emit.value, set(), set(), allow_value=True)
                if not entry.emit.subject:
                    self.err("EmptySubject", "fact subject must not be empty", entry.emit.pos)
                self.attribute(entry.emit.attribute, entry.emit.pos, entry.emit.value, writing=True)

    def rules(self) -> None:
        names = set()
        for r in self.rs.rules:
            if r.name in names:
                self.err("DuplicateRuleName", f"rule {r.name} defined twice", r.pos)
            names.add(r.name)
            self.duration("ttl", r.ttl_ms, r.pos)
            bound: set[str] = set()
            aliases: set[str] = set()
            for p in r.patterns:
                self.attribute(p.attribute, p.pos, p.value)
                for t in (p.subject, p.value):
                    if isinstance(t, A.Var):
                        bound.add(t.name)
                if p.alias is not None:
                    if p.alias in aliases:
                        self.err("DuplicateAlias", f"alias {p.alias!r} used twice", p.pos)
                    aliases.add(p.alias)
            if r.condition is not None:
                self.free_refs(r.condition, bound, aliases, allow_value=False)
            if not r.actions:
                self.err("MissingAction", f"rule {r.name} has no action", r.pos)
            for act in r.actions:
                if isinstance(act, A.PublishAction):
                    self._publish(act, bound, aliases)
                else:
                    self.free_refs(act.subject, bound, aliases, allow_value=False)
                    self.free_refs(act.value, bound, aliases, allow_value=False)
                    self.attribute(act.attribute, act.pos, act.value, writing=True)
                    self.duration("ttl", act.ttl_ms, act.pos)

    def _publish(self, act: A.PublishAction, bound: set[str], aliases: set[str]) -> None:
        probe = ["context"]
        for seg in act.segments:
            if isinstance(seg, A.Var):
                if seg.name not in bound:
                    self.err("UnboundVariable", f"variable ${seg.name} is not bound by any event pattern", seg.pos)
                probe.append("x")
            else:
                probe.append(seg)
        if not act.segments or not is_valid_topic("/".join(probe)):
            self.err("MalformedTopic", f"context topic {'/'.join(probe)!r} is not valid", act.pos)
        if not act.fields:
            self.err("MissingField", "publish needs at least one field", act.pos)
        seen = set()
        for name, e in act.fields:
            if name in seen:
                self.err("DuplicateField", f"field {name!r} given twice", act.pos)
            seen.add(name)
            self.free_refs(e, bound, aliases, allow_value=False)


def validate(rs: A.RuleSet, model: ContextModel | None = None) -> list[ValidationError]:
    """Return every problem found; an empty list means the rule set can be loaded."""
    checker = _Checker(rs, model)
    checker.factdefs()
    checker.rules()
    return checker.errors
