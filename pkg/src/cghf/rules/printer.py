"""Canonical pretty-printer; ``parse(pretty_print(rs)) == rs`` for valid rule sets."""

from __future__ import annotations

from . import ast as A
from .parser import PREC


def duration(ms: int) -> str:
    if ms and ms % 60_000 == 0:
        return f"{ms // 60_000}min"
    if ms and ms % 1000 == 0:
        return f"{ms // 1000}s"
    return f"{ms}ms"


def string(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"')
    out = out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
    return f'"{out}"'


def number(x: float) -> str:
    return repr(float(x))


def _prec(node) -> int:
    if isinstance(node, A.Binary):
        if node.op in A.COMPARISONS:
            return PREC["cmp"]
        return PREC[node.op]
    if isinstance(node, A.Unary):
        return PREC["not"] if node.op == "not" else PREC["neg"]
    return PREC["atom"]


def expr(node) -> str:
    if isinstance(node, A.Num):
        return number(node.value)
    if isinstance(node, A.Str):
        return string(node.value)
    if isinstance(node, A.Bool):
        return "true" if node.value else "false"
    if isinstance(node, A.Var):
        return f"${node.name}"
    if isinstance(node, A.ValueRef):
        return "value"
    if isinstance(node, A.AliasAttr):
        return f"{node.alias}.{node.attr}"
    if isinstance(node, A.Unary):
        inner = expr(node.operand)
        if node.op == "not":
            if _prec(node.operand) < PREC["not"]:
                inner = f"({inner})"
            return f"not {inner}"
        # "-1.0" would re-parse as a negative literal, not a negation
        bare_literal = isinstance(node.operand, A.Num) and not inner.startswith("-")
        if _prec(node.operand) < PREC["neg"] or bare_literal:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, A.Binary):
        p = _prec(node)
        left, right = expr(node.left), expr(node.right)
        if node.op in A.COMPARISONS:
            if _prec(node.left) <= p:
                left = f"({left})"
            if _prec(node.right) <= p:
                right = f"({right})"
        else:
            if _prec(node.left) < p:
                left = f"({left})"
            if _prec(node.right) <= p:
                right = f"({right})"
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")


def _term(t) -> str:
    return expr(t)


def pattern(p: A.FactPattern) -> str:
    s = f"fact({_term(p.subject)}, {string(p.attribute)}, {_term(p.value)})"
    if p.alias:
        s += f" as {p.alias}"
    return s


def topic(segments) -> str:
    return "/".join(f"${s.name}" if isinstance(s, A.Var) else s for s in segments)


def action(a) -> str:
    if isinstance(a, A.PublishAction):
        fields = ", ".join(f"{name}: {expr(e)}" for name, e in a.fields)
        return f"publish context {topic(a.segments)} {{ {fields} }}"
    return (
        f"assert fact({expr(a.subject)}, {string(a.attribute)}, {expr(a.value)}, "
        f"ttl {duration(a.ttl_ms)})"
    )


def rule(r: A.Rule) -> str:
    lines = [f"rule {r.name} priority {r.priority} ttl {duration(r.ttl_ms)} {{"]
    lines.append(f"  when {pattern(r.patterns[0])}")
    for p in r.patterns[1:]:
        lines.append(f"   and {pattern(p)}")
    if r.condition is not None:
        lines.append(f"  where {expr(r.condition)}")
    lines.append("  then")
    for a in r.actions:
        lines.append(f"    {action(a)}")
    lines.append("}")
    return "\n".join(lines)


def _emit(e: A.Emit) -> str:
    return f"emit fact({string(e.subject)}, {string(e.attribute)}, {expr(e.value)})"


def factdef(d: A.FactDef) -> str:
    lines = [f"factdef {d.name} {{", f"  stream {string(d.stream)}"]
    agg = f"  aggregate {d.function} window {duration(d.window_ms)}"
    if d.horizon_ms is not None:
        agg += f" horizon {duration(d.horizon_ms)}"
    lines.append(agg)
    lines.append(f"  ttl {duration(d.ttl_ms)}")
    if d.reemit_ms is not None:
        lines.append(f"  reemit {duration(d.reemit_ms)}")
    for entry in d.classifier:
        if entry.predicate is None:
            lines.append(f"  otherwise {_emit(entry.emit)}")
        else:
            lines.append(f"  when {expr(entry.predicate)} {_emit(entry.emit)}")
    lines.append("}")
    return "\n".join(lines)


def entity(e: A.EntityDecl) -> str:
    lines = [f"entity {e.name} {{"]
    for a in e.attrs:
        unit = f" unit {string(a.unit)}" if a.unit is not None else ""
        lines.append(f"  attr {a.name}: {a.type}{unit} {'static' if a.static else 'dynamic'}")
    lines.append("}")
    return "\n".join(lines)


def pretty_print(rs: A.RuleSet) -> str:
    blocks = [entity(e) for e in rs.entities]
    blocks += [factdef(d) for d in rs.factdefs]
    blocks += [rule(r) for r in rs.rules]
    if not blocks:
        return ""
    return "\n\n".join(blocks) + "\n"
