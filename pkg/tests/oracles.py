"""Independent reference implementations used as test oracles.

Nothing here imports the matching, aggregation or inference code under test;
only the AST dataclasses are shared so generated rule sets can be fed in.
"""

from __future__ import annotations

import itertools
import json
import random
import re
from fractions import Fraction
from typing import Any

from cghf.rules import ast as A

# -- topics ----------------------------------------------------------------


def pattern_regex(pattern: str) -> re.Pattern:
    parts = pattern.split("/")
    tail = ""
    if parts[-1] == "#":
        parts = parts[:-1]
        tail = "(/.*)?" if parts else ".*"
    body = "/".join("[^/]+" if p == "*" else re.escape(p) for p in parts)
    return re.compile(f"^{body}{tail}$")


def oracle_matches(pattern: str, topic: str) -> bool:
    return pattern_regex(pattern).match(topic) is not None


# -- statistics ------------------------------------------------------------


def exact_mean(values) -> Fraction:
    vals = [Fraction(v) for v in values]
    return sum(vals, Fraction(0)) / len(vals)


def exact_slope(times, values) -> Fraction:
    ts = [Fraction(t) for t in times]
    vs = [Fraction(v) for v in values]
    n = len(ts)
    sx, sy = sum(ts), sum(vs)
    sxy = sum(t * v for t, v in zip(ts, vs))
    sxx = sum(t * t for t in ts)
    return (n * sxy - sx * sy) / (n * sxx - sx * sx)


def rel_close(got: float, want: Fraction, rel: float = 1e-9) -> bool:
    want_f = float(want)
    if want == 0:
        return got == 0
    return abs(Fraction(got) - want) <= Fraction(rel) * abs(want) or abs(got - want_f) <= rel * abs(want_f)


# -- naive inference -------------------------------------------------------


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _eq(a, b) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    if _num(a) and _num(b):
        return float(a) == float(b)
    return type(a) is type(b) and a == b


class _Err(Exception):
    pass


def _eval(node, b: dict):
    if isinstance(node, (A.Num, A.Str, A.Bool)):
        return node.value
    if isinstance(node, A.Var):
        return b[node.name]
    if isinstance(node, A.Unary):
        x = _eval(node.operand, b)
        if node.op == "not":
            if not isinstance(x, bool):
                raise _Err
            return not x
        if not _num(x):
            raise _Err
        return -x
    op = node.op
    if op in ("and", "or"):
        left = _eval(node.left, b)
        if not isinstance(left, bool):
            raise _Err
        if (op == "and") != left:  # short-circuit: and/False, or/True
            return left
        right = _eval(node.right, b)
        if not isinstance(right, bool):
            raise _Err
        return right
    left, right = _eval(node.left, b), _eval(node.right, b)
    if op == "==":
        return _eq(left, right)
    if op == "!=":
        return not _eq(left, right)
    if op in ("<", "<=", ">", ">="):
        if not ((_num(left) and _num(right)) or (isinstance(left, str) and isinstance(right, str))):
            raise _Err
        return {"<": left < right, "<=": left <= right, ">": left > right, ">=": left >= right}[op]
    if not (_num(left) and _num(right)):
        raise _Err
    if op == "/" and right == 0:
        raise _Err
    return {"+": lambda: left + right, "-": lambda: left - right,
            "*": lambda: left * right, "/": lambda: left / right}[op]()


def _tag(v):
    if isinstance(v, bool):
        return ["b", v]
    if _num(v):
        return ["n", float(v)]
    return ["s", str(v)]


def _fp(b: dict) -> str:
    return json.dumps([[k, _tag(b[k])] for k in sorted(b)], separators=(",", ":"))


def _seg(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) and v == int(v):
        return str(int(v))
    return str(v)


def naive_cycle(facts: list[dict], rules: list[A.Rule], now: int, budget: int = 1000):
    """Re-enumerate rule x fact-tuple products each step; return (contexts, exhausted).

    ``facts`` are dicts with id, subject, attribute, value, asserted_at, ttl;
    later entries for the same (subject, attribute) replace earlier ones.
    Contexts are (topic, fields, rule name, matched fact ids).
    """
    live: dict[tuple, dict] = {}
    for f in facts:
        live[(f["subject"], f["attribute"])] = f
    refracted: set = set()
    out = []
    counter = itertools.count(1)
    firings = 0
    while True:
        for k in [k for k, f in live.items() if f["asserted_at"] + f["ttl"] < now]:
            del live[k]
        pool = list(live.values())
        agenda = []
        for rule in rules:
            for combo in itertools.product(pool, repeat=len(rule.patterns)):
                b: dict[str, Any] = {}
                ok = True
                for pat, f in zip(rule.patterns, combo):
                    if pat.attribute != f["attribute"]:
                        ok = False
                        break
                    for term, val in ((pat.subject, f["subject"]), (pat.value, f["value"])):
                        if isinstance(term, A.Var):
                            if term.name in b:
                                if not _eq(b[term.name], val):
                                    ok = False
                            else:
                                b[term.name] = val
                        elif not _eq(term.value, val):
                            ok = False
                    if not ok:
                        break
                if not ok:
                    continue
                if rule.condition is not None:
                    try:
                        if _eval(rule.condition, b) is not True:
                            continue
                    except _Err:
                        continue
                newest = max(f["asserted_at"] for f in combo)
                fp = _fp(b)
                if (rule.name, fp, newest) in refracted:
                    continue
                agenda.append((-rule.priority, -newest, rule.name, fp, rule, b, combo))
        if not agenda:
            return out, False
        if firings >= budget:
            return out, True
        agenda.sort(key=lambda a: a[:4])
        _, neg_newest, name, fp, rule, b, combo = agenda[0]
        refracted.add((name, fp, -neg_newest))
        firings += 1
        for act in rule.actions:
            try:
                if isinstance(act, A.PublishAction):
                    topic = "/".join(["context"] + [_seg(b[s.name]) if isinstance(s, A.Var) else s
                                                    for s in act.segments])
                    fields = {k: _eval(e, b) for k, e in act.fields}
                    out.append((topic, fields, name, tuple(f["id"] for f in combo)))
                else:
                    subj = _eval(act.subject, b)
                    if not isinstance(subj, str) or not subj:
                        continue
                    live[(subj, act.attribute)] = {
                        "id": f"derived-{next(counter)}", "subject": subj, "attribute": act.attribute,
                        "value": _eval(act.value, b), "asserted_at": now, "ttl": act.ttl_ms,
                    }
            except _Err:
                continue


# -- random rule sets --------------------------------------------------------

NAMES = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa"]


class RuleSetGen:
    """Random but well-formed ASTs covering every construct the printer emits."""

    def __init__(self, rng: random.Random):
        self.r = rng

    def ident(self, prefix: str) -> str:
        return f"{prefix}{self.r.choice(NAMES)}{self.r.randrange(100)}"

    def duration(self) -> int:
        return self.r.choice([1, 250, 1000, 1500, 30_000, 60_000, 120_000, 3_600_000])

    def number(self) -> float:
        return self.r.choice([0.0, 1.0, -2.5, 0.1, 1e-05, 123456.789, float(self.r.randrange(-50, 50)),
                              self.r.uniform(-1e6, 1e6)])

    def string(self) -> str:
        return self.r.choice(["", "x", "a b", 'quote"d', "back\\slash", "tab\tnew\nline", "ünïcode"])

    def literal(self):
        k = self.r.randrange(3)
        if k == 0:
            return A.Num(self.number())
        if k == 1:
            return A.Str(self.string())
        return A.Bool(self.r.random() < 0.5)

    def expr(self, depth: int, vars_: list[str], aliases: list[str], allow_value: bool):
        if depth <= 0 or self.r.random() < 0.3:
            choices = [self.literal]
            if vars_:
                choices.append(lambda: A.Var(self.r.choice(vars_)))
            if aliases:
                choices.append(lambda: A.AliasAttr(self.r.choice(aliases), self.r.choice(A.ALIAS_ATTRS)))
            if allow_value:
                choices.append(A.ValueRef)
            return self.r.choice(choices)()
        k = self.r.randrange(4)
        sub = lambda: self.expr(depth - 1, vars_, aliases, allow_value)  # noqa: E731
        if k == 0:
            return A.Unary(self.r.choice(["not", "-"]), sub())
        op = self.r.choice(["and", "or"] + list(A.COMPARISONS) + list(A.ARITH))
        left, right = sub(), sub()
        if op in A.COMPARISONS:
            # comparisons are non-associative; the parser rejects a chained a < b < c
            if isinstance(left, A.Binary) and left.op in A.COMPARISONS:
                left = A.Unary("not", left)
            if isinstance(right, A.Binary) and right.op in A.COMPARISONS:
                right = A.Unary("not", right)
        return A.Binary(op, left, right)

    def term(self, vars_: list[str]):
        if self.r.random() < 0.6:
            name = self.r.choice(["a", "b", "c", "gw", "ue"])
            vars_.append(name)
            return A.Var(name)
        return self.literal()

    def rule(self) -> A.Rule:
        vars_: list[str] = []
        aliases: list[str] = []
        patterns = []
        for _ in range(self.r.randint(1, 3)):
            alias = None
            if self.r.random() < 0.3:
                alias = f"f{len(aliases)}"
                aliases.append(alias)
            patterns.append(A.FactPattern(self.term(vars_), self.ident("attr_"), self.term(vars_), alias))
        vars_ = sorted(set(vars_))
        cond = self.expr(3, vars_, aliases, False) if self.r.random() < 0.6 else None
        actions = []
        for _ in range(self.r.randint(1, 3)):
            if self.r.random() < 0.6:
                segs = tuple(
                    A.Var(self.r.choice(vars_)) if vars_ and self.r.random() < 0.4 else self.ident("seg")
                    for _ in range(self.r.randint(1, 3))
                )
                fields = tuple(
                    (f"k{i}", self.expr(2, vars_, aliases, False)) for i in range(self.r.randint(1, 3))
                )
                actions.append(A.PublishAction(segs, fields))
            else:
                actions.append(A.AssertAction(self.expr(1, vars_, aliases, False), self.ident("attr_"),
                                              self.expr(2, vars_, aliases, False), self.duration()))
        return A.Rule(self.ident("rule_"), self.r.randint(-5, 20), self.duration(), tuple(patterns),
                      cond, tuple(actions))

    def factdef(self) -> A.FactDef:
        fn = self.r.choice(A.AGGREGATES)
        entries = []
        for _ in range(self.r.randint(0, 3)):
            entries.append(A.ClassifierEntry(self.expr(2, [], [], True),
                                             A.Emit(self.string() or "S", self.ident("attr_"),
                                                    self.expr(1, [], [], True))))
        if self.r.random() < 0.5:
            entries.append(A.ClassifierEntry(None, A.Emit("S1", "flag", A.Bool(True))))
        return A.FactDef(
            self.ident("fd_"),
            "raw/" + "/".join(self.ident("s") for _ in range(self.r.randint(1, 3))),
            fn,
            self.duration(),
            self.duration() if fn == "forecast" else None,
            self.duration(),
            self.duration() if self.r.random() < 0.4 else None,
            tuple(entries),
        )

    def entity(self) -> A.EntityDecl:
        attrs = tuple(
            A.AttrDecl(self.ident("at_"), self.r.choice(A.ATTR_TYPES),
                       self.string() if self.r.random() < 0.3 else None, self.r.random() < 0.5)
            for _ in range(self.r.randint(0, 4))
        )
        return A.EntityDecl(self.ident("E"), attrs)

    def ruleset(self) -> A.RuleSet:
        return A.RuleSet(
            tuple(self.entity() for _ in range(self.r.randint(0, 2))),
            tuple(self.factdef() for _ in range(self.r.randint(0, 3))),
            tuple(self.rule() for _ in range(self.r.randint(0, 4))),
        )


# -- random knowledge bases for the inference oracle -------------------------

SUBJECTS = ["s0", "s1", "s2", "s3", "s4", "s5"]
ATTRS = ["p", "q", "r", "t", "u"]
VALUES = [1.0, 2.0, 3.5, "x", "y", True, False, "s1", "s2"]


def random_facts(r: random.Random, n: int, now: int) -> list[dict]:
    facts = []
    for i in range(n):
        facts.append({
            "id": f"f{i}",
            "subject": r.choice(SUBJECTS),
            "attribute": r.choice(ATTRS),
            "value": r.choice(VALUES),
            "asserted_at": r.randrange(0, now + 1),
            "ttl": r.choice([1, 50, 500, 10_000]),
        })
    return facts


def random_inference_rules(r: random.Random, n: int) -> list[A.Rule]:
    rules = []
    for i in range(n):
        vars_: list[str] = []
        pats = []
        for _ in range(r.randint(1, 3)):
            subj = A.Var(r.choice("abc")) if r.random() < 0.8 else A.Str(r.choice(SUBJECTS))
            if r.random() < 0.6:
                val = A.Var(r.choice("vwx"))
            else:
                v = r.choice(VALUES)
                val = A.Bool(v) if isinstance(v, bool) else A.Num(v) if isinstance(v, float) else A.Str(v)
            for t in (subj, val):
                if isinstance(t, A.Var):
                    vars_.append(t.name)
            pats.append(A.FactPattern(subj, r.choice(ATTRS), val))
        vars_ = sorted(set(vars_))

        def atom():
            if vars_ and r.random() < 0.8:
                left = A.Var(r.choice(vars_))
            else:
                left = A.Num(2.0)
            right = A.Var(r.choice(vars_)) if vars_ and r.random() < 0.3 else A.Num(r.choice([1.0, 2.0, 3.0]))
            return A.Binary(r.choice(A.COMPARISONS), left, right)

        cond = None
        if r.random() < 0.5:
            cond = atom()
            if r.random() < 0.4:
                cond = A.Binary(r.choice(["and", "or"]), cond, atom())
            if r.random() < 0.2:
                cond = A.Unary("not", cond)
        actions = []
        seg = A.Var(r.choice(vars_)) if vars_ and r.random() < 0.7 else f"k{i}"
        actions.append(A.PublishAction((f"r{i}", seg), tuple((v, A.Var(v)) for v in vars_) or (("n", A.Num(1.0)),)))
        if r.random() < 0.3 and vars_:
            actions.append(A.AssertAction(A.Var(r.choice(vars_)), r.choice(ATTRS),
                                          A.Var(r.choice(vars_)), r.choice([100, 1000])))
        rules.append(A.Rule(f"rule{i}", r.randint(0, 3), 60_000, tuple(pats), cond, tuple(actions)))
    return rules
