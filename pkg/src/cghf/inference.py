"""Context Generator: knowledge base, forward-chaining inference and context publishing.

Matching is a nested-loop join over live facts. The agenda is ordered by
(priority desc, newest matched fact desc, rule name, binding fingerprint) and
activations are refracted on (rule, fingerprint, newest matched asserted_at),
so a rule fires again only when one of its facts is re-asserted later.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from .bus import Bus, Envelope, MalformedTopic, split_topic
from .facts import Fact
from .rules import ast as A
from .rules.evaluate import EvalError, evaluate, is_number, truthy, values_equal

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 1000


class CycleBudgetExceeded(Exception):
    def __init__(self, contexts: list["Context"], budget: int):
        self.contexts = contexts
        self.budget = budget
        super().__init__(f"{budget} firings in one cycle; probable rule loop")


def _tagged(v: Any) -> list:
    if isinstance(v, bool):
        return ["b", v]
    if is_number(v):
        return ["n", float(v)]
    return ["s", str(v)]


def fingerprint(bindings: dict[str, Any]) -> str:
    return json.dumps([[k, _tagged(bindings[k])] for k in sorted(bindings)], separators=(",", ":"))


@dataclass(frozen=True)
class Activation:
    rule: A.Rule
    bindings: tuple[tuple[str, Any], ...]
    facts: tuple[Fact, ...]
    fingerprint: str

    @property
    def rule_name(self) -> str:
        return self.rule.name

    @property
    def priority(self) -> int:
        return self.rule.priority

    @property
    def newest(self) -> int:
        return max(f.asserted_at for f in self.facts)

    @property
    def fact_ids(self) -> tuple[str, ...]:
        return tuple(f.fact_id for f in self.facts)

    @property
    def refraction_key(self) -> tuple[str, str, int]:
        return (self.rule.name, self.fingerprint, self.newest)


@dataclass(frozen=True)
class Context:
    topic: str
    fields: dict[str, Any]
    produced_at: int
    ttl: int
    rule: str
    matched_facts: tuple[str, ...]
    msg_id: str | None = None

    def payload(self) -> dict[str, Any]:
        return {
            "fields": self.fields,
            "rule": self.rule,
            "matched_facts": list(self.matched_facts),
            "ttl_ms": self.ttl,
        }

    @classmethod
    def from_envelope(cls, env: Envelope) -> "Context":
        p = env.payload
        return cls(
            env.topic,
            dict(p.get("fields", {})),
            env.timestamp,
            int(p.get("ttl_ms", env.ttl or 0)),
            p.get("rule", ""),
            tuple(p.get("matched_facts", ())),
            env.msg_id,
        )


class KnowledgeBase:
    def __init__(self, name: str = "cghf", rules: Iterable[A.Rule] = ()):
        self.name = name
        self._facts: dict[str, dict[str, Fact]] = {}  # attribute -> subject -> fact
        self.rules: dict[str, A.Rule] = {}
        self.refraction: set[tuple[str, str, int]] = set()
        self.derived: list[Fact] = []
        self.diagnostics: list[str] = []
        self._seq: dict[str, int] = {}
        self._derived_ids = 0
        self.add_rules(rules)

    # -- rules --

    def add_rules(self, rules: Iterable[A.Rule]) -> None:
        rules = list(rules)
        clash = [r.name for r in rules if r.name in self.rules]
        if clash:
            raise ValueError(f"rules already loaded: {', '.join(clash)}")
        for r in rules:
            self.rules[r.name] = r

    def remove_rules(self, names: Iterable[str]) -> None:
        names = set(names)
        for n in names:
            self.rules.pop(n, None)
        self.refraction = {k for k in self.refraction if k[0] not in names}

    # -- facts --

    def assert_fact(self, fact: Fact) -> str | None:
        """Make ``fact`` the live value of its (subject, attribute); return the superseded id."""
        by_subject = self._facts.setdefault(fact.attribute, {})
        old = by_subject.get(fact.subject)
        by_subject[fact.subject] = fact
        return old.fact_id if old is not None else None

    def get(self, subject: str, attribute: str) -> Fact | None:
        return self._facts.get(attribute, {}).get(subject)

    def facts(self) -> Iterator[Fact]:
        for by_subject in self._facts.values():
            yield from by_subject.values()

    def __len__(self) -> int:
        return sum(len(v) for v in self._facts.values())

    def retract_expired(self, now: int) -> list[str]:
        removed = []
        for attr in list(self._facts):
            by_subject = self._facts[attr]
            for subj in [s for s, f in by_subject.items() if f.expired(now)]:
                removed.append(by_subject.pop(subj).fact_id)
            if not by_subject:
                del self._facts[attr]
        return removed

    def candidates(self, attribute: str) -> dict[str, Fact]:
        return self._facts.get(attribute, {})

    def next_derived_id(self, rule: str, now: int) -> str:
        self._derived_ids += 1
        return f"{self.name}:{rule}@{now}#{self._derived_ids}"

    def next_seq(self, topic: str) -> int:
        self._seq[topic] = self._seq.get(topic, 0) + 1
        return self._seq[topic]


def assert_fact(kb: KnowledgeBase, fact: Fact) -> str | None:
    return kb.assert_fact(fact)


def retract_expired(kb: KnowledgeBase, now: int) -> list[str]:
    return kb.retract_expired(now)


# -- matching ---------------------------------------------------------------


def _unify(term, value: Any, bindings: dict[str, Any]) -> dict[str, Any] | None:
    if isinstance(term, A.Var):
        if term.name in bindings:
            return bindings if values_equal(bindings[term.name], value) else None
        out = dict(bindings)
        out[term.name] = value
        return out
    return bindings if values_equal(term.value, value) else None


def _join(kb: KnowledgeBase, patterns, i: int, bindings: dict, matched: list, now: int | None):
    if i == len(patterns):
        yield bindings, tuple(matched)
        return
    p = patterns[i]
    by_subject = kb.candidates(p.attribute)
    subj = p.subject
    if isinstance(subj, A.Var) and subj.name in bindings:
        key = bindings[subj.name]
        pool = [by_subject[key]] if isinstance(key, str) and key in by_subject else []
    elif isinstance(subj, A.Str):
        pool = [by_subject[subj.value]] if subj.value in by_subject else []
    elif isinstance(subj, A.Var):
        pool = list(by_subject.values())
    else:
        pool = []
    for fact in pool:
        if now is not None and fact.expired(now):
            continue
        b = _unify(subj, fact.subject, bindings)
        if b is None:
            continue
        b = _unify(p.value, fact.value, b)
        if b is None:
            continue
        matched.append(fact)
        yield from _join(kb, patterns, i + 1, b, matched, now)
        matched.pop()


def rule_activations(kb: KnowledgeBase, rule: A.Rule, now: int | None = None) -> list[Activation]:
    out = []
    for bindings, facts in _join(kb, rule.patterns, 0, {}, [], now):
        if rule.condition is not None:
            aliases = {p.alias: f for p, f in zip(rule.patterns, facts) if p.alias}
            try:
                if not truthy(rule.condition, bindings, aliases):
                    continue
            except EvalError as exc:
                kb.diagnostics.append(f"{rule.name}: {exc}")
                continue
        out.append(Activation(rule, tuple(sorted(bindings.items())), facts, fingerprint(bindings)))
    return out


def match(kb: KnowledgeBase, now: int | None = None) -> list[Activation]:
    """All activations over live facts, minus those blocked by refraction."""
    agenda = []
    for rule in kb.rules.values():
        for act in rule_activations(kb, rule, now):
            if act.refraction_key not in kb.refraction:
                agenda.append(act)
    return agenda


def resolve(agenda: Iterable[Activation]) -> list[Activation]:
    return sorted(agenda, key=lambda a: (-a.priority, -a.newest, a.rule_name, a.fingerprint))


# -- acting -----------------------------------------------------------------


def _segment(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def fire(kb: KnowledgeBase, act: Activation, bus: Bus | None, now: int) -> list[Context]:
    rule = act.rule
    bindings = dict(act.bindings)
    aliases = {p.alias: f for p, f in zip(rule.patterns, act.facts) if p.alias}
    produced = []
    for action in rule.actions:
        try:
            if isinstance(action, A.PublishAction):
                segs = ["context"] + [
                    _segment(bindings[s.name]) if isinstance(s, A.Var) else s for s in action.segments
                ]
                topic = "/".join(segs)
                split_topic(topic)
                fields = {name: evaluate(e, bindings, aliases) for name, e in action.fields}
                ctx = Context(topic, fields, now, rule.ttl_ms, rule.name, act.fact_ids)
                if bus is not None:
                    env = Envelope(topic, kb.name, now, kb.next_seq(topic), ctx.payload(), rule.ttl_ms)
                    ctx = Context(topic, fields, now, rule.ttl_ms, rule.name, act.fact_ids,
                                  bus.publish(env).msg_id)
                produced.append(ctx)
            else:
                subject = evaluate(action.subject, bindings, aliases)
                if not isinstance(subject, str) or not subject:
                    raise EvalError(f"fact subject must be a non-empty string, got {subject!r}")
                value = evaluate(action.value, bindings, aliases)
                fact = Fact(kb.next_derived_id(rule.name, now), subject, action.attribute, value,
                            now, action.ttl_ms, (("rule", rule.name),))
                kb.assert_fact(fact)
                kb.derived.append(fact)
        except (EvalError, MalformedTopic, KeyError) as exc:
            kb.diagnostics.append(f"{rule.name}@{now}: {type(exc).__name__}: {exc}")
    return produced


def run_cycle(kb: KnowledgeBase, bus: Bus | None, now: int, budget: int = DEFAULT_BUDGET) -> list[Context]:
    """Match, resolve and fire until the agenda is empty; return contexts in firing order."""
    contexts: list[Context] = []
    firings = 0
    while True:
        kb.retract_expired(now)
        agenda = resolve(match(kb, now))
        if not agenda:
            return contexts
        if firings >= budget:
            raise CycleBudgetExceeded(contexts, budget)
        head = agenda[0]
        kb.refraction.add(head.refraction_key)
        contexts.extend(fire(kb, head, bus, now))
        firings += 1
