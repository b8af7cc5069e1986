"""A CGHF instance: bus + fact generator + knowledge base driven on a shared clock."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable

from .bus import Bus, Envelope, is_valid_topic
from .facts import DEFAULT_RETENTION_MS, Fact, FactGenerator, Storage
from .inference import Context, CycleBudgetExceeded, KnowledgeBase, run_cycle
from .rules import ContextModel, RuleSet, ValidationError, validate

log = logging.getLogger(__name__)

STATIC_TTL_MS = 10**12


class RuleLoadError(Exception):
    def __init__(self, errors: list[ValidationError]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


@dataclass
class StepResult:
    now: int
    ingested: int = 0
    facts: list[Fact] = field(default_factory=list)
    derived: list[Fact] = field(default_factory=list)
    contexts: list[Context] = field(default_factory=list)
    budget_exceeded: bool = False


class CGHF:
    def __init__(
        self,
        name: str = "cghf",
        model: ContextModel | None = None,
        bus: Bus | None = None,
        retention_ms: int = DEFAULT_RETENTION_MS,
        budget: int = 1000,
    ):
        self.name = name
        self.model = model or ContextModel()
        self.bus = bus or Bus(name=f"{name}-bus")
        self.facts = FactGenerator(
            Storage(retention_ms), id_prefix=f"{name}:", protected=self.model.static_attributes()
        )
        self.kb = KnowledgeBase(name)
        self.budget = budget
        self._raw = self.bus.subscribe("raw/#", f"{name}/fact-generator")
        self._fact_seq: dict[str, int] = {}
        self._static_ids = 0
        self.lock = threading.RLock()

    # -- configuration --

    def check(self, rs: RuleSet) -> list[ValidationError]:
        errors = validate(rs, self.model)
        for d in rs.factdefs:
            if d.name in self.facts.defs:
                errors.append(ValidationError("DuplicateFactDefName", f"factdef {d.name} already installed"))
        for r in rs.rules:
            if r.name in self.kb.rules:
                errors.append(ValidationError("DuplicateRuleName", f"rule {r.name} already loaded"))
        return errors

    def load(self, rs: RuleSet) -> None:
        with self.lock:
            errors = self.check(rs)
            if errors:
                raise RuleLoadError(errors)
            self.facts.install(rs.factdefs)
            self.kb.add_rules(rs.rules)

    def unload(self, rule_names: Iterable[str] = (), factdef_names: Iterable[str] = ()) -> None:
        with self.lock:
            self.kb.remove_rules(rule_names)
            self.facts.remove(factdef_names)

    # -- facts --

    def assert_static(self, subject: str, attribute: str, value: Any, now: int) -> Fact:
        with self.lock:
            self._static_ids += 1
            fact = Fact(f"{self.name}:static#{self._static_ids}", subject, attribute, value, now,
                        STATIC_TTL_MS, (("topology",),))
            self.kb.assert_fact(fact)
            return fact

    def _publish_fact(self, fact: Fact) -> None:
        topic = f"facts/{fact.subject}/{fact.attribute}"
        if not is_valid_topic(topic):
            log.warning("fact %s not published: bad topic %r", fact.fact_id, topic)
            return
        seq = self._fact_seq[topic] = self._fact_seq.get(topic, 0) + 1
        self.bus.publish(Envelope(topic, self.name, fact.asserted_at, seq, fact.to_json(), fact.ttl))

    # -- the loop --

    def step(self, now: int) -> StepResult:
        with self.lock:
            return self._step(now)

    def ingest(self, now: int) -> int:
        """Move pending raw envelopes into storage without generating facts."""
        with self.lock:
            return self._ingest(now)

    def _ingest(self, now: int) -> int:
        count = 0
        while True:
            batch = self.bus.poll(self._raw, 1000, now=now)
            if not batch:
                return count
            for env in batch:
                count += self.facts.ingest_envelope(env)

    def _step(self, now: int) -> StepResult:
        result = StepResult(now, self._ingest(now))
        result.facts = self.facts.run(now)
        for fact in result.facts:
            self.kb.assert_fact(fact)
            self._publish_fact(fact)
        try:
            result.contexts = run_cycle(self.kb, self.bus, now, self.budget)
        except CycleBudgetExceeded as exc:
            log.warning("%s: %s", self.name, exc)
            result.contexts = exc.contexts
            result.budget_exceeded = True
        result.derived = self.kb.derived
        self.kb.derived = []
        for fact in result.derived:
            self._publish_fact(fact)
        return result
