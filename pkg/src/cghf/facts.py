"""Fact Generator: sample storage, windowed aggregates and threshold classification.

Information streams are stored per stream id (one raw topic each). Fact
definitions aggregate a stream over the half-open window ``[now - window, now)``
and classify the result; the first matching classifier entry emits one fact.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable

from .bus import Envelope
from .rules import ast as A
from .rules.evaluate import EvalError, evaluate, is_number, truthy, values_equal

DEFAULT_RETENTION_MS = 3_600_000


class FactsError(Exception):
    pass


class TimestampRegression(FactsError):
    pass


class InsufficientSamples(FactsError):
    pass


class DivisionByZero(FactsError):
    pass


class UnknownStream(FactsError):
    pass


@dataclass(frozen=True)
class Sample:
    stream_id: str
    timestamp: int
    value: float
    unit: str = ""


# provenance entries: ("stream", id, from, to) | ("rule", name) | ("topology",) | ("nbi", principal)


def stream_window(stream_id: str, start: int, end: int) -> tuple:
    return ("stream", stream_id, start, end)


def provenance_to_json(prov: Iterable[tuple]) -> list[dict[str, Any]]:
    out = []
    for p in prov:
        if p[0] == "stream":
            out.append({"stream": p[1], "from": p[2], "to": p[3]})
        elif p[0] == "rule":
            out.append({"rule": p[1]})
        else:
            out.append({"source": p[0], **({"id": p[1]} if len(p) > 1 else {})})
    return out


def provenance_from_json(items: Iterable[dict[str, Any]]) -> tuple:
    out = []
    for d in items:
        if "stream" in d:
            out.append(("stream", d["stream"], d["from"], d["to"]))
        elif "rule" in d:
            out.append(("rule", d["rule"]))
        else:
            out.append((d["source"], d["id"]) if "id" in d else (d["source"],))
    return tuple(out)


@dataclass(frozen=True)
class Fact:
    fact_id: str
    subject: str
    attribute: str
    value: Any
    asserted_at: int
    ttl: int
    provenance: tuple = ()

    def __post_init__(self):
        if self.ttl <= 0:
            raise ValueError(f"fact ttl must be positive, got {self.ttl}")

    def expired(self, now: int) -> bool:
        return self.asserted_at + self.ttl < now

    def to_json(self) -> dict[str, Any]:
        return {
            "fact_id": self.fact_id,
            "subject": self.subject,
            "attribute": self.attribute,
            "value": self.value,
            "asserted_at": self.asserted_at,
            "ttl_ms": self.ttl,
            "provenance": provenance_to_json(self.provenance),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Fact":
        return cls(
            obj["fact_id"],
            obj["subject"],
            obj["attribute"],
            obj["value"],
            int(obj["asserted_at"]),
            int(obj["ttl_ms"]),
            provenance_from_json(obj.get("provenance", ())),
        )


class Storage:
    """In-memory, per-stream, time-ordered sample log with retention eviction."""

    def __init__(self, retention_ms: int = DEFAULT_RETENTION_MS):
        if retention_ms <= 0:
            raise ValueError("retention must be positive")
        self.retention_ms = retention_ms
        self.lock = threading.RLock()
        self._times: dict[str, list[int]] = {}
        self._samples: dict[str, list[Sample]] = {}

    def ingest(self, sample: Sample) -> None:
        with self.lock:
            times = self._times.setdefault(sample.stream_id, [])
            samples = self._samples.setdefault(sample.stream_id, [])
            if times and sample.timestamp < times[-1]:
                raise TimestampRegression(
                    f"{sample.stream_id}: t={sample.timestamp} < last t={times[-1]}"
                )
            times.append(sample.timestamp)
            samples.append(sample)
            cut = bisect.bisect_left(times, sample.timestamp - self.retention_ms)
            if cut:
                del times[:cut]
                del samples[:cut]

    def streams(self) -> list[str]:
        with self.lock:
            return sorted(self._times)

    def query(self, stream_id: str, start: int, end: int) -> list[Sample]:
        if start > end:
            raise ValueError(f"query range [{start}, {end}) is inverted")
        with self.lock:
            if stream_id not in self._times:
                raise UnknownStream(stream_id)
            times = self._times[stream_id]
            lo = bisect.bisect_left(times, start)
            hi = bisect.bisect_left(times, end)
            return self._samples[stream_id][lo:hi]

    def aggregate(self, stream_id, fn, window_ms, now, horizon_ms=None) -> float:
        return aggregate(self, stream_id, fn, window_ms, now, horizon_ms)


def query_history(storage: Storage, stream_id: str, start: int, end: int) -> list[Sample]:
    return storage.query(stream_id, start, end)


def _mean(values: list[float]) -> float:
    # n*c/n need not round back to c; constant windows must give c exactly
    first = values[0]
    if all(v == first for v in values):
        return float(first)
    return math.fsum(values) / len(values)


def _exact_slope(times: list[int], values: list[float]) -> float:
    # integer arithmetic throughout; the final int/int division rounds once
    n = len(times)
    total = sum(times)
    w = [n * t - total for t in times]
    ratios = [float(v).as_integer_ratio() for v in values]
    den = max(d for _, d in ratios)
    sxy = sum(wi * num * (den // d) for wi, (num, d) in zip(w, ratios))
    sxx = sum(wi * wi for wi in w)
    return n * sxy / (sxx * den)


def ols_slope(times: list[float], values: list[float]) -> float:
    n = len(times)
    if n < 2:
        raise InsufficientSamples("trend needs at least two samples")
    if all(isinstance(t, int) for t in times):
        if min(times) == max(times):
            raise InsufficientSamples("trend needs samples at two distinct times")
        return _exact_slope(times, values)
    t_bar = math.fsum(times) / n
    v_bar = math.fsum(values) / n
    sxx = math.fsum((t - t_bar) ** 2 for t in times)
    if sxx == 0:
        raise InsufficientSamples("trend needs samples at two distinct times")
    sxy = math.fsum((t - t_bar) * (v - v_bar) for t, v in zip(times, values))
    return sxy / sxx


def aggregate(
    storage: Storage,
    stream_id: str,
    fn: str,
    window_ms: int,
    now: int,
    horizon_ms: int | None = None,
) -> float:
    """Aggregate ``stream_id`` over ``[now - window_ms, now)``.

    ``rate_of_change`` compares the means of the two half-windows and is a
    dimensionless fraction; ``trend_slope`` is in value units per ms.
    """
    if window_ms <= 0:
        raise ValueError("window must be positive")
    start = now - window_ms
    samples = storage.query(stream_id, start, now)
    if fn == "mean":
        if not samples:
            raise InsufficientSamples(f"{stream_id}: no samples in [{start}, {now})")
        return _mean([s.value for s in samples])
    if fn == "rate_of_change":
        mid = now - window_ms / 2
        first = [s.value for s in samples if s.timestamp < mid]
        second = [s.value for s in samples if s.timestamp >= mid]
        if not first or not second:
            raise InsufficientSamples(f"{stream_id}: each half-window needs a sample")
        base = _mean(first)
        if base == 0:
            raise DivisionByZero(f"{stream_id}: first half-window mean is 0")
        return (_mean(second) - base) / base
    if fn in ("trend_slope", "forecast"):
        slope = ols_slope([s.timestamp for s in samples], [s.value for s in samples])
        if fn == "trend_slope":
            return slope
        if horizon_ms is None:
            raise ValueError("forecast needs a horizon")
        return samples[-1].value + slope * horizon_ms
    raise ValueError(f"unknown aggregate {fn!r}")


@dataclass(frozen=True)
class Diagnostic:
    factdef: str
    now: int
    reason: str


def run_fact_pipeline(
    defs: Iterable[A.FactDef],
    storage: Storage,
    now: int,
    ledger: dict,
    *,
    diagnostics: list[Diagnostic] | None = None,
    protected: frozenset[str] = frozenset(),
    id_prefix: str = "",
) -> list[Fact]:
    """Evaluate every fact definition once at ``now``.

    ``ledger`` maps (factdef, subject, attribute) to the last emitted
    (value, time) and is updated in place; it drives re-emit suppression.
    Failures are appended to ``diagnostics`` instead of being raised.
    """
    diags = diagnostics if diagnostics is not None else []
    out: list[Fact] = []
    with storage.lock:
        for d in defs:
            try:
                agg = aggregate(storage, d.stream, d.function, d.window_ms, now, d.horizon_ms)
            except FactsError as exc:
                diags.append(Diagnostic(d.name, now, f"{type(exc).__name__}: {exc}"))
                continue
            emit = None
            for entry in d.classifier:
                try:
                    if entry.predicate is None or truthy(entry.predicate, value=agg):
                        emit = entry.emit
                        break
                except EvalError as exc:
                    diags.append(Diagnostic(d.name, now, f"EvalError: {exc}"))
            if emit is None:
                continue
            if emit.attribute in protected:
                diags.append(Diagnostic(d.name, now, f"refused to write static attribute {emit.attribute}"))
                continue
            try:
                value = evaluate(emit.value, value=agg)
            except EvalError as exc:
                diags.append(Diagnostic(d.name, now, f"EvalError: {exc}"))
                continue
            key = (d.name, emit.subject, emit.attribute)
            last = ledger.get(key)
            if last is not None and values_equal(last[0], value) and now - last[1] < d.reemit_interval:
                continue
            ledger[key] = (value, now)
            out.append(Fact(
                fact_id=f"{id_prefix}{d.name}@{now}",
                subject=emit.subject,
                attribute=emit.attribute,
                value=value,
                asserted_at=now,
                ttl=d.ttl_ms,
                provenance=(stream_window(d.stream, now - d.window_ms, now),),
            ))
    return out


@dataclass
class FactGenerator:
    """Stateful wrapper: installed definitions, storage and the emission ledger."""

    storage: Storage = field(default_factory=Storage)
    id_prefix: str = ""
    protected: frozenset[str] = frozenset()
    defs: dict[str, A.FactDef] = field(default_factory=dict)
    ledger: dict = field(default_factory=dict)
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def install(self, defs: Iterable[A.FactDef]) -> None:
        defs = list(defs)
        clash = [d.name for d in defs if d.name in self.defs]
        if clash:
            raise ValueError(f"factdefs already installed: {', '.join(clash)}")
        for d in defs:
            self.defs[d.name] = d

    def remove(self, names: Iterable[str]) -> None:
        for name in names:
            self.defs.pop(name, None)
            for key in [k for k in self.ledger if k[0] == name]:
                del self.ledger[key]

    def ingest(self, sample: Sample) -> None:
        self.storage.ingest(sample)

    def ingest_envelope(self, env: Envelope) -> bool:
        value = env.payload.get("value")
        if not is_number(value):
            self.diagnostics.append(Diagnostic("-", env.timestamp, f"non-numeric sample on {env.topic}"))
            return False
        try:
            self.storage.ingest(Sample(env.topic, env.timestamp, float(value), str(env.payload.get("unit", ""))))
        except TimestampRegression as exc:
            self.diagnostics.append(Diagnostic("-", env.timestamp, f"TimestampRegression: {exc}"))
            return False
        return True

    def run(self, now: int) -> list[Fact]:
        return run_fact_pipeline(
            self.defs.values(),
            self.storage,
            now,
            self.ledger,
            diagnostics=self.diagnostics,
            protected=self.protected,
            id_prefix=self.id_prefix,
        )
