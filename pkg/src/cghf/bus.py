"""Topic-based publish/subscribe engine with pull delivery and peer federation.

Topics are slash-separated segments. Patterns may use ``*`` for exactly one
segment and a trailing ``#`` for the rest of the topic (zero or more segments).
Delivery is pull-based: subscribers drain their queue with :meth:`Bus.poll`.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable

DEFAULT_QUEUE_CAPACITY = 10_000

_bus_ids = itertools.count(1)


class BusError(Exception):
    """Base class; the class name doubles as the wire-level error name."""


class MalformedTopic(BusError):
    pass


class MalformedPattern(BusError):
    pass


class SeqRegression(BusError):
    pass


class DuplicateMessage(BusError):
    pass


class UnknownHandle(BusError):
    pass


class SelfFederation(BusError):
    pass


def split_topic(topic: str) -> tuple[str, ...]:
    if not isinstance(topic, str) or not topic:
        raise MalformedTopic(f"empty topic: {topic!r}")
    segments = tuple(topic.split("/"))
    for seg in segments:
        if not seg or "*" in seg or "#" in seg:
            raise MalformedTopic(f"bad segment {seg!r} in topic {topic!r}")
    return segments


def is_valid_topic(topic: str) -> bool:
    try:
        split_topic(topic)
    except MalformedTopic:
        return False
    return True


@dataclass(frozen=True)
class TopicPattern:
    segments: tuple[str, ...]

    @classmethod
    def parse(cls, text: "str | TopicPattern") -> "TopicPattern":
        if isinstance(text, TopicPattern):
            return text
        if not isinstance(text, str) or not text:
            raise MalformedPattern(f"empty pattern: {text!r}")
        segments = tuple(text.split("/"))
        for i, seg in enumerate(segments):
            if seg in ("*", "#"):
                if seg == "#" and i != len(segments) - 1:
                    raise MalformedPattern(f"'#' must be the last segment: {text!r}")
                continue
            if not seg or "*" in seg or "#" in seg:
                raise MalformedPattern(f"bad segment {seg!r} in pattern {text!r}")
        return cls(segments)

    def __str__(self) -> str:
        return "/".join(self.segments)

    def matches(self, topic: "str | tuple[str, ...]") -> bool:
        segs = split_topic(topic) if isinstance(topic, str) else topic
        pat = self.segments
        for i, p in enumerate(pat):
            if p == "#":
                return True
            if i >= len(segs):
                return False
            if p != "*" and p != segs[i]:
                return False
        return len(segs) == len(pat)

    def covers(self, other: "TopicPattern") -> bool:
        """True iff every topic matched by ``other`` is also matched by ``self``."""
        return _covers(self.segments, other.segments)

    def fixed_prefix(self) -> tuple[str, ...]:
        out = []
        for seg in self.segments:
            if seg in ("*", "#"):
                break
            out.append(seg)
        return tuple(out)


def _covers(scope: tuple[str, ...], pat: tuple[str, ...]) -> bool:
    # decided over topics of length >= 1: compare the set of lengths each side
    # accepts, then position by position
    s_hash, p_hash = scope[-1:] == ("#",), pat[-1:] == ("#",)
    s_fixed, p_fixed = scope[: len(scope) - s_hash], pat[: len(pat) - p_hash]
    ko, ki = len(s_fixed), len(p_fixed)
    if p_hash:
        if not (s_hash and ko <= max(ki, 1)):
            return False
    elif not (ki == ko or (s_hash and ki >= ko)):
        return False
    for j, seg in enumerate(s_fixed):
        if seg == "*":
            continue
        if j >= ki or p_fixed[j] != seg:
            return False
    return True


@dataclass(frozen=True)
class Envelope:
    topic: str
    source: str
    timestamp: int
    seq: int
    payload: dict[str, Any] = field(default_factory=dict)
    ttl: int | None = None
    msg_id: str | None = None

    def expired(self, now: int) -> bool:
        return self.ttl is not None and self.timestamp + self.ttl < now

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "topic": self.topic,
            "source": self.source,
            "ts": self.timestamp,
            "seq": self.seq,
            "payload": self.payload,
        }
        if self.ttl is not None:
            out["ttl_ms"] = self.ttl
        out["msg_id"] = self.msg_id
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Envelope":
        try:
            return cls(
                topic=obj["topic"],
                source=obj["source"],
                timestamp=int(obj["ts"]),
                seq=int(obj["seq"]),
                payload=dict(obj.get("payload") or {}),
                ttl=None if obj.get("ttl_ms") is None else int(obj["ttl_ms"]),
                msg_id=obj.get("msg_id"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedTopic(f"malformed envelope: {exc}") from exc


@dataclass(frozen=True)
class PublishReceipt:
    msg_id: str
    matched_count: int


@dataclass
class Subscription:
    handle: str
    pattern: TopicPattern
    subscriber_id: str
    created_at: int
    queue: deque = field(default_factory=deque, repr=False)
    dropped: int = 0


@dataclass
class PeerLink:
    """One side of a federation link; ``seen`` holds msg_ids sent to the peer."""

    peer_id: str
    export_scope: TopicPattern
    import_scope: TopicPattern
    peer: "Bus" = field(repr=False)
    seen: set[str] = field(default_factory=set, repr=False)
    mirror: "PeerLink | None" = field(default=None, repr=False)


class Bus:
    def __init__(
        self,
        name: str | None = None,
        clock: Callable[[], int] | None = None,
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
    ):
        self.name = name or f"bus{next(_bus_ids)}"
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.queue_capacity = queue_capacity
        self._lock = threading.RLock()
        self._subs: dict[str, Subscription] = {}
        self._handles = itertools.count(1)
        self._msg_counter = itertools.count(1)
        self._last_seq: dict[tuple[str, str], int] = {}
        self._accepted: set[str] = set()
        self.links: list[PeerLink] = []
        self.dropped_total = 0

    def __repr__(self) -> str:
        return f"Bus({self.name!r})"

    # -- publish side -----------------------------------------------------

    def publish(self, env: Envelope) -> PublishReceipt:
        receipt, forwards = self._accept(env, origin=None)
        self._forward(forwards)
        return receipt

    def _import(self, env: Envelope, origin: "Bus") -> None:
        _, forwards = self._accept(env, origin=origin)
        self._forward(forwards)

    def _forward(self, forwards: list[tuple[PeerLink, Envelope]]) -> None:
        # outside the lock: peers may forward back into us from other threads
        for link, env in forwards:
            link.peer._import(env, origin=self)

    def _accept(self, env: Envelope, origin: "Bus | None"):
        segs = split_topic(env.topic)
        if not isinstance(env.seq, int):
            raise SeqRegression(f"seq must be an integer, got {env.seq!r}")
        with self._lock:
            key = (env.source, env.topic)
            last = self._last_seq.get(key)
            if origin is None:
                if last is not None and env.seq <= last:
                    raise SeqRegression(
                        f"seq {env.seq} <= last {last} for {env.source}@{env.topic}"
                    )
                if env.msg_id is None:
                    env = replace(env, msg_id=f"{self.name}:{next(self._msg_counter)}")
                elif env.msg_id in self._accepted:
                    raise DuplicateMessage(env.msg_id)
            elif env.msg_id in self._accepted:
                return PublishReceipt(env.msg_id, 0), []
            self._accepted.add(env.msg_id)
            if last is None or env.seq > last:
                self._last_seq[key] = env.seq

            matched = 0
            for sub in self._subs.values():
                if sub.pattern.matches(segs):
                    if len(sub.queue) >= self.queue_capacity:
                        sub.queue.popleft()
                        sub.dropped += 1
                        self.dropped_total += 1
                    sub.queue.append(env)
                    matched += 1

            forwards = []
            for link in self.links:
                if link.peer is origin or env.msg_id in link.seen:
                    continue
                if link.export_scope.matches(segs):
                    link.seen.add(env.msg_id)
                    forwards.append((link, env))
        return PublishReceipt(env.msg_id, matched), forwards

    # -- subscribe side ---------------------------------------------------

    def subscribe(self, pattern: "str | TopicPattern", subscriber_id: str) -> Subscription:
        pat = TopicPattern.parse(pattern)
        with self._lock:
            handle = f"{self.name}/sub-{next(self._handles)}"
            sub = Subscription(handle, pat, subscriber_id, created_at=self.clock())
            self._subs[handle] = sub
        return sub

    def unsubscribe(self, handle: "str | Subscription") -> None:
        key = handle.handle if isinstance(handle, Subscription) else handle
        with self._lock:
            if self._subs.pop(key, None) is None:
                raise UnknownHandle(key)

    def poll(self, handle: "str | Subscription", max_n: int = 100, now: int | None = None) -> list[Envelope]:
        key = handle.handle if isinstance(handle, Subscription) else handle
        with self._lock:
            sub = self._subs.get(key)
            if sub is None:
                raise UnknownHandle(key)
            if now is None:
                now = self.clock()
            out: list[Envelope] = []
            q = sub.queue
            while q and len(out) < max_n:
                env = q.popleft()
                if not env.expired(now):
                    out.append(env)
        return out

    def pending(self, handle: "str | Subscription") -> int:
        key = handle.handle if isinstance(handle, Subscription) else handle
        with self._lock:
            if key not in self._subs:
                raise UnknownHandle(key)
            return len(self._subs[key].queue)

    def has_handle(self, handle: str) -> bool:
        with self._lock:
            return handle in self._subs

    def drop_counters(self) -> dict[str, int]:
        with self._lock:
            return {h: s.dropped for h, s in self._subs.items()}

    # -- federation -------------------------------------------------------

    def federate(
        self,
        peer: "Bus",
        export_scope: "str | TopicPattern",
        import_scope: "str | TopicPattern",
    ) -> PeerLink:
        """Link this bus with ``peer``.

        Publishes here matching ``export_scope`` are replayed on the peer, and
        publishes there matching ``import_scope`` are replayed here. Replays keep
        their msg_id, so duplicates arriving over other paths are discarded.
        """
        if peer is self:
            raise SelfFederation(self.name)
        if peer.name == self.name:
            raise SelfFederation(f"peer shares bus name {self.name!r}; msg_ids would collide")
        exp = TopicPattern.parse(export_scope)
        imp = TopicPattern.parse(import_scope)
        ours = PeerLink(peer.name, exp, imp, peer)
        theirs = PeerLink(self.name, imp, exp, self)
        ours.mirror, theirs.mirror = theirs, ours
        with self._lock:
            self.links.append(ours)
        with peer._lock:
            peer.links.append(theirs)
        return ours
