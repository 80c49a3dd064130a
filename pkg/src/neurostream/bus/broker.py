"""In-process topic broker with bounded per-subscriber queues."""
from __future__ import annotations

import collections
import threading
from dataclasses import dataclass

from ..errors import QueueOverflow, SchemaMismatch

DROP_OLDEST = "drop-oldest"
DROP_NEWEST = "drop-newest"
ERROR = "error"
POLICIES = (DROP_OLDEST, DROP_NEWEST, ERROR)
DEFAULT_DEPTH = 8


class Closed(Exception):
    """Raised by Subscription.get once the subscription is closed and drained."""


class Subscription:
    def __init__(self, topic: "Topic", depth: int = DEFAULT_DEPTH, policy: str = DROP_OLDEST):
        if policy not in POLICIES:
            raise ValueError(f"unknown overflow policy {policy!r}")
        if depth < 1:
            raise ValueError("queue depth must be >= 1")
        self.topic = topic
        self.depth = depth
        self.policy = policy
        self.dropped = 0
        self.delivered = 0
        self._q = collections.deque()
        self._cond = threading.Condition()
        self._closed = False

    def _put(self, msg):
        with self._cond:
            if self._closed:
                return
            if len(self._q) >= self.depth:
                if self.policy == ERROR:
                    raise QueueOverflow(f"subscriber queue on {self.topic.name} full ({self.depth})")
                self.dropped += 1
                if self.policy == DROP_NEWEST:
                    return
                self._q.popleft()
            self._q.append(msg)
            self._cond.notify()

    def get(self, timeout: float | None = None):
        """Next message, or None on timeout. Raises Closed after close() once drained."""
        with self._cond:
            if not self._q and not self._closed:
                self._cond.wait(timeout)
            if self._q:
                self.delivered += 1
                return self._q.popleft()
            if self._closed:
                raise Closed(self.topic.name)
            return None

    def get_nowait(self):
        with self._cond:
            if self._q:
                self.delivered += 1
                return self._q.popleft()
            return None

    def __len__(self):
        with self._cond:
            return len(self._q)

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self.topic._remove(self)

    @property
    def closed(self):
        return self._closed

    def __iter__(self):
        while True:
            try:
                msg = self.get()
            except Closed:
                return
            if msg is not None:
                yield msg


@dataclass
class Topic:
    name: str
    schema: type | None = None

    def __post_init__(self):
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()
        self.published = 0

    def _remove(self, sub):
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    @property
    def subscribers(self):
        with self._lock:
            return list(self._subs)


class Broker:
    """Topic registry. ``publish`` delivers in order to every current subscriber of the topic."""

    def __init__(self):
        self._topics: dict[str, Topic] = {}
        self._lock = threading.Lock()

    def topic(self, name: str, schema: type | None = None) -> Topic:
        if not name.startswith("/"):
            raise ValueError(f"topic names start with '/', got {name!r}")
        with self._lock:
            t = self._topics.get(name)
            if t is None:
                t = self._topics[name] = Topic(name, schema)
            elif schema is not None:
                if t.schema is None:
                    t.schema = schema
                elif t.schema is not schema:
                    raise SchemaMismatch(
                        f"{name} carries {t.schema.__name__}, requested {schema.__name__}"
                    )
            return t

    @property
    def topics(self) -> dict[str, Topic]:
        with self._lock:
            return dict(self._topics)

    def subscribe(self, name: str, schema: type | None = None, depth: int = DEFAULT_DEPTH,
                  policy: str = DROP_OLDEST) -> Subscription:
        t = self.topic(name, schema)
        sub = Subscription(t, depth, policy)
        with t._lock:
            t._subs.append(sub)
        return sub

    def publish(self, name: str, msg) -> int:
        """Deliver ``msg``; returns the number of subscribers it was queued for."""
        t = self.topic(name)
        with t._lock:
            if t.schema is None:
                t.schema = type(msg)
            elif not isinstance(msg, t.schema):
                raise SchemaMismatch(f"{name} carries {t.schema.__name__}, got {type(msg).__name__}")
            subs = list(t._subs)
            # holding the topic lock keeps per-subscriber order equal to publish order
            for s in subs:
                s._put(msg)
            t.published += 1
        return len(subs)


def broker_publish(broker: Broker, topic: str, message) -> int:
    return broker.publish(topic, message)


def broker_subscribe(broker: Broker, topic: str, **kwargs) -> Subscription:
    return broker.subscribe(topic, **kwargs)
