"""Discrete-event kernel: virtual clock, ordered event queue and seeded streams.

Times are held internally as integer nanoseconds so that ordering and every
derived accounting identity are exact and platform independent.  The public
surface speaks seconds (floats) and converts at the boundary.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

NS_PER_S = 1_000_000_000


def to_ns(seconds: float) -> int:
    """Convert seconds to integer nanoseconds (round half to even)."""
    if seconds != seconds or seconds in (float("inf"), float("-inf")):
        raise ValueError(f"time must be finite, got {seconds!r}")
    return round(seconds * NS_PER_S)


def to_s(ns: int) -> float:
    return ns / NS_PER_S


class EventKind(str, Enum):
    FAULT_ARRIVED = "fault-arrived"
    FAULT_ACTIVATED = "fault-activated"
    FAULT_VOIDED = "fault-voided"
    ERROR_MANIFESTED = "error-manifested"
    FAILURE_DECLARED = "failure-declared"
    DETECTION = "detection"
    CONTAINMENT = "containment"
    MITIGATION_START = "mitigation-start"
    MITIGATION_COMPLETE = "mitigation-complete"
    CHECKPOINT_TAKEN = "checkpoint-taken"
    MESSAGE_SEND = "message-send"
    MESSAGE_RECEIVE = "message-receive"
    MESSAGE_DROPPED = "message-dropped"
    HEARTBEAT = "heartbeat"
    PREDICTION = "prediction"
    WORKLOAD_PROGRESS = "workload-progress"
    WORKLOAD_COMPLETE = "workload-complete"
    RUN_ABORTED = "run-aborted"
    # private kernel callbacks; never traced
    TIMER = "timer"


class PastTimeError(ValueError):
    def __init__(self, clock_ns: int, requested_ns: int):
        super().__init__(
            f"past-time: cannot schedule at t={to_s(requested_ns)!r} s, clock is at t={to_s(clock_ns)!r} s"
        )
        self.clock = to_s(clock_ns)
        self.requested = to_s(requested_ns)


class StreamError(ValueError):
    pass


class UnrecoverableError(RuntimeError):
    """Raised by handlers when the modeled system cannot continue."""


class SimulationAbort(RuntimeError):
    def __init__(self, event_id: int, reason: str):
        super().__init__(f"simulation aborted at event {event_id}: {reason}")
        self.event_id = event_id
        self.reason = reason


@dataclass(slots=True)
class EventRecord:
    """A timestamped simulation event.

    ``seq`` doubles as the event id; it is assigned by :meth:`Simulator.schedule`.
    """

    time: int
    kind: EventKind
    subject: str = ""
    cause: Optional[int] = None
    payload: dict = field(default_factory=dict)
    pattern: Optional[str] = None
    seq: int = -1
    handler: Optional[Callable[["EventRecord"], Any]] = None

    @property
    def id(self) -> int:
        return self.seq

    @property
    def seconds(self) -> float:
        return to_s(self.time)

    def to_dict(self) -> dict:
        return {
            "id": self.seq,
            "t": to_s(self.time),
            "kind": self.kind.value,
            "subject": self.subject,
            "cause": self.cause,
            "pattern": self.pattern,
            "payload": self.payload,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


@dataclass
class RngStream:
    """A labelled random stream; identical ``(seed, label)`` gives identical draws."""

    label: str
    seed: int
    generator: np.random.Generator = field(repr=False)

    @classmethod
    def create(cls, seed: int, label: str) -> "RngStream":
        if not label:
            raise StreamError("stream label must be non-empty")
        ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_label_words(label)])
        return cls(label=label, seed=seed, generator=np.random.Generator(np.random.PCG64(ss)))

    def random(self) -> float:
        return float(self.generator.random())

    def exponential(self, mean: float, size=None):
        return self.generator.exponential(mean, size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size)

    def normal(self, loc: float, scale: float, size=None):
        return self.generator.normal(loc, scale, size)


class Simulator:
    """Single-threaded event loop ordered lexicographically by ``(time, seq)``."""

    def __init__(self, seed: int, trace: Optional[Callable[[EventRecord], None]] = None):
        self.seed = int(seed)
        self.now_ns = 0
        self._queue: list[tuple[int, int, EventRecord]] = []
        self._counter = itertools.count(1)
        self._cancelled: set[int] = set()
        self._subscribers: dict[Optional[EventKind], list[tuple[int, int, Callable]]] = {}
        self._sub_order = itertools.count()
        self._labels: set[str] = set()
        self._stopped = False
        self._last: Optional[tuple[int, int]] = None
        self.trace = trace
        self.dispatched = 0

    @property
    def now(self) -> float:
        return to_s(self.now_ns)

    # scheduling -----------------------------------------------------------------

    def schedule(self, event: EventRecord) -> int:
        if event.time < self.now_ns:
            raise PastTimeError(self.now_ns, event.time)
        event.seq = next(self._counter)
        heapq.heappush(self._queue, (event.time, event.seq, event))
        return event.seq

    def post(
        self,
        kind: EventKind,
        *,
        at_ns: Optional[int] = None,
        delay_ns: int = 0,
        subject: str = "",
        cause: Optional[int] = None,
        payload: Optional[dict] = None,
        pattern: Optional[str] = None,
    ) -> int:
        t = self.now_ns + delay_ns if at_ns is None else at_ns
        return self.schedule(EventRecord(t, kind, subject, cause, payload if payload is not None else {}, pattern))

    def call_at(self, at_ns: int, fn: Callable[[EventRecord], Any], **payload) -> int:
        """Schedule a private callback; it is ordered like any event but not traced."""
        return self.schedule(EventRecord(at_ns, EventKind.TIMER, payload=payload, handler=fn))

    def cancel(self, event_id: Optional[int]) -> None:
        if event_id is not None:
            self._cancelled.add(event_id)

    def subscribe(self, kind: Optional[EventKind], handler: Callable[[EventRecord], Any], priority: int = 0) -> None:
        """Register ``handler`` for ``kind`` (``None`` subscribes to every traced kind)."""
        subs = self._subscribers.setdefault(kind, [])
        subs.append((priority, next(self._sub_order), handler))
        subs.sort(key=lambda s: (s[0], s[1]))

    def fork_stream(self, label: str) -> RngStream:
        if label in self._labels:
            raise StreamError(f"duplicate stream label {label!r}")
        stream = RngStream.create(self.seed, label)
        self._labels.add(label)
        return stream

    def stop(self) -> None:
        self._stopped = True

    @property
    def stopped(self) -> bool:
        return self._stopped

    # dispatch -------------------------------------------------------------------

    def run_until(self, t_end: float | int, *, ns: bool = False) -> int:
        end = int(t_end) if ns else to_ns(t_end)
        if end < self.now_ns:
            raise PastTimeError(self.now_ns, end)
        count = 0
        queue = self._queue
        cancelled = self._cancelled
        while queue and not self._stopped:
            t, seq, ev = queue[0]
            if t > end:
                break
            heapq.heappop(queue)
            if seq in cancelled:
                cancelled.discard(seq)
                continue
            self.now_ns = t
            self._dispatch(ev)
            count += 1
        if not self._stopped:
            self.now_ns = end
        self.dispatched += count
        return count

    def _dispatch(self, ev: EventRecord) -> None:
        try:
            if ev.handler is not None:
                ev.handler(ev)
                return
            if self.trace is not None:
                self.trace(ev)
            for _, _, fn in self._subscribers.get(ev.kind, ()):
                fn(ev)
            for _, _, fn in self._subscribers.get(None, ()):
                fn(ev)
        except SimulationAbort:
            raise
        except Exception as exc:  # noqa: BLE001 - every handler failure aborts the run
            raise SimulationAbort(ev.seq, f"{type(exc).__name__}: {exc}") from exc

    def pending(self) -> int:
        return sum(1 for _, seq, _ in self._queue if seq not in self._cancelled)
