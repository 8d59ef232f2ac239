"""Application progress and the time ledger.

The job advances all processes in lockstep.  At every instant it is in one
mode: computing, running an activity (checkpoint, logging, migration,
recovery, ...), idle while blocked, or finished.  Each elapsed nanosecond is
charged to exactly one bucket, which makes the accounting identity exact.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from ..kernel import EventRecord, Simulator

BUCKETS = ("compute", "checkpoint", "logging", "redundancy", "detection", "migration", "recovery", "idle")
PPM = 1_000_000


@dataclass
class Activity:
    bucket: str
    duration_ns: int
    on_done: Optional[Callable[[], None]] = None
    while_blocked: bool = False
    label: str = ""
    on_abort: Optional[Callable[[], None]] = None


class Job:
    """Lockstep progress of the application.

    ``on_milestone(progress_ns)`` is invoked whenever progress reaches the
    workload's next milestone; progress hooks registered with
    :meth:`add_hook` fire afterwards at the same progress point.
    """

    def __init__(
        self,
        sim: Simulator,
        work_ns: int,
        next_milestone: Callable[[int], Optional[int]],
        on_milestone: Callable[[int], None],
        on_finish: Callable[[str], None],
    ):
        self.sim = sim
        self.work_ns = work_ns
        self._next_milestone = next_milestone
        self._on_milestone = on_milestone
        self._on_finish = on_finish
        self.progress = 0
        self.lost = 0
        self.buckets = dict.fromkeys(BUCKETS, 0)
        self.mode = "none"
        self.since = 0
        self.blockers: set[str] = set()
        self.queue: deque[Activity] = deque()
        self.current: Optional[Activity] = None
        self.timer: Optional[int] = None
        self.hooks: dict[int, tuple[int, Callable[[int], None]]] = {}
        self._hook_ids = itertools.count(1)
        self.dilation: dict[str, int] = {}  # bucket -> extra time per unit work, in ppm
        self._dil_total = 0
        self._target: Optional[int] = None
        # compute segment: start time/progress and extra time already charged per bucket
        self._seg_t0 = 0
        self._seg_p0 = 0
        self._seg_extra: dict[str, int] = {}
        self._holding = False

    # public surface ----------------------------------------------------------------

    @property
    def finished(self) -> bool:
        return self.mode in ("done", "aborted")

    def start(self) -> None:
        self._kick()

    def set_dilation(self, bucket: str, fraction: float) -> None:
        """Every unit of work costs ``1 + fraction`` time, the extra charged to ``bucket``."""
        if fraction < 0:
            raise ValueError("dilation fraction must be >= 0")
        self._transition(lambda: self._set_dil(bucket, fraction))

    def _set_dil(self, bucket: str, fraction: float) -> None:
        self.dilation[bucket] = round(fraction * PPM)
        self._dil_total = sum(self.dilation.values())

    def add_hook(self, position_ns: int, fn: Callable[[int], None]) -> int:
        if position_ns <= self.progress:
            raise ValueError(f"hook position {position_ns} is not ahead of progress {self.progress}")
        hid = next(self._hook_ids)
        self._transition(lambda: self.hooks.__setitem__(hid, (position_ns, fn)))
        return hid

    def remove_hook(self, hid: Optional[int]) -> None:
        if hid is not None and hid in self.hooks:
            self._transition(lambda: self.hooks.pop(hid, None))

    def request(self, activity: Activity, front: bool = False) -> None:
        def add():
            if front:
                self.queue.appendleft(activity)
            else:
                self.queue.append(activity)

        self._transition(add)

    def drop(self, label: str) -> None:
        """Remove queued (not yet started) activities carrying ``label``."""
        self._transition(lambda: self._drop(label))

    def _drop(self, label: str) -> None:
        kept = [a for a in self.queue if a.label != label]
        self.queue.clear()
        self.queue.extend(kept)

    def block(self, key: str) -> None:
        def do():
            self.blockers.add(key)
            cur = self.current
            if cur is not None and not cur.while_blocked:
                self.sim.cancel(self.timer)
                self.timer = None
                self.current = None
                self.mode = "none"
                if cur.on_abort is not None:
                    cur.on_abort()

        self._transition(do)

    def unblock(self, key: str) -> None:
        self._transition(lambda: self.blockers.discard(key))

    def set_progress(self, position_ns: int) -> int:
        """Move progress back to ``position_ns`` (rollback); returns the work lost."""
        lost = max(0, self.progress - position_ns)

        def do():
            self.lost += lost
            self.progress = position_ns

        self._transition(do)
        return lost

    def advance_without_time(self, position_ns: int) -> None:
        """Replay: move progress forward with its time charged elsewhere."""
        regained = max(0, position_ns - self.progress)

        def do():
            self.lost -= regained
            self.progress = position_ns

        self._transition(do)

    def position(self) -> int:
        """Current progress, charging elapsed time first."""
        if not self.finished:
            self._sync()
        return self.progress

    def finish(self, how: str) -> None:
        """Stop for good: ``how`` is "done" or "aborted"."""
        if self.finished:
            return
        self._sync()
        self.sim.cancel(self.timer)
        self.timer = None
        self.current = None
        self.queue.clear()
        self.mode = how
        self._on_finish(how)

    def settle(self) -> None:
        """Charge time up to now (used when the run ends at the horizon)."""
        if not self.finished:
            self._sync()

    def total_ns(self) -> int:
        return sum(self.buckets.values())

    # internals ---------------------------------------------------------------------

    def _transition(self, change: Callable[[], None]) -> None:
        if self.finished:
            change()
            return
        self._sync()
        if self.mode == "compute":
            self.sim.cancel(self.timer)
            self.timer = None
            self.mode = "none"
        elif self.mode == "idle":
            self.mode = "none"
        change()
        self._kick()

    def _sync(self) -> None:
        now = self.sim.now_ns
        elapsed = now - self.since
        if elapsed > 0:
            mode = self.mode
            if mode == "compute":
                self._charge_compute()
            elif mode == "activity" and self.current is not None:
                self.buckets[self.current.bucket] += elapsed
            else:
                self.buckets["idle"] += elapsed
        self.since = now

    def _charge_compute(self) -> None:
        # measured from the segment start so repeated partial syncs never lose a nanosecond
        total = self.sim.now_ns - self._seg_t0
        dil = self._dil_total
        gained = total if dil == 0 else total * PPM // (PPM + dil)
        gained = min(gained, self._target - self._seg_p0)
        delta = gained - (self.progress - self._seg_p0)
        self.progress += delta
        self.buckets["compute"] += delta
        extra = total - gained
        if extra and not dil:
            self.buckets["idle"] += extra - self._seg_extra.get("idle", 0)
            self._seg_extra["idle"] = extra
        elif extra:
            items = sorted(self.dilation.items())
            left = extra
            for i, (bucket, ppm) in enumerate(items):
                share = left if i == len(items) - 1 else extra * ppm // dil
                left -= share
                self.buckets[bucket] += share - self._seg_extra.get(bucket, 0)
                self._seg_extra[bucket] = share

    def _time_for(self, work_ns: int) -> int:
        if self._dil_total == 0:
            return work_ns
        return -(-work_ns * (PPM + self._dil_total) // PPM)

    def _kick(self) -> None:
        if self._holding or self.finished or self.mode in ("activity", "compute"):
            return
        for i, a in enumerate(self.queue):
            if a.while_blocked or not self.blockers:
                del self.queue[i]
                self.current = a
                self.mode = "activity"
                self.timer = self.sim.call_at(self.sim.now_ns + a.duration_ns, self._activity_end)
                return
        if self.blockers:
            self.mode = "idle"
            return
        if self.progress >= self.work_ns:
            self.finish("done")
            return
        target = self._next_target()
        self.mode = "compute"
        self._target = target
        self._seg_t0 = self.sim.now_ns
        self._seg_p0 = self.progress
        self._seg_extra = {}
        self.timer = self.sim.call_at(self.sim.now_ns + self._time_for(target - self.progress), self._reached)

    def _next_target(self) -> int:
        target = self.work_ns
        m = self._next_milestone(self.progress)
        if m is not None and m < target:
            target = m
        for pos, _ in self.hooks.values():
            if self.progress < pos < target:
                target = pos
        return target

    def _activity_end(self, _: EventRecord) -> None:
        self._sync()
        a = self.current
        self.current = None
        self.timer = None
        self.mode = "none"
        if a is not None and a.on_done is not None:
            self._holding = True
            try:
                a.on_done()
            finally:
                self._holding = False
        self._kick()

    def _reached(self, _: EventRecord) -> None:
        self._sync()
        self.timer = None
        self.mode = "none"
        self._target = None
        p = self.progress
        self._holding = True
        try:
            m = self._next_milestone(p - 1) if p > 0 else None
            if m == p:
                self._on_milestone(p)
            due = sorted((pos, hid) for hid, (pos, _) in self.hooks.items() if pos == p)
            for _, hid in due:
                if self.finished or self.progress != p:
                    break
                entry = self.hooks.pop(hid, None)
                if entry is not None:
                    entry[1](p)
        finally:
            self._holding = False
        self._kick()
