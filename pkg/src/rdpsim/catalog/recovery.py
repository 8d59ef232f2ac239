"""Checkpointing, recovery lines, message logging and roll-forward arithmetic."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..kernel import UnrecoverableError
from .configs import CheckpointConfig, LoggingConfig


class CheckpointDeferred(RuntimeError):
    pass


@dataclass
class CheckpointRecord:
    process: str
    index: int
    time: float
    progress_ns: int
    snapshot: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    cut: Optional[int] = None  # shared id for records of one coordinated cut
    forced: bool = False


def take_checkpoint(
    config: CheckpointConfig,
    processes: Sequence,
    domain_regions: Mapping[str, object],
    now: float,
    caller: Optional[str] = None,
    index: int = 0,
    cut: Optional[int] = None,
) -> list[CheckpointRecord]:
    """Snapshot domain regions of the participating processes.

    Coordinated checkpoints quiesce every process and record one cut;
    uncoordinated and communication-induced ones snapshot ``caller`` only.
    ``domain_regions`` maps region id to region for the protection domain.
    """
    if any(p.status == "migrating" for p in processes):
        raise CheckpointDeferred("checkpoint requested during active migration")
    if config.protocol == "coordinated":
        members = list(processes)
    else:
        if caller is None:
            raise ValueError("uncoordinated checkpoint needs the calling process")
        members = [p for p in processes if p.id == caller]
    out = []
    for p in members:
        snap = {rid: r.snapshot() for rid, r in domain_regions.items() if r.owner == p.id}
        out.append(CheckpointRecord(p.id, index, now, p.progress_ns, snap, cut if config.protocol == "coordinated" else None))
    return out


# recovery line -------------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    """A message on per-process local timelines (any totally ordered positions)."""

    sender: str
    send: float
    receiver: str
    recv: float


def is_orphan(m: Message, line: Mapping[str, float]) -> bool:
    """Receive recorded in the receiver's checkpoint while the send is not in the sender's.

    A checkpoint at position ``c`` records every event at a position ``< c``.
    """
    return m.recv < line[m.receiver] and not m.send < line[m.sender]


def compute_recovery_line(
    checkpoints: Mapping[str, Sequence[float]],
    messages: Iterable[Message],
    initial: float = float("-inf"),
) -> dict[str, int]:
    """Componentwise-maximal consistent cut by rollback propagation.

    ``checkpoints[p]`` are the positions of p's checkpoints in increasing
    order, not counting the initial state, which is index 0 at ``initial``.
    Returns the chosen checkpoint index per process (0 = initial state).
    """
    positions = {p: [initial, *sorted(cs)] for p, cs in checkpoints.items()}
    choice = {p: len(ps) - 1 for p, ps in positions.items()}
    msgs = list(messages)
    changed = True
    while changed:
        changed = False
        line = {p: positions[p][i] for p, i in choice.items()}
        for m in msgs:
            if is_orphan(m, line):
                ps = positions[m.receiver]
                # latest checkpoint that does not record the receive
                i = bisect.bisect_right(ps, m.recv) - 1
                i = min(i, choice[m.receiver] - 1)
                choice[m.receiver] = max(i, 0)
                line[m.receiver] = ps[choice[m.receiver]]
                changed = True
    return choice


def line_positions(checkpoints: Mapping[str, Sequence[float]], choice: Mapping[str, int], initial: float = float("-inf")) -> dict[str, float]:
    return {p: ([initial, *sorted(cs)])[choice[p]] for p, cs in checkpoints.items()}


@dataclass
class RestoreOutcome:
    lost_work_ns: int
    restore_cost: float
    restored: dict[str, int]  # process -> restored progress


def rollback_restore(
    line: Mapping[str, Optional[CheckpointRecord]],
    processes: Mapping,
    regions: Mapping,
    config: CheckpointConfig,
) -> RestoreOutcome:
    """Restore regions and progress to the recovery line.

    A ``None`` record stands for the initial state: regions are reset to their
    pristine content and progress to zero.  Each restored process pays R.
    """
    lost = 0
    restored = {}
    for pid, rec in line.items():
        if pid not in processes:
            raise UnrecoverableError(f"recovery line names unknown process {pid!r}")
        proc = processes[pid]
        if rec is None:
            for rid in proc.regions:
                regions[rid].reset()
            target = 0
        else:
            if rec.process != pid:
                raise UnrecoverableError(f"checkpoint record for {rec.process!r} used for {pid!r}")
            for rid, snap in rec.snapshot.items():
                if rid not in regions:
                    raise UnrecoverableError(f"checkpoint record references missing region {rid!r}")
                regions[rid].restore(snap)
            target = rec.progress_ns
        lost += max(0, proc.progress_ns - target)
        proc.progress_ns = target
        restored[pid] = target
    return RestoreOutcome(lost, config.restore_cost * len(line), restored)


# message logging -------------------------------------------------------------------


@dataclass
class DeterminantLog:
    """Determinants of nondeterministic events, keyed by their position on the work axis.

    Pessimistic logging makes each record durable at once and charges the
    cost synchronously; optimistic logging keeps records volatile until the
    next flush; causal logging is idealized as durable and free apart from an
    optional piggyback charge.
    """

    config: LoggingConfig
    volatile: list[int] = field(default_factory=list)
    durable: list[int] = field(default_factory=list)

    def log(self, position_ns: int) -> float:
        """Record one determinant; returns the synchronous time charge in seconds."""
        proto = self.config.protocol
        if proto == "pessimistic":
            bisect.insort(self.durable, position_ns)
            return self.config.log_cost
        if proto == "optimistic":
            bisect.insort(self.volatile, position_ns)
            return 0.0
        bisect.insort(self.durable, position_ns)
        return self.config.piggyback_cost

    def flush(self) -> float:
        """Move volatile records to stable storage; returns the (background) write cost."""
        n = len(self.volatile)
        for p in self.volatile:
            bisect.insort(self.durable, p)
        self.volatile.clear()
        return n * self.config.log_cost

    def lose_volatile(self) -> int:
        n = len(self.volatile)
        self.volatile.clear()
        return n

    def truncate_after(self, position_ns: int) -> None:
        """Drop records beyond a restored position; they will be re-logged on re-execution."""
        self.durable = [p for p in self.durable if p <= position_ns]
        self.volatile = [p for p in self.volatile if p <= position_ns]

    def covered_until(self, start_ns: int, required: Sequence[int]) -> int:
        """Furthest position reachable by replay from ``start_ns``.

        ``required`` lists nondeterministic event positions after the start.
        Replay proceeds through consecutive durable determinants and stops at
        the last one before the first gap.
        """
        durable = set(self.durable)
        reach = start_ns
        for p in sorted(required):
            if p <= start_ns:
                continue
            if p not in durable:
                return reach
            reach = p
        return reach


@dataclass(frozen=True)
class RollForwardOutcome:
    reach_ns: int  # progress regained by replay
    recovery_time: float  # R + rho * replayed interval
    reexecution: float  # work beyond the reach point that must run again normally
    rollback_time: float  # what plain rollback would spend to regain the failure point

    @property
    def time_to_failure_point(self) -> float:
        return self.recovery_time + self.reexecution


def roll_forward_restore(
    ckpt_ns: int,
    fail_ns: int,
    log: DeterminantLog,
    nondeterministic: Sequence[int],
    restore_cost: float,
) -> RollForwardOutcome:
    """Recovery cost of replaying from a checkpoint to the pre-failure point.

    With a complete log the reach point is the failure point; otherwise replay
    stops at the last durable determinant and the remainder is re-executed
    as under rollback.  If the log has no gaps but the failure point lies
    beyond the last nondeterministic event, replay runs to the failure point.
    """
    rho = log.config.replay_speedup
    required = [p for p in nondeterministic if ckpt_ns < p <= fail_ns]
    reach = log.covered_until(ckpt_ns, required)
    if all(p in set(log.durable) for p in required):
        reach = fail_ns
    replayed = (reach - ckpt_ns) / 1e9
    return RollForwardOutcome(
        reach_ns=reach,
        recovery_time=restore_cost + rho * replayed,
        reexecution=(fail_ns - reach) / 1e9,
        rollback_time=restore_cost + (fail_ns - ckpt_ns) / 1e9,
    )
