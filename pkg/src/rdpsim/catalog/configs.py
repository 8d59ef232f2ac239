"""Parameter records for the behavioral patterns."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Literal


class PatternConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CheckpointConfig:
    interval: float  # tau, seconds of work between checkpoints
    cost: float = 0.0  # C
    restore_cost: float = 0.0  # R
    protocol: Literal["coordinated", "uncoordinated", "communication-induced"] = "coordinated"
    storage: Literal["stable"] = "stable"
    # uncoordinated: process i checkpoints at offset i * stagger within each interval
    stagger: float = 0.0
    # communication-induced: force a local checkpoint before delivering a
    # message whose piggybacked index exceeds the receiver's
    forced_on: Literal["receive", "none"] = "receive"

    def __post_init__(self):
        if not self.interval > 0:
            raise PatternConfigError("checkpoint interval must be > 0")
        if self.cost < 0 or self.restore_cost < 0:
            raise PatternConfigError("checkpoint and restore costs must be >= 0")


@dataclass(frozen=True)
class LoggingConfig:
    protocol: Literal["pessimistic", "optimistic", "causal"] = "pessimistic"
    log_cost: float = 0.0  # per determinant, seconds
    flush_interval: float = 0.0  # optimistic only
    replay_speedup: float = 1.0  # rho in (0, 1]
    piggyback_cost: float = 0.0  # causal: optional synchronous charge per message

    def __post_init__(self):
        if not 0 < self.replay_speedup <= 1:
            raise PatternConfigError("replay speedup factor must lie in (0, 1]")
        if self.log_cost < 0 or self.flush_interval < 0 or self.piggyback_cost < 0:
            raise PatternConfigError("logging costs must be >= 0")
        if self.protocol == "optimistic" and not self.flush_interval > 0:
            raise PatternConfigError("optimistic logging needs a flush interval > 0")


@dataclass(frozen=True)
class NmrConfig:
    n: int
    mode: Literal["failover", "compare", "vote"] = "vote"
    time_overhead: float = 0.0  # fraction of extra execution time per unit of work
    space_cost: float = 0.0  # bytes per replica, reported only

    def __post_init__(self):
        if self.n < 1:
            raise PatternConfigError("replica count must be >= 1")
        if self.mode == "compare" and self.n < 2:
            raise PatternConfigError("compare mode needs N >= 2")
        if self.mode == "vote" and self.n < 3:
            raise PatternConfigError("vote mode needs N >= 3")
        if self.time_overhead < 0:
            raise PatternConfigError("time overhead must be >= 0")


@dataclass(frozen=True)
class HeartbeatConfig:
    period: float
    timeout: float = 0.0
    beat_cost: float = 0.0  # detection overhead charged per beat, seconds

    def __post_init__(self):
        if not self.period > 0:
            raise PatternConfigError("heartbeat period must be > 0")
        if self.timeout < 0:
            raise PatternConfigError("heartbeat timeout must be >= 0")


@dataclass(frozen=True)
class Rule:
    sensor: str
    threshold: float  # theta
    window: int = 1  # w consecutive samples above theta

    def __post_init__(self):
        if self.window < 1:
            raise PatternConfigError("rule window must be >= 1")


@dataclass(frozen=True)
class PredictionConfig:
    rules: tuple[Rule, ...]
    sample_period: float = 1.0
    smoothing: int = 1  # moving-average length of the filter stage
    horizon: float = 60.0  # a prediction is a true positive if activation follows within this
    target_policy: Literal["spare-first", "least-loaded"] = "spare-first"
    fp_bound: float = 1.0

    def __post_init__(self):
        if not self.rules:
            raise PatternConfigError("prediction needs at least one rule")
        if not self.sample_period > 0:
            raise PatternConfigError("sample period must be > 0")
        if self.smoothing < 1:
            raise PatternConfigError("smoothing length must be >= 1")


@dataclass(frozen=True)
class VariantModel:
    id: str
    fn: Callable
    bug_triggers: frozenset = frozenset()
    cost: float = 0.0
    wrong: Callable = lambda y: ("wrong", y)

    def run(self, x: Hashable):
        y = self.fn(x)
        return self.wrong(y) if x in self.bug_triggers else y


@dataclass(frozen=True)
class RecoveryBlockConfig:
    primary: str
    alternates: tuple[str, ...]
    acceptance: Callable = field(default=lambda x, y: True)

    def __post_init__(self):
        if not self.alternates:
            raise PatternConfigError("recovery block needs at least one alternate")
