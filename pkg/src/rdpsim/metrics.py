"""Per-run accounting: time breakdown, event counts, availability and energy.

All times are kept in integer nanoseconds so that the accounting identity
``total = useful + overheads + lost + recovery + idle`` holds exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

from .kernel import EventKind, to_s

OVERHEADS = ("checkpoint", "logging", "redundancy", "detection")
POWER_CLASSES = ("compute", "checkpoint", "logging", "redundancy", "detection", "recovery", "idle")


@dataclass
class RunMetrics:
    outcome: str  # completed | aborted | horizon
    total_ns: int
    useful_ns: int
    overhead_ns: dict[str, int]
    lost_ns: int
    recovery_ns: int
    idle_ns: int
    migration_ns: int = 0  # part of recovery_ns, reported separately
    counts: dict[str, int] = field(default_factory=dict)
    energy_j: float = 0.0
    failures: list[dict] = field(default_factory=list)
    predictions: dict[str, Any] = field(default_factory=dict)

    @property
    def availability(self) -> float:
        return self.useful_ns / self.total_ns if self.total_ns else 1.0

    @property
    def total(self) -> float:
        return to_s(self.total_ns)

    def identity_holds(self) -> bool:
        parts = self.useful_ns + sum(self.overhead_ns.values()) + self.lost_ns + self.recovery_ns + self.idle_ns
        return parts == self.total_ns and all(v >= 0 for v in (self.useful_ns, self.lost_ns, self.recovery_ns, self.idle_ns))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["availability"] = self.availability
        d["seconds"] = {
            "total": to_s(self.total_ns),
            "useful": to_s(self.useful_ns),
            "lost": to_s(self.lost_ns),
            "recovery": to_s(self.recovery_ns),
            "idle": to_s(self.idle_ns),
            "migration": to_s(self.migration_ns),
            **{f"overhead.{k}": to_s(v) for k, v in self.overhead_ns.items()},
        }
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunMetrics":
        keys = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in keys})


def collect_metrics(ctx, power: Mapping[str, float] | None = None) -> RunMetrics:
    """Build the metrics of a finished run from its context."""
    job = ctx.job
    b = job.buckets
    progress = job.progress
    if ctx.outcome == "aborted":
        # an aborted run delivers nothing: all computation counts as lost
        useful, lost = 0, b["compute"]
    else:
        useful, lost = progress, job.lost
    recovery = b["recovery"] + b["migration"]
    errors = list(ctx.errors.values())
    fp = sum(int(s.get("false_positives", 0)) for s in ctx.prediction_scores.values())
    counts = {
        "faults_injected": ctx.faults.counts["injected"],
        "faults_activated": ctx.faults.counts["activated"],
        "faults_voided": ctx.faults.counts["voided"],
        "errors": len(errors),
        "detected": sum(e.detected for e in errors),
        "contained": sum(e.contained for e in errors),
        "mitigated": sum(e.mitigated for e in errors),
        "failures": len(ctx.failures),
        "undetected_failures": sum(1 for f in ctx.failures if not f.get("detected", True)),
        "false_positive_predictions": fp,
        "checkpoints": int(ctx.counts.get(EventKind.CHECKPOINT_TAKEN, 0)),
        "events": int(ctx.sim.dispatched),
    }
    m = RunMetrics(
        outcome=ctx.outcome,
        total_ns=job.total_ns(),
        useful_ns=useful,
        overhead_ns={k: b[k] for k in OVERHEADS},
        lost_ns=lost,
        recovery_ns=recovery,
        idle_ns=b["idle"],
        migration_ns=b["migration"],
        counts=counts,
        failures=list(ctx.failures),
        predictions=dict(ctx.prediction_scores),
    )
    m.energy_j = energy(m, b["compute"], power or {})
    return m


def energy(m: RunMetrics, compute_ns: int, power: Mapping[str, float]) -> float:
    """Linear power model: watts per activity class times the time spent in it."""
    times = {
        "compute": compute_ns,
        **m.overhead_ns,
        "recovery": m.recovery_ns,
        "idle": m.idle_ns,
    }
    return sum(float(power.get(k, 0.0)) * to_s(times[k]) for k in POWER_CLASSES)

