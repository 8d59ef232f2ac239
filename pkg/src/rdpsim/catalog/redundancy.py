"""Replication and design diversity: NMR, N-version design and recovery blocks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping, Optional, Sequence

from .configs import NmrConfig, RecoveryBlockConfig, VariantModel

OK = "ok"
CORRECTED = "corrected"
DETECTED = "detected"
DUE = "detected-uncorrectable"
SERVICE_CONTINUES = "service-continues"
FAILED = "failed"


@dataclass(frozen=True)
class NmrResult:
    status: str
    value: Any = None
    flagged: tuple[int, ...] = ()
    alive: int = 0


def majority(outputs: Sequence[Hashable]) -> tuple[Optional[Hashable], tuple[int, ...]]:
    """Strict-majority value and the indices that disagree with it, or (None, ()) if none."""
    if not outputs:
        return None, ()
    value, count = Counter(outputs).most_common(1)[0]
    if 2 * count <= len(outputs):
        return None, ()
    return value, tuple(i for i, v in enumerate(outputs) if v != value)


def nmr_execute(
    config: NmrConfig,
    outputs: Optional[Sequence[Hashable]] = None,
    alive: Optional[Sequence[bool]] = None,
) -> NmrResult:
    """Combine replica results per the configured mode.

    failover: service continues while any replica is alive, so N = 2k + 1
    replicas ride out 2k crashes.  compare: any disagreement is detected but
    not corrected.  vote: a strict majority wins and the minority is flagged,
    which masks up to floor((N - 1) / 2) wrong outputs.
    """
    n = config.n
    if config.mode == "failover":
        alive = list(alive) if alive is not None else [True] * n
        if len(alive) != n:
            raise ValueError(f"expected {n} replica statuses, got {len(alive)}")
        live = [i for i, a in enumerate(alive) if a]
        if not live:
            return NmrResult(FAILED, alive=0)
        value = outputs[live[0]] if outputs is not None else None
        return NmrResult(SERVICE_CONTINUES, value, tuple(i for i in range(n) if not alive[i]), len(live))
    if outputs is None or len(outputs) != n:
        raise ValueError(f"expected {n} replica outputs")
    if config.mode == "compare":
        if all(o == outputs[0] for o in outputs):
            return NmrResult(OK, outputs[0], alive=n)
        return NmrResult(DETECTED, None, alive=n)
    value, flagged = majority(outputs)
    if value is None:
        return NmrResult(DUE, None, alive=n)
    return NmrResult(CORRECTED if flagged else OK, value, flagged, n)


@dataclass(frozen=True)
class VersionResult:
    status: str
    value: Any
    flagged: tuple[int, ...]
    cost: float


def n_version_execute(variants: Sequence[VariantModel], x: Hashable) -> VersionResult:
    """Run every variant on ``x`` and vote; the timing cost is the slowest variant."""
    if len(variants) < 2:
        raise ValueError("N-version design needs at least two variants")
    outputs = [v.run(x) for v in variants]
    cost = max(v.cost for v in variants)
    value, flagged = majority(outputs)
    if value is None:
        return VersionResult(DUE, None, (), cost)
    return VersionResult(CORRECTED if flagged else OK, value, flagged, cost)


@dataclass(frozen=True)
class BlockResult:
    status: str  # ok | failed
    value: Any
    served_by: Optional[str]
    executions: int
    cost: float
    tried: tuple[str, ...] = field(default=())


def recovery_block_execute(config: RecoveryBlockConfig, variants: Mapping[str, VariantModel], x: Hashable) -> BlockResult:
    """Primary first, then alternates in order; the first output passing the acceptance test wins."""
    order = (config.primary, *config.alternates)
    cost = 0.0
    tried = []
    for vid in order:
        v = variants[vid]
        y = v.run(x)
        cost += v.cost
        tried.append(vid)
        if config.acceptance(x, y):
            return BlockResult(OK, y, vid, len(tried), cost, tuple(tried))
    return BlockResult(FAILED, None, None, len(tried), cost, tuple(tried))
