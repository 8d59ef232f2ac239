"""Reconfiguration behaviors: restructure (migration), rejuvenation and reinitialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..system import System


class SystemFailure(RuntimeError):
    pass


@dataclass
class ReconfigureOutcome:
    kind: str
    cost: float
    moved: dict[str, tuple[str, str]] = field(default_factory=dict)  # pid -> (from, to)
    retired: Optional[str] = None
    degraded: list[str] = field(default_factory=list)
    reset_regions: list[str] = field(default_factory=list)


def migration_cost(system: System, pid: str, bandwidth: float, sync_cost: float) -> float:
    """Copy of the process image at ``bandwidth`` bytes/s plus a fixed synchronization cost."""
    nbytes = sum(r.nbytes for r in system.process_regions(pid))
    return (nbytes / bandwidth if bandwidth > 0 else 0.0) + sync_cost


def choose_destination(system: System, source: str, policy: str = "spare-first") -> Optional[str]:
    spares = sorted(n.id for n in system.spare_nodes() if n.id != source)
    if policy == "spare-first" and spares:
        return spares[0]
    live = [n for n in system.nodes.values() if n.id != source and n.status == "healthy" and not n.spare]
    if live:
        return min(live, key=lambda n: (len(n.processes), n.id)).id
    return spares[0] if spares else None


def restructure(
    system: System,
    node_id: str,
    bandwidth: float = 0.0,
    sync_cost: float = 0.0,
    policy: str = "spare-first",
    allow_oversubscribe: bool = False,
) -> ReconfigureOutcome:
    """Retire ``node_id`` and move its processes to another node.

    Processes are copied one after another, so the cost is the sum of their
    migration times.  Without a destination the processes stay put and the
    node is marked degraded.
    """
    node = system.nodes[node_id]
    survivors = [n for n in system.nodes.values() if n.id != node_id and n.status in ("healthy", "degraded")]
    if not survivors:
        raise SystemFailure(f"no surviving node to restructure around {node_id!r}")
    dest = choose_destination(system, node_id, policy)
    if dest is None or (not allow_oversubscribe and not system.nodes[dest].spare):
        node.status = "degraded"
        return ReconfigureOutcome("restructure", 0.0, degraded=list(node.processes))
    out = ReconfigureOutcome("restructure", 0.0, retired=node_id)
    target = system.nodes[dest]
    for pid in list(node.processes):
        out.cost += migration_cost(system, pid, bandwidth, sync_cost)
        system.processes[pid].node = dest
        target.processes.append(pid)
        out.moved[pid] = (node_id, dest)
    node.processes.clear()
    node.status = "retired"
    if target.spare:
        target.spare = False
    return out


def rejuvenate(system: System, region_ids: Iterable[str], halt_cost: float = 0.0) -> ReconfigureOutcome:
    """Reset only the named regions to clean content; progress is kept."""
    ids = list(region_ids)
    for rid in ids:
        system.regions[rid].reset()
    return ReconfigureOutcome("rejuvenate", halt_cost, reset_regions=ids)


def reinitialize(system: System, restart_cost: float = 0.0) -> ReconfigureOutcome:
    """Whole-system reset: every region clean, every process back at zero progress and running."""
    for r in system.regions.values():
        r.reset()
    for p in system.processes.values():
        p.progress_ns = 0
        p.status = "running"
    return ReconfigureOutcome("reinitialize", restart_cost, reset_regions=sorted(system.regions))


def reconfigure(kind: str, system: System, target, **kw) -> ReconfigureOutcome:
    if kind == "restructure":
        return restructure(system, target, **kw)
    if kind == "rejuvenate":
        return rejuvenate(system, target, **kw)
    if kind == "reinitialize":
        return reinitialize(system, **kw)
    raise ValueError(f"unknown reconfiguration kind {kind!r}")
