"""Behavioral pattern classification: strategy, architectural and structural levels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

DETECTION = "detection"
CONTAINMENT = "containment"
MITIGATION = "mitigation"
CAPABILITIES = (DETECTION, CONTAINMENT, MITIGATION)
EVENT_TYPES = ("fault", "error", "failure")


class UnknownPatternError(KeyError):
    def __str__(self) -> str:
        return f"unknown pattern name {self.args[0]!r}; known: {', '.join(sorted(REGISTRY))}"


@dataclass(frozen=True)
class PatternDescriptor:
    name: str
    level: str  # strategy | architectural | structural
    parents: tuple[str, ...]
    capabilities: frozenset[str]
    handles: frozenset[str]
    # containment that follows from the pattern's own scope (e.g. a rollback
    # restricted to one process context); credited only through explicit wiring
    implicit_containment: bool = False


def _d(name, level, parents, caps, handles, implicit=False) -> PatternDescriptor:
    return PatternDescriptor(name, level, tuple(parents), frozenset(caps), frozenset(handles), implicit)


_ALL = ("fault", "error", "failure")
_EF = ("error", "failure")

_DESCRIPTORS = [
    # strategy
    _d("Fault Treatment", "strategy", (), (DETECTION, MITIGATION), ("fault",)),
    _d("Recovery", "strategy", (), (MITIGATION,), _EF),
    _d("Compensation", "strategy", (), (DETECTION, MITIGATION), _EF),
    # architectural
    _d("Fault Diagnosis", "architectural", ("Fault Treatment",), (DETECTION,), ("fault",)),
    _d("Reconfiguration", "architectural", ("Fault Treatment", "Recovery"), (CONTAINMENT, MITIGATION), _ALL),
    _d("Checkpoint Recovery", "architectural", ("Recovery",), (MITIGATION,), _EF),
    _d("Redundancy", "architectural", ("Compensation",), (DETECTION, MITIGATION), _EF),
    _d("Design Diversity", "architectural", ("Compensation",), (DETECTION, MITIGATION), _EF),
    # structural
    _d("Monitoring", "structural", ("Fault Diagnosis",), (DETECTION, CONTAINMENT), _ALL),
    _d("Prediction", "structural", ("Fault Diagnosis",), (DETECTION,), ("fault",)),
    _d("Restructure", "structural", ("Reconfiguration",), (CONTAINMENT, MITIGATION), _ALL),
    _d("Rejuvenation", "structural", ("Reconfiguration",), (MITIGATION,), _ALL),
    _d("Reinitialization", "structural", ("Reconfiguration",), (MITIGATION,), _ALL),
    _d("Rollback", "structural", ("Checkpoint Recovery",), (MITIGATION,), _EF, implicit=True),
    _d("Roll-forward", "structural", ("Checkpoint Recovery",), (MITIGATION,), _EF, implicit=True),
    _d("N-modular Redundancy", "structural", ("Redundancy",), (DETECTION, MITIGATION), _EF),
    _d("Forward Error Correction Code", "structural", ("Redundancy",), (DETECTION, MITIGATION), ("error",)),
    _d("N-version Design", "structural", ("Design Diversity",), (DETECTION, MITIGATION), _EF),
    # a specialization of N-version Design; its architectural parent is shared
    _d("Recovery Block", "structural", ("Design Diversity",), (DETECTION, MITIGATION), _EF),
]

REGISTRY: dict[str, PatternDescriptor] = {d.name: d for d in _DESCRIPTORS}

ALIASES = {
    "roll-back": "Rollback",
    "rollforward": "Roll-forward",
    "nmr": "N-modular Redundancy",
    "fec": "Forward Error Correction Code",
    "forward error correction": "Forward Error Correction Code",
    "checkpoint-recovery": "Checkpoint Recovery",
    "n-version": "N-version Design",
}


def registry_lookup(name: str) -> PatternDescriptor:
    if name in REGISTRY:
        return REGISTRY[name]
    key = name.strip().lower()
    for real in REGISTRY:
        if real.lower() == key:
            return REGISTRY[real]
    if key in ALIASES:
        return REGISTRY[ALIASES[key]]
    raise UnknownPatternError(name)


def ancestors(name: str) -> Iterator[PatternDescriptor]:
    """Every descriptor reachable through parent links, breadth first."""
    seen: set[str] = set()
    frontier = [registry_lookup(name)]
    while frontier:
        nxt = []
        for d in frontier:
            for p in d.parents:
                if p not in seen:
                    seen.add(p)
                    pd = REGISTRY[p]
                    yield pd
                    nxt.append(pd)
        frontier = nxt


def reaches_strategy_root(name: str) -> bool:
    d = registry_lookup(name)
    if d.level == "strategy":
        return True
    return any(a.level == "strategy" and not a.parents for a in ancestors(name))


def hierarchy_violations() -> list[str]:
    """Level and parent-link rules over the whole registry; empty when consistent."""
    out = []
    expected_parent = {"structural": "architectural", "architectural": "strategy"}
    for d in REGISTRY.values():
        for p in d.parents:
            if p not in REGISTRY:
                out.append(f"{d.name}: unknown parent {p}")
        if d.level == "strategy":
            if d.parents:
                out.append(f"{d.name}: strategy pattern with parents")
            continue
        want = expected_parent[d.level]
        if not any(REGISTRY[p].level == want for p in d.parents if p in REGISTRY):
            out.append(f"{d.name}: {d.level} pattern needs a {want} parent")
        if not reaches_strategy_root(d.name):
            out.append(f"{d.name}: no path to a strategy root")
    return out
