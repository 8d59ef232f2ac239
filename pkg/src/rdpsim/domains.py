"""State patterns and the protection domains fused from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Protocol


class StateKind(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"
    ENVIRONMENT = "environment"
    STATELESS = "stateless"

    @classmethod
    def parse(cls, name: str) -> "StateKind":
        key = name.strip().lower()
        if key == "persistent":
            # case-study wording for the same initialization-time state
            return cls.STATIC
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown state pattern kind {name!r}") from None


class _Region(Protocol):
    id: str
    role: str
    owner: str
    nbytes: int


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class StatePattern:
    """Selects regions either by explicit id or, when ``regions`` is None, by role."""

    kind: StateKind
    regions: Optional[tuple[str, ...]] = None
    scope: str = "full-system"  # or a process id / node id

    @classmethod
    def of(cls, kind: str | StateKind, regions: Optional[Iterable[str]] = None, scope: str = "full-system") -> "StatePattern":
        k = kind if isinstance(kind, StateKind) else StateKind.parse(kind)
        return cls(k, None if regions is None else tuple(regions), scope)

    def select(self, regions: Mapping[str, _Region], hosts: Optional[Mapping[str, str]] = None) -> frozenset[str]:
        if self.kind is StateKind.STATELESS:
            if self.regions:
                raise DomainError("stateless pattern cannot select regions")
            return frozenset()
        if self.regions is None:
            chosen = [r for r in regions.values() if r.role == self.kind.value and self._in_scope(r, hosts)]
            return frozenset(r.id for r in chosen)
        out = set()
        for rid in self.regions:
            if rid not in regions:
                raise DomainError(f"unknown region id {rid!r}")
            role = regions[rid].role
            if role != self.kind.value:
                raise DomainError(f"{self.kind.value} pattern cannot select region {rid!r} with role {role}")
            out.add(rid)
        return frozenset(out)

    def _in_scope(self, region: _Region, hosts: Optional[Mapping[str, str]]) -> bool:
        if self.scope == "full-system":
            return True
        if region.owner == self.scope:
            return True
        return hosts is not None and hosts.get(region.owner) == self.scope


@dataclass(frozen=True)
class ProtectionDomain:
    patterns: tuple[StatePattern, ...]
    region_ids: frozenset[str]
    nbytes: int
    stateless_only: bool = False
    _known: frozenset[str] = field(default=frozenset(), repr=False, compare=False)

    def covers(self, region_id: str, bit_offset: Optional[int] = None) -> bool:
        if self._known and region_id not in self._known:
            raise DomainError(f"unknown region id {region_id!r}")
        return region_id in self.region_ids


def fuse(
    patterns: Iterable[StatePattern],
    regions: Mapping[str, _Region],
    hosts: Optional[Mapping[str, str]] = None,
) -> ProtectionDomain:
    """Union of the patterns' selections.

    ``hosts`` maps process id to node id so node-scoped patterns can be resolved.
    """
    patterns = tuple(patterns)
    if not patterns:
        raise DomainError("fuse needs at least one state pattern")
    selected: set[str] = set()
    for p in patterns:
        selected |= p.select(regions, hosts)
    stateless_only = all(p.kind is StateKind.STATELESS for p in patterns)
    nbytes = sum(regions[r].nbytes for r in selected)
    return ProtectionDomain(patterns, frozenset(selected), nbytes, stateless_only, frozenset(regions))


def covers(domain: ProtectionDomain, region_id: str, bit_offset: Optional[int] = None) -> bool:
    return domain.covers(region_id, bit_offset)
