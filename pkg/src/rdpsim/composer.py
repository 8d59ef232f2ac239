"""Solution composition: state patterns plus wired behavioral instances, and their validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

from .catalog.configs import (
    CheckpointConfig,
    HeartbeatConfig,
    LoggingConfig,
    NmrConfig,
    PatternConfigError,
    PredictionConfig,
    Rule,
)
from .catalog.registry import (
    CAPABILITIES,
    CONTAINMENT,
    DETECTION,
    EVENT_TYPES,
    MITIGATION,
    UnknownPatternError,
    reaches_strategy_root,
    registry_lookup,
)
from .domains import StatePattern
from .kernel import EventKind

K = EventKind


@dataclass(frozen=True)
class Mechanism:
    """How a structural pattern is realized in the runtime."""

    name: str
    pattern: str
    activation: frozenset[EventKind]
    responses: frozenset[EventKind]
    handles: frozenset[str]
    # activated by system events or its own timers rather than by other patterns
    entry: bool
    runnable: bool = True


def _m(name, pattern, activation, responses, handles, entry, runnable=True) -> Mechanism:
    return Mechanism(name, pattern, frozenset(activation), frozenset(responses), frozenset(handles), entry, runnable)


MECHANISMS: dict[str, Mechanism] = {
    m.name: m
    for m in [
        _m("heartbeat", "Monitoring", {K.ERROR_MANIFESTED, K.HEARTBEAT}, {K.HEARTBEAT, K.DETECTION}, {"failure"}, True),
        _m("threshold", "Monitoring", set(), {K.DETECTION}, {"fault"}, True),
        _m("domain-map", "Monitoring", {K.DETECTION}, {K.CONTAINMENT, K.FAILURE_DECLARED}, {"fault", "error"}, False),
        _m("rules", "Prediction", set(), {K.PREDICTION}, {"fault"}, True),
        _m(
            "migration",
            "Restructure",
            {K.PREDICTION, K.DETECTION, K.CONTAINMENT},
            {K.CONTAINMENT, K.MITIGATION_START, K.MITIGATION_COMPLETE},
            {"fault", "error", "failure"},
            False,
        ),
        _m("rejuvenate", "Rejuvenation", {K.DETECTION, K.CONTAINMENT}, {K.MITIGATION_START, K.MITIGATION_COMPLETE}, {"error", "failure"}, False),
        _m("reinitialize", "Reinitialization", {K.DETECTION, K.CONTAINMENT}, {K.MITIGATION_START, K.MITIGATION_COMPLETE}, {"error", "failure"}, False),
        _m(
            "rollback",
            "Rollback",
            {K.DETECTION, K.CONTAINMENT},
            {K.CHECKPOINT_TAKEN, K.CONTAINMENT, K.MITIGATION_START, K.MITIGATION_COMPLETE},
            {"error", "failure"},
            False,
        ),
        _m(
            "roll-forward",
            "Roll-forward",
            {K.DETECTION, K.CONTAINMENT},
            {K.CHECKPOINT_TAKEN, K.CONTAINMENT, K.MITIGATION_START, K.MITIGATION_COMPLETE},
            {"error", "failure"},
            False,
        ),
        _m("nmr", "N-modular Redundancy", {K.ERROR_MANIFESTED}, {K.DETECTION, K.MITIGATION_START, K.MITIGATION_COMPLETE}, {"error", "failure"}, True),
        _m("secded", "Forward Error Correction Code", {K.ERROR_MANIFESTED}, {K.DETECTION, K.MITIGATION_START, K.MITIGATION_COMPLETE}, {"error"}, True),
        _m(
            "abft",
            "Forward Error Correction Code",
            {K.CONTAINMENT, K.DETECTION},
            {K.MITIGATION_START, K.MITIGATION_COMPLETE, K.FAILURE_DECLARED},
            {"error"},
            False,
        ),
        # operation-level behaviors: usable through their functions, not scheduled in runs
        _m("n-version", "N-version Design", set(), {K.DETECTION, K.MITIGATION_COMPLETE}, {"error", "failure"}, True, runnable=False),
        _m("recovery-block", "Recovery Block", set(), {K.DETECTION, K.MITIGATION_COMPLETE}, {"error", "failure"}, True, runnable=False),
    ]
}

DEFAULT_MECHANISM = {
    "Monitoring": "heartbeat",
    "Prediction": "rules",
    "Restructure": "migration",
    "Rejuvenation": "rejuvenate",
    "Reinitialization": "reinitialize",
    "Rollback": "rollback",
    "Roll-forward": "roll-forward",
    "N-modular Redundancy": "nmr",
    "Forward Error Correction Code": "secded",
    "N-version Design": "n-version",
    "Recovery Block": "recovery-block",
}

# responses that carry a decision another pattern is expected to act on
ACTIONABLE = frozenset({K.DETECTION, K.PREDICTION, K.CONTAINMENT})


class CompositionError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceSpec:
    id: str
    pattern: str
    mechanism: Optional[str] = None
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def mechanism_name(self) -> str:
        if self.mechanism:
            return self.mechanism
        name = registry_lookup(self.pattern).name
        if name not in DEFAULT_MECHANISM:
            raise CompositionError(f"pattern {name!r} cannot be instantiated directly")
        return DEFAULT_MECHANISM[name]


@dataclass(frozen=True)
class Wiring:
    emitter: str
    kind: EventKind
    receiver: str
    priority: int = 0
    # credit the receiver's scope-limiting (implicit) containment for this path
    contain: bool = False


@dataclass
class SolutionSpec:
    name: str
    state_patterns: list[StatePattern]
    instances: list[InstanceSpec]
    wirings: list[Wiring] = field(default_factory=list)
    targets: frozenset[str] = frozenset({"failure"})

    def instance(self, iid: str) -> InstanceSpec:
        for i in self.instances:
            if i.id == iid:
                return i
        raise KeyError(iid)

    def receivers(self, emitter: str, kind: EventKind) -> list[Wiring]:
        return sorted((w for w in self.wirings if w.emitter == emitter and w.kind == kind), key=lambda w: w.priority)

    def without(self, ids: Iterable[str]) -> "SolutionSpec":
        """Copy with the named instances and every wiring touching them removed."""
        drop = set(ids)
        return SolutionSpec(
            self.name,
            list(self.state_patterns),
            [i for i in self.instances if i.id not in drop],
            [w for w in self.wirings if w.emitter not in drop and w.receiver not in drop],
            self.targets,
        )


def bind(spec: SolutionSpec, emitter: str, kind: EventKind | str, receiver: str, priority: int = 0, contain: bool = False) -> Wiring:
    """Add a wiring after checking both interface ends and priority uniqueness."""
    kind = EventKind(kind)
    mech_e = mechanism_of(spec.instance(emitter))
    mech_r = mechanism_of(spec.instance(receiver))
    if kind not in mech_e.responses:
        raise CompositionError(f"{emitter!r} ({mech_e.name}) does not emit {kind.value}")
    if kind not in mech_r.activation:
        raise CompositionError(f"{receiver!r} ({mech_r.name}) does not subscribe to {kind.value}")
    for w in spec.wirings:
        if w.emitter == emitter and w.kind == kind and w.priority == priority:
            raise CompositionError(f"duplicate priority {priority} for {emitter!r} {kind.value}")
    w = Wiring(emitter, kind, receiver, priority, contain)
    spec.wirings.append(w)
    return w


def mechanism_of(inst: InstanceSpec) -> Mechanism:
    name = inst.mechanism_name
    if name not in MECHANISMS:
        raise CompositionError(f"unknown mechanism {name!r} for instance {inst.id!r}")
    mech = MECHANISMS[name]
    if registry_lookup(inst.pattern).name != mech.pattern:
        raise CompositionError(f"mechanism {name!r} realizes {mech.pattern!r}, not {inst.pattern!r}")
    return mech


# parameter records -------------------------------------------------------------------


def build_config(mechanism: str, params: Mapping[str, Any]):
    """Typed config for a mechanism's parameters; unknown keys are rejected."""
    p = dict(params)
    try:
        if mechanism == "heartbeat":
            return HeartbeatConfig(**_take(p, ("period", "timeout", "beat_cost")))
        if mechanism in ("rollback", "roll-forward"):
            return CheckpointConfig(**_take(p, ("interval", "cost", "restore_cost", "protocol", "stagger", "forced_on")))
        if mechanism == "rules":
            rules = tuple(Rule(**r) for r in p.pop("rules", []))
            return PredictionConfig(rules, **_take(p, ("sample_period", "smoothing", "horizon", "target_policy", "fp_bound")))
        if mechanism == "nmr":
            return NmrConfig(**_take(p, ("n", "mode", "time_overhead", "space_cost")))
    except TypeError as exc:
        raise PatternConfigError(str(exc)) from None
    return None


def logging_config(params: Mapping[str, Any]) -> LoggingConfig:
    keys = ("protocol", "log_cost", "flush_interval", "replay_speedup", "piggyback_cost")
    sub = params.get("logging", {})
    unknown = set(sub) - set(keys)
    if unknown:
        raise PatternConfigError(f"unknown logging parameter(s): {', '.join(sorted(unknown))}")
    return LoggingConfig(**sub)


def _take(p: dict, keys: tuple[str, ...]) -> dict:
    return {k: p[k] for k in keys if k in p}


MECHANISM_PARAMS: dict[str, set[str]] = {
    "heartbeat": {"period", "timeout", "beat_cost", "processes", "explicit_beats"},
    "threshold": {"ranges", "sample_period", "nodes"},
    "domain-map": set(),
    "rules": {"rules", "sample_period", "smoothing", "horizon", "target_policy", "fp_bound", "nodes"},
    "migration": {"bandwidth", "sync_cost", "policy", "allow_oversubscribe"},
    "rejuvenate": {"regions", "halt_cost"},
    "reinitialize": {"restart_cost"},
    "rollback": {"interval", "cost", "restore_cost", "protocol", "stagger", "forced_on"},
    "roll-forward": {"interval", "cost", "restore_cost", "logging"},
    "nmr": {"n", "mode", "time_overhead", "space_cost", "processes"},
    "secded": {"coverage"},
    "abft": {"matrix", "vector", "rtol", "scrub_cost"},
    "n-version": {"variants"},
    "recovery-block": {"primary", "alternates"},
}


# validation --------------------------------------------------------------------------


@dataclass
class ValidationReport:
    verdict: str  # complete | incomplete | invalid
    matrix: dict[str, dict[str, bool]]
    hierarchy_violations: list[str]
    unwired: list[str]
    checklist: dict[str, str]
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def missing(self) -> list[str]:
        return [f"{t}: {c}" for t, caps in self.matrix.items() for c, ok in caps.items() if not ok]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "matrix": self.matrix,
            "missing": self.missing,
            "hierarchy_violations": self.hierarchy_violations,
            "unwired": self.unwired,
            "checklist": self.checklist,
            "errors": self.errors,
            "warnings": self.warnings,
        }


def validate_solution(spec: SolutionSpec) -> ValidationReport:
    errors: list[str] = []
    violations: list[str] = []
    targets = sorted(spec.targets)
    for t in targets:
        if t not in EVENT_TYPES:
            errors.append(f"unknown targeted event type {t!r}")
    if not spec.state_patterns:
        errors.append("at least one state pattern is required to define the protection domain")
    if not spec.instances:
        errors.append("at least one behavioral pattern is required")

    mechs: dict[str, Mechanism] = {}
    seen = set()
    for inst in spec.instances:
        if inst.id in seen:
            errors.append(f"duplicate instance id {inst.id!r}")
        seen.add(inst.id)
        try:
            d = registry_lookup(inst.pattern)
        except UnknownPatternError as exc:
            errors.append(str(exc))
            continue
        if d.level != "structural":
            violations.append(f"{inst.id}: {d.name} is a {d.level} pattern; only structural patterns are instantiated")
        elif not reaches_strategy_root(d.name):
            violations.append(f"{inst.id}: {d.name} has no parent chain to a strategy pattern")
        try:
            mech = mechanism_of(inst)
        except CompositionError as exc:
            errors.append(str(exc))
            continue
        mechs[inst.id] = mech
        extra = set(inst.params) - MECHANISM_PARAMS[mech.name]
        if extra:
            errors.append(f"{inst.id}: unknown parameter(s) {', '.join(sorted(extra))}")
        try:
            build_config(mech.name, inst.params)
            if mech.name == "roll-forward":
                logging_config(inst.params)
        except (PatternConfigError, TypeError, ValueError) as exc:
            errors.append(f"{inst.id}: {exc}")

    prio: dict[tuple[str, EventKind, int], str] = {}
    for w in spec.wirings:
        if w.emitter not in mechs or w.receiver not in mechs:
            missing = w.emitter if w.emitter not in seen else w.receiver
            errors.append(f"wiring references unknown instance {missing!r}")
            continue
        if w.kind not in mechs[w.emitter].responses:
            errors.append(f"{w.emitter!r} does not emit {w.kind.value}")
        if w.kind not in mechs[w.receiver].activation:
            errors.append(f"{w.receiver!r} does not subscribe to {w.kind.value}")
        key = (w.emitter, w.kind, w.priority)
        if key in prio:
            errors.append(f"equal priority {w.priority} for {w.emitter!r} {w.kind.value} receivers {prio[key]!r} and {w.receiver!r}")
        prio[key] = w.receiver

    unwired = []
    for iid, mech in mechs.items():
        wanted = mech.responses & ACTIONABLE
        if K.MITIGATION_COMPLETE in mech.responses:
            wanted -= {K.CONTAINMENT}  # a record of scope the mitigator enforced itself
        for kind in sorted(wanted, key=lambda k: k.value):
            if not any(w.emitter == iid and w.kind == kind for w in spec.wirings):
                unwired.append(f"{iid}: {kind.value}")

    matrix = _capability_matrix(spec, mechs, targets)
    complete_caps = all(all(row.values()) for row in matrix.values()) and bool(targets)
    if errors or violations:
        verdict = "invalid"
    elif complete_caps:
        verdict = "complete"
    else:
        verdict = "incomplete"
    warnings = []
    for iid, mech in mechs.items():
        if not mech.runnable:
            warnings.append(f"{iid}: {mech.name} runs at operation level only and is not scheduled in simulations")
    if verdict == "incomplete":
        warnings.append("incomplete solution: " + "; ".join(f"{t}: missing {c}" for t, row in matrix.items() for c, ok in row.items() if not ok))
    checklist = {
        "capability": "resolved" if complete_caps else "unresolved",
        "fault model": "resolved" if targets else "unresolved",
        "protection domain": "resolved" if spec.state_patterns else "unresolved",
        "interfaces": "resolved" if not unwired and not any("emit" in e or "subscribe" in e or "wiring" in e for e in errors) else "unresolved",
        "implementation mechanisms": "informational",
    }
    return ValidationReport(verdict, matrix, violations, unwired, checklist, errors, warnings)


def _capability_matrix(spec: SolutionSpec, mechs: Mapping[str, Mechanism], targets: list[str]) -> dict[str, dict[str, bool]]:
    """Credit capabilities along the wiring graph.

    Detection counts only for entry instances (they observe the system
    directly).  Containment and mitigation count only for instances reachable
    from a detecting instance, so nothing is credited for acting on events
    nobody detected.  Self-contained detect-and-correct mechanisms credit
    their own mitigation.  Scope-limiting containment of recovery patterns is
    credited only on wirings marked ``contain``.
    """
    credited: dict[str, set[tuple[str, str]]] = {t: set() for t in targets}
    descriptors = {iid: registry_lookup(spec.instance(iid).pattern) for iid in mechs}

    def credit(iid: str, cap: str) -> None:
        for t in targets:
            if t in mechs[iid].handles:
                credited[t].add((cap, iid))

    reached: set[str] = set()
    frontier = []
    for iid, mech in mechs.items():
        d = descriptors[iid]
        if mech.entry and DETECTION in d.capabilities:
            credit(iid, DETECTION)
            if MITIGATION in d.capabilities and mech.activation & {K.ERROR_MANIFESTED}:
                credit(iid, MITIGATION)
            reached.add(iid)
            frontier.append(iid)
    while frontier:
        nxt = []
        for iid in frontier:
            for w in spec.wirings:
                if w.emitter != iid or w.receiver not in mechs:
                    continue
                r = w.receiver
                d = descriptors[r]
                if CONTAINMENT in d.capabilities and (w.kind in (K.DETECTION, K.PREDICTION)):
                    credit(r, CONTAINMENT)
                if w.contain and (d.implicit_containment or CONTAINMENT in d.capabilities):
                    credit(r, CONTAINMENT)
                if MITIGATION in d.capabilities:
                    credit(r, MITIGATION)
                if r not in reached:
                    reached.add(r)
                    nxt.append(r)
        frontier = nxt
    return {t: {c: any(cap == c for cap, _ in credited[t]) for c in CAPABILITIES} for t in targets}


# presets -----------------------------------------------------------------------------

_FULL_DOMAIN = [StatePattern.of("static"), StatePattern.of("dynamic"), StatePattern.of("environment")]

PRESETS: dict[str, SolutionSpec] = {
    "cr-process-failure": SolutionSpec(
        "cr-process-failure",
        list(_FULL_DOMAIN),
        [
            InstanceSpec("hb", "Monitoring", "heartbeat", {"period": 1.0, "timeout": 0.5}),
            InstanceSpec("rb", "Rollback", "rollback", {"interval": 300.0, "cost": 5.0, "restore_cost": 10.0, "protocol": "coordinated"}),
        ],
        [Wiring("hb", K.DETECTION, "rb", 1, contain=True)],
        frozenset({"failure"}),
    ),
    "proactive-migration": SolutionSpec(
        "proactive-migration",
        list(_FULL_DOMAIN),
        [
            InstanceSpec(
                "pred",
                "Prediction",
                "rules",
                {
                    "rules": [{"sensor": "temperature", "threshold": 75.0, "window": 3}],
                    "sample_period": 1.0,
                    "horizon": 60.0,
                    "fp_bound": 0.25,
                },
            ),
            InstanceSpec("mig", "Restructure", "migration", {"bandwidth": 1.0e5, "sync_cost": 2.0, "allow_oversubscribe": True}),
        ],
        [Wiring("pred", K.PREDICTION, "mig", 1)],
        frozenset({"fault"}),
    ),
    "cross-layer-abft": SolutionSpec(
        "cross-layer-abft",
        [StatePattern.of("static", ["A", "b"])],
        [
            InstanceSpec("ecc", "Forward Error Correction Code", "secded", {"coverage": ["A", "b"]}),
            InstanceSpec("mon", "Monitoring", "domain-map", {}),
            InstanceSpec("abft", "Forward Error Correction Code", "abft", {"matrix": "A", "vector": "b"}),
        ],
        [Wiring("ecc", K.DETECTION, "mon", 1), Wiring("mon", K.CONTAINMENT, "abft", 1)],
        frozenset({"error"}),
    ),
}


def preset(name: str) -> SolutionSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


def solution_from_dict(d: Mapping[str, Any]) -> SolutionSpec:
    """Build a SolutionSpec from its scenario-file table (already schema-checked)."""
    states = [StatePattern.of(s["kind"], s.get("regions"), s.get("scope", "full-system")) for s in d.get("state", [])]
    insts = [InstanceSpec(p["id"], p["pattern"], p.get("mechanism"), dict(p.get("params", {}))) for p in d.get("patterns", [])]
    wires = [
        Wiring(w["from"], EventKind(w["event"]), w["to"], int(w.get("priority", 0)), bool(w.get("contain", False)))
        for w in d.get("wiring", [])
    ]
    spec = SolutionSpec(d.get("name", "solution"), states, insts, wires, frozenset(d.get("targets", ["failure"])))
    disabled = d.get("disabled", [])
    return spec.without(disabled) if disabled else spec


def solution_to_dict(spec: SolutionSpec) -> dict:
    return {
        "name": spec.name,
        "targets": sorted(spec.targets),
        "state": [
            {k: v for k, v in (("kind", s.kind.value), ("regions", list(s.regions) if s.regions is not None else None), ("scope", s.scope)) if v is not None}
            for s in spec.state_patterns
        ],
        "patterns": [{"id": i.id, "pattern": i.pattern, "mechanism": i.mechanism_name, "params": copy.deepcopy(dict(i.params))} for i in spec.instances],
        "wiring": [{"from": w.emitter, "event": w.kind.value, "to": w.receiver, "priority": w.priority, "contain": w.contain} for w in spec.wirings],
    }
