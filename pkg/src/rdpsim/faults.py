"""Fault models, arrival sampling, activation into errors and bit-level corruption."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Literal, Optional, Sequence, Union

import numpy as np

from .kernel import EventKind, EventRecord, RngStream, Simulator, to_ns
from .system import Anomaly, ModelError, StateRegion, System


class FaultConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BitFlips:
    count: int = 1
    # "region": positions uniform over the region; "word": within one 8-byte
    # element; "byte": within one byte (one SEC-DED codeword)
    locality: Literal["region", "word", "byte"] = "region"
    bit_range: Optional[tuple[int, int]] = None  # per 64-bit element, [lo, hi)

    def __post_init__(self):
        if self.count < 1:
            raise FaultConfigError("bit-flip count must be >= 1")
        if self.locality == "byte" and self.count > 8:
            raise FaultConfigError("cannot flip more than 8 bits within one byte")
        if self.bit_range is not None:
            lo, hi = self.bit_range
            if not 0 <= lo < hi <= 64:
                raise FaultConfigError(f"bit range must satisfy 0 <= lo < hi <= 64, got {self.bit_range}")


@dataclass(frozen=True)
class ProcessCrash:
    pass


@dataclass(frozen=True)
class ProcessHang:
    pass


@dataclass(frozen=True)
class SensorAnomaly:
    sensor: str
    value: float
    lead_time: float

    def __post_init__(self):
        if self.lead_time < 0:
            raise FaultConfigError("lead time must be >= 0")


Manifestation = Union[BitFlips, ProcessCrash, ProcessHang, SensorAnomaly]


@dataclass(frozen=True)
class TargetSelector:
    """Which elements a fault may strike; unset fields do not filter."""

    nodes: Optional[tuple[str, ...]] = None
    processes: Optional[tuple[str, ...]] = None
    regions: Optional[tuple[str, ...]] = None
    roles: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class FaultModel:
    id: str
    manifestation: Manifestation
    rate: float  # arrivals per hour
    kind: Literal["transient", "permanent", "intermittent"] = "transient"
    target: TargetSelector = TargetSelector()
    arrival: Literal["poisson", "constant"] = "poisson"
    p_act: float = 1.0
    latency: tuple[str, float] = ("constant", 0.0)

    def __post_init__(self):
        if not self.rate >= 0:
            raise FaultConfigError("arrival rate must be >= 0")
        if not 0.0 <= self.p_act <= 1.0:
            raise FaultConfigError("activation probability must lie in [0, 1]")
        dist, mean = self.latency
        if dist not in ("constant", "exponential") or mean < 0:
            raise FaultConfigError(f"invalid activation latency {self.latency}")

    @property
    def level(self) -> str:
        """The element class this model strikes."""
        m = self.manifestation
        if isinstance(m, BitFlips):
            return "region"
        if isinstance(m, SensorAnomaly):
            return "node"
        return "process"


def sample_arrivals(model: FaultModel, horizon: float, rng: RngStream) -> np.ndarray:
    """Arrival times in ``(0, horizon]`` seconds.

    Poisson arrivals have exponential gaps of mean ``3600 / rate``; constant
    arrivals fall exactly on multiples of that mean.
    """
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    if model.rate == 0:
        return np.empty(0)
    mean = 3600.0 / model.rate
    if model.arrival == "constant":
        n = int(np.floor(horizon / mean))
        return mean * np.arange(1, n + 1, dtype=float)
    chunks = []
    t = 0.0
    batch = max(16, int(horizon / mean * 1.2) + 8)
    while True:
        gaps = rng.exponential(mean, batch)
        times = t + np.cumsum(gaps)
        if times[-1] > horizon:
            chunks.append(times[times <= horizon])
            break
        chunks.append(times)
        t = float(times[-1])
    return np.concatenate(chunks)


def apply_bitflips(region: StateRegion, positions: Sequence[int]) -> np.ndarray:
    """Invert the addressed bits in place and return the region content.

    Bit ``p`` is bit ``p % 8`` (LSB = 0) of byte ``p // 8`` of the region's
    little-endian storage, so for float64 content ``p = 64 * element + bit``.
    """
    seen = set()
    for p in positions:
        p = int(p)
        if p in seen:
            raise ValueError(f"duplicate position {p}")
        if not 0 <= p < region.nbits:
            raise ValueError(f"bit position {p} out of range for region {region.id!r} of {region.nbits} bits")
        seen.add(p)
    raw = region.bytes_view()
    for p in seen:
        raw[p >> 3] ^= np.uint8(1 << (p & 7))
    return region.data


def choose_positions(region: StateRegion, spec: BitFlips, rng: RngStream) -> list[int]:
    """Draw distinct bit positions in ``region`` per the manifestation spec."""
    gen = rng.generator
    if region.nbits == 0:
        raise ModelError(f"cannot corrupt empty region {region.id!r}")
    word_bits = 64 if region.structured else 8
    lo, hi = spec.bit_range if spec.bit_range is not None else (0, word_bits)
    hi = min(hi, word_bits)
    if lo >= hi:
        raise FaultConfigError(f"bit range {spec.bit_range} is empty for region {region.id!r}")
    n_words = region.nbits // word_bits
    if spec.locality == "region":
        if spec.count > n_words * (hi - lo):
            raise FaultConfigError("more flips requested than eligible bits")
        chosen: set[int] = set()
        while len(chosen) < spec.count:
            w = int(gen.integers(0, n_words))
            chosen.add(w * word_bits + int(gen.integers(lo, hi)))
        return sorted(chosen)
    w = int(gen.integers(0, n_words))
    if spec.locality == "word":
        if spec.count > hi - lo:
            raise FaultConfigError("more flips requested than bits in the word range")
        bits = gen.choice(np.arange(lo, hi), size=spec.count, replace=False)
        return sorted(w * word_bits + int(b) for b in bits)
    # byte locality: pick one byte of the word that has enough eligible bits
    candidates = []
    for byte in range(word_bits // 8):
        eligible = [b for b in range(byte * 8, byte * 8 + 8) if lo <= b < hi]
        if len(eligible) >= spec.count:
            candidates.append(eligible)
    if not candidates:
        raise FaultConfigError("no byte has enough eligible bits for the requested flips")
    eligible = candidates[int(gen.integers(0, len(candidates)))]
    bits = gen.choice(np.array(eligible), size=spec.count, replace=False)
    return sorted(w * word_bits + int(b) for b in bits)


@dataclass
class ErrorState:
    id: int  # id of the error-manifested event
    fault: str
    fault_event: int
    subject: str
    mode: str  # "bit-flips" | "crash" | "hang"
    positions: tuple[int, ...] = ()
    detected: bool = False
    contained: bool = False
    mitigated: bool = False
    failed: bool = False
    time_ns: int = 0


@dataclass
class _Lingering:
    model: FaultModel
    subject: str
    node: Optional[str]
    cause: int


class FaultEngine:
    """Turns fault models into arrival, activation and error events.

    ``on_error(error)`` is called right after a manifestation has been applied.
    """

    def __init__(
        self,
        sim: Simulator,
        system: System,
        models: Iterable[FaultModel],
        horizon: float,
        on_error: Optional[Callable[[ErrorState], None]] = None,
    ):
        self.sim = sim
        self.system = system
        self.models = list(models)
        self.horizon = horizon
        self.on_error = on_error
        self.errors: dict[int, ErrorState] = {}
        self.counts = {"injected": 0, "activated": 0, "voided": 0}
        self.lingering: list[_Lingering] = []
        # processes being restored; faults striking them are voided
        self.suspended: set[str] = set()
        # (time, subject, model id) of every fault drawn to activate, reached or not
        self.planned: list[tuple[float, str, str]] = []
        self._streams: dict[str, RngStream] = {}
        ids = set()
        for m in self.models:
            if m.id in ids:
                raise FaultConfigError(f"duplicate fault model id {m.id!r}")
            ids.add(m.id)
            self._check_selector(m)

    def _check_selector(self, m: FaultModel) -> None:
        t = m.target
        for group, known in ((t.nodes, self.system.nodes), (t.processes, self.system.processes), (t.regions, self.system.regions)):
            for x in group or ():
                if x not in known:
                    raise FaultConfigError(f"fault {m.id!r}: unknown target id {x!r}")
        if isinstance(m.manifestation, SensorAnomaly):
            for n in self._node_candidates(m, include_dead=True):
                if m.manifestation.sensor not in n.sensors:
                    raise FaultConfigError(f"fault {m.id!r}: node {n.id!r} has no sensor {m.manifestation.sensor!r}")

    def stream(self, model: FaultModel) -> RngStream:
        s = self._streams.get(model.id)
        if s is None:
            s = self._streams[model.id] = self.sim.fork_stream(f"faults.{model.id}")
        return s

    def start(self) -> None:
        for m in self.models:
            rng = self.stream(m)
            for t in sample_arrivals(m, self.horizon, rng):
                self.sim.call_at(to_ns(float(t)), self._arrive, model=m)

    # candidate resolution ------------------------------------------------------

    def _node_candidates(self, m: FaultModel, include_dead: bool = False):
        nodes = [self.system.nodes[n] for n in m.target.nodes] if m.target.nodes else [
            n for n in self.system.nodes.values() if not n.spare
        ]
        if include_dead:
            return nodes
        return [n for n in nodes if n.status not in ("retired", "failed")]

    def _candidates(self, m: FaultModel) -> list[str]:
        t = m.target
        if m.level == "node":
            return [n.id for n in self._node_candidates(m, include_dead=True)]
        if m.level == "process":
            procs = t.processes or tuple(self.system.processes)
            if t.nodes:
                procs = tuple(p for p in procs if self.system.processes[p].node in t.nodes)
            return list(procs)
        regs = t.regions or tuple(self.system.regions)
        if t.roles:
            regs = tuple(r for r in regs if self.system.regions[r].role in t.roles)
        if t.processes:
            regs = tuple(r for r in regs if self.system.regions[r].owner in t.processes)
        return [r for r in regs if self.system.regions[r].nbytes > 0]

    def _alive(self, m: FaultModel, subject: str) -> bool:
        sysm = self.system
        if m.level == "node":
            return sysm.nodes[subject].status not in ("retired", "failed")
        if m.level == "process":
            p = sysm.processes[subject]
            return p.status == "running" and subject not in self.suspended and sysm.nodes[p.node].status not in ("retired", "failed")
        owner = sysm.processes[sysm.regions[subject].owner]
        return owner.id not in self.suspended and sysm.nodes[owner.node].status not in ("retired", "failed")

    # event flow -------------------------------------------------------------------

    def _arrive(self, timer: EventRecord) -> None:
        m: FaultModel = timer.payload["model"]
        rng = self.stream(m)
        cands = self._candidates(m)
        subject = cands[int(rng.integers(0, len(cands)))] if cands else ""
        activates = rng.random() < m.p_act
        latency = self._latency(m, rng)
        self.counts["injected"] += 1
        ev_id = self.sim.post(
            EventKind.FAULT_ARRIVED,
            subject=subject,
            payload={"fault": m.id, "fault_kind": m.kind, "manifestation": _manifestation_name(m)},
        )
        if not subject or not self._alive(m, subject):
            self._void(m, subject, ev_id, "target not present")
            return
        if isinstance(m.manifestation, SensorAnomaly):
            self._start_anomaly(m, subject, activates, ev_id)
        if activates:
            self.planned.append((self.sim.now + latency / 1e9, subject, m.id))
            node = self._node_of(m, subject)
            self.sim.call_at(self.sim.now_ns + latency, self._activate, model=m, subject=subject, cause=ev_id, node=node)

    def _latency(self, m: FaultModel, rng: RngStream) -> int:
        if isinstance(m.manifestation, SensorAnomaly):
            return to_ns(m.manifestation.lead_time)
        dist, mean = m.latency
        if dist == "exponential" and mean > 0:
            return to_ns(float(rng.exponential(mean)))
        return to_ns(mean)

    def _node_of(self, m: FaultModel, subject: str) -> str:
        if m.level == "node":
            return subject
        if m.level == "process":
            return self.system.processes[subject].node
        return self.system.processes[self.system.regions[subject].owner].node

    def _start_anomaly(self, m: FaultModel, node_id: str, activates: bool, cause: int) -> None:
        a = m.manifestation
        now = self.sim.now
        until = float("inf") if activates else now + a.lead_time
        self.system.nodes[node_id].anomalies.append(Anomaly(a.sensor, now, a.lead_time, a.value, until))

    def _void(self, m: FaultModel, subject: str, cause: int, reason: str) -> None:
        self.counts["voided"] += 1
        self.sim.post(EventKind.FAULT_VOIDED, subject=subject, cause=cause, payload={"fault": m.id, "reason": reason})

    def _activate(self, timer: EventRecord) -> None:
        m: FaultModel = timer.payload["model"]
        subject = timer.payload["subject"]
        cause = timer.payload["cause"]
        node = timer.payload["node"]
        if not self._alive(m, subject):
            self._void(m, subject, cause, "target retired or not running before activation")
            return
        self.counts["activated"] += 1
        act_id = self.sim.post(EventKind.FAULT_ACTIVATED, subject=subject, cause=cause, payload={"fault": m.id})
        if m.kind != "transient":
            self.lingering.append(_Lingering(m, subject, node, act_id))
        self._manifest(m, subject, act_id)

    def _manifest(self, m: FaultModel, subject: str, cause: int) -> None:
        man = m.manifestation
        if isinstance(man, BitFlips):
            region = self.system.regions[subject]
            positions = choose_positions(region, man, self.stream(m))
            apply_bitflips(region, positions)
            self._error(m, subject, cause, "bit-flips", tuple(positions))
            return
        if isinstance(man, SensorAnomaly):
            node = self.system.nodes[subject]
            node.status = "failed"
            for pid in list(node.processes):
                if self.system.processes[pid].status in ("running", "migrating", "hung"):
                    self.system.processes[pid].status = "crashed"
                    self._error(m, pid, cause, "crash")
            return
        mode = "hang" if isinstance(man, ProcessHang) else "crash"
        self.system.processes[subject].status = "hung" if mode == "hang" else "crashed"
        self._error(m, subject, cause, mode)

    def _error(self, m: FaultModel, subject: str, cause: int, mode: str, positions: tuple[int, ...] = ()) -> None:
        payload = {"fault": m.id, "mode": mode}
        if positions:
            payload["positions"] = list(positions)
        eid = self.sim.post(EventKind.ERROR_MANIFESTED, subject=subject, cause=cause, payload=payload)
        err = ErrorState(eid, m.id, cause, subject, mode, positions, time_ns=self.sim.now_ns)
        self.errors[eid] = err
        if self.on_error is not None:
            self.on_error(err)

    # lifecycle hooks used by mitigation patterns ------------------------------------

    def restored(self, subjects: Iterable[str]) -> None:
        """Re-manifest permanent (always) and intermittent (with p_act) faults after a restore."""
        subjects = set(subjects)
        for lf in list(self.lingering):
            if lf.subject not in subjects:
                continue
            if lf.node is not None and self.system.nodes[lf.node].status in ("retired",):
                continue
            m = lf.model
            if m.kind == "intermittent" and not self.stream(m).random() < m.p_act:
                continue
            self.lingering.remove(lf)
            delay = self._latency(m, self.stream(m))
            self.sim.call_at(self.sim.now_ns + delay, self._activate, model=m, subject=lf.subject, cause=lf.cause, node=lf.node)

    def retired(self, node_id: str) -> None:
        self.lingering = [lf for lf in self.lingering if lf.node != node_id]


def _manifestation_name(m: FaultModel) -> str:
    man = m.manifestation
    if isinstance(man, BitFlips):
        return "bit-flips"
    if isinstance(man, SensorAnomaly):
        return "sensor-anomaly"
    if isinstance(man, ProcessHang):
        return "process-hang"
    return "process-crash"
