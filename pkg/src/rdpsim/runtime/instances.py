"""Executable pattern instances driven by the run context.

Each instance reacts to the event kinds of its mechanism and emits only its
declared responses.  ``on_event`` returns True when the instance claims a
routed event, which stops delivery to lower-priority receivers.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

from ..catalog.configs import NmrConfig, PatternConfigError
from ..catalog.detection import KnowledgeBase, SampleFilter, monitor_diagnose, rule_fires, score_predictions
from ..catalog.reconfiguration import SystemFailure, migration_cost, reinitialize, rejuvenate, restructure
from ..catalog.recovery import (
    CheckpointDeferred,
    DeterminantLog,
    Message,
    compute_recovery_line,
    roll_forward_restore,
    rollback_restore,
    take_checkpoint,
)
from ..catalog.redundancy import CORRECTED, DETECTED, SERVICE_CONTINUES, nmr_execute
from ..codes import DUE, abft_attach, abft_repair_at, abft_scrub, abft_scrub_b, EccShadow, CORRECTED as ECC_CORRECTED
from ..composer import CompositionError, InstanceSpec, Mechanism, build_config, logging_config
from ..faults import apply_bitflips
from ..kernel import EventKind, EventRecord, to_ns, to_s
from ..system import GenericWorkload
from .context import RunContext
from .job import Activity

K = EventKind


class PatternInstance:
    def __init__(self, ctx: RunContext, spec: InstanceSpec, mech: Mechanism):
        self.ctx = ctx
        self.id = spec.id
        self.spec = spec
        self.mech = mech
        self.params = dict(spec.params)

    def start(self) -> None:
        pass

    def on_event(self, ev: EventRecord, wiring) -> bool:
        return False

    def on_restart(self, pids: list[str]) -> None:
        pass

    def on_region_written(self, rids: list[str]) -> None:
        pass

    def finish(self) -> None:
        pass

    def emit(self, kind: EventKind, subject: str = "", cause: Optional[int] = None, **payload) -> int:
        return self.ctx.emit(self.id, kind, subject, cause, payload)

    def _processes(self) -> list[str]:
        pids = self.params.get("processes") or list(self.ctx.system.processes)
        for pid in pids:
            if pid not in self.ctx.system.processes:
                raise CompositionError(f"instance {self.id!r}: unknown process {pid!r}")
        return list(pids)


# detection ---------------------------------------------------------------------------


class Heartbeat(PatternInstance):
    """Liveness monitor with period p and timeout t.

    By default beats are implicit: a silent process is declared at
    ``last beat + p + t`` computed from the beat grid.  With
    ``explicit_beats`` every beat is a traced event and the monitor re-arms
    its deadline on each one; both give the same declaration times.
    """

    def start(self):
        self.cfg = build_config("heartbeat", self.params)
        self.p_ns = to_ns(self.cfg.period)
        self.t_ns = to_ns(self.cfg.timeout)
        self.procs = set(self._processes())
        self.origin = {pid: 0 for pid in self.procs}
        self.explicit = bool(self.params.get("explicit_beats", False))
        self.pending: dict[str, int] = {}
        if self.cfg.beat_cost > 0:
            self.ctx.add_dilation("detection", self.cfg.beat_cost / self.cfg.period)
        if self.explicit:
            self.last = {pid: 0 for pid in self.procs}
            self.beat_timer: dict[str, int] = {}
            for pid in sorted(self.procs):
                self._arm(pid)
                self.beat_timer[pid] = self.ctx.sim.call_at(self.p_ns, self._beat, pid=pid)

    def on_event(self, ev, wiring):
        if ev.kind is K.ERROR_MANIFESTED and ev.subject in self.procs and ev.payload.get("mode") in ("crash", "hang"):
            if not self.explicit:
                t_c = ev.time
                o = self.origin[ev.subject]
                k = max(-(-(t_c - o) // self.p_ns) - 1, 0)
                deadline = o + k * self.p_ns + self.p_ns + self.t_ns
                self.ctx.sim.cancel(self.pending.get(ev.subject))
                self.pending[ev.subject] = self.ctx.sim.call_at(max(deadline, t_c), self._deadline, pid=ev.subject, error=ev.seq)
        return False

    def _deadline(self, timer):
        pid = timer.payload["pid"]
        self.pending.pop(pid, None)
        if self.ctx.job.finished or self.ctx.system.processes[pid].status == "running":
            return
        eid = timer.payload.get("error") or self.ctx.open_error(pid)
        err = self.ctx.errors.get(eid)
        latency = to_s(self.ctx.sim.now_ns - err.time_ns) if err is not None else None
        self.ctx.mark(eid, detected=True)
        self.emit(K.DETECTION, pid, eid, error=eid, event_type="failure", status="failure-detected", latency=latency)

    # explicit beats
    def _arm(self, pid: str) -> None:
        self.ctx.sim.cancel(self.pending.get(pid))
        self.pending[pid] = self.ctx.sim.call_at(self.last[pid] + self.p_ns + self.t_ns, self._deadline, pid=pid)

    def _beat(self, timer):
        pid = timer.payload["pid"]
        if self.ctx.job.finished:
            return
        if self.ctx.system.processes[pid].status == "running":
            self.last[pid] = self.ctx.sim.now_ns
            self.emit(K.HEARTBEAT, pid)
            self._arm(pid)
        self.beat_timer[pid] = self.ctx.sim.call_at(self.ctx.sim.now_ns + self.p_ns, self._beat, pid=pid)

    def on_restart(self, pids):
        now = self.ctx.sim.now_ns
        for pid in pids:
            if pid not in self.procs:
                continue
            self.origin[pid] = now
            self.ctx.sim.cancel(self.pending.pop(pid, None))
            if self.explicit:
                self.last[pid] = now
                self._arm(pid)
                self.ctx.sim.cancel(self.beat_timer.get(pid))
                self.beat_timer[pid] = self.ctx.sim.call_at(now + self.p_ns, self._beat, pid=pid)


class _Sampler(PatternInstance):
    """Shared periodic sensor sampling over a node set."""

    period = 1.0

    def _start_sampling(self, period: float, nodes) -> None:
        self.period_ns = to_ns(period)
        system = self.ctx.system
        # without an explicit list, watch whichever nodes host work at each sample
        self.nodes = sorted(nodes) if nodes else None
        for n in self.nodes or ():
            if n not in system.nodes:
                raise CompositionError(f"instance {self.id!r}: unknown node {n!r}")
        self.noise = self.ctx.sim.fork_stream(f"pattern.{self.id}.noise")
        self.ctx.sim.call_at(self.period_ns, self._tick)

    def _read(self, node, sensor: str) -> float:
        draw = float(self.noise.normal(0.0, 1.0)) if node.sensors[sensor].noise else 0.0
        return node.read_sensor(sensor, self.ctx.sim.now, draw)

    def _tick(self, timer):
        if self.ctx.job.finished:
            return
        nodes = self.ctx.system.nodes
        for nid in self.nodes or sorted(n.id for n in nodes.values() if not n.spare):
            node = nodes[nid]
            if node.status in ("failed", "retired"):
                continue
            self.sample(node)
        self.ctx.sim.call_at(self.ctx.sim.now_ns + self.period_ns, self._tick)

    def sample(self, node) -> None:
        raise NotImplementedError


class RulePredictor(_Sampler):
    """Filter stage, threshold rules over consecutive windows, knowledge base of fired rules."""

    def start(self):
        self.cfg = build_config("rules", self.params)
        for rule in self.cfg.rules:
            for nid in self.params.get("nodes") or []:
                if rule.sensor not in self.ctx.system.nodes[nid].sensors:
                    raise CompositionError(f"instance {self.id!r}: node {nid!r} has no sensor {rule.sensor!r}")
        self.filters: dict[tuple[str, str], SampleFilter] = {}
        self.windows: dict[tuple[str, int], deque] = {}
        self.kb = KnowledgeBase()
        self.predictions: list[tuple[float, str]] = []
        self._start_sampling(self.cfg.sample_period, self.params.get("nodes"))

    def sample(self, node):
        fired = None
        for ri, rule in enumerate(self.cfg.rules):
            if rule.sensor not in node.sensors:
                continue
            f = self.filters.setdefault((node.id, rule.sensor), SampleFilter(self.cfg.smoothing))
            value = f.push(self._read(node, rule.sensor))
            if value is None:
                continue
            win = self.windows.setdefault((node.id, ri), deque(maxlen=rule.window))
            win.append(value)
            if fired is None and len(win) == rule.window and rule_fires(rule, win):
                fired = (rule, value)
        if fired is None:
            self.kb.close(node.id)
            return
        rule, value = fired
        t = self.ctx.sim.now
        if self.kb.record(t, node.id, rule):
            self.predictions.append((t, node.id))
            self.emit(K.PREDICTION, node.id, None, sensor=rule.sensor, threshold=rule.threshold, window=rule.window, value=value)

    def finish(self):
        models = {m.id for m in self.ctx.faults.models if m.level == "node"}
        acts = [(t, s) for t, s, mid in self.ctx.faults.planned if mid in models]
        score = score_predictions(self.predictions, acts, self.cfg.horizon)
        self.ctx.prediction_scores[self.id] = {
            "predictions": score.predictions,
            "true_positives": score.true_positives,
            "false_positives": score.false_positives,
            "false_negatives": score.false_negatives,
            "fp_rate": score.fp_rate,
            "fp_bound": self.cfg.fp_bound,
        }


class ThresholdMonitor(_Sampler):
    """Effect-cause monitoring: a reading outside its normal range is reported once per excursion."""

    def start(self):
        ranges = self.params.get("ranges") or {}
        if not ranges:
            raise PatternConfigError(f"instance {self.id!r}: threshold monitoring needs normal ranges")
        self.ranges = {k: (float(v[0]), float(v[1])) for k, v in ranges.items()}
        self.kb = KnowledgeBase()
        self._start_sampling(float(self.params.get("sample_period", 1.0)), self.params.get("nodes"))

    def sample(self, node):
        obs = {node.id: {s: self._read(node, s) for s in sorted(self.ranges) if s in node.sensors}}
        report = monitor_diagnose("effect-cause", obs, normal_ranges=self.ranges)
        if report is None:
            self.kb.close(node.id)
            return
        if node.id not in self.kb.open:
            self.kb.open.add(node.id)
            self.emit(
                K.DETECTION, node.id, None,
                event_type="fault", status="out-of-range", suspected=report.suspected, parameters=list(report.parameters),
            )


class DomainMap(PatternInstance):
    """Decides whether a detected uncorrectable corruption lies inside the protection domain."""

    def on_event(self, ev, wiring):
        if ev.kind is not K.DETECTION:
            return False
        if ev.payload.get("status") != DUE:
            return True  # already handled at the detecting layer
        region = ev.payload.get("region", ev.subject)
        eid = ev.payload.get("error")
        if self.ctx.domain.covers(region):
            self.ctx.mark(eid, contained=True)
            self.emit(K.CONTAINMENT, region, ev.seq, error=eid, region=region, byte=ev.payload.get("byte"), in_domain=True)
        else:
            self.emit(K.FAILURE_DECLARED, region, ev.seq, detected=True, reason="corruption outside the protection domain")
        return True


# mitigation: checkpointing ---------------------------------------------------------------


class Rollback(PatternInstance):
    """Periodic checkpoints and restore on detection.

    Coordinated checkpoints take one cut for all processes every tau of work.
    Uncoordinated ones are per process (staggered); communication-induced
    ones add forced checkpoints before receives whose piggybacked index is
    ahead.  Positions on the work axis are doubled so that a checkpoint at
    progress c (taken after the events at c) sits at 2c + 1 and a forced one
    (taken before the receive at c) at 2c - 1.
    """

    mech_name = "rollback"

    def start(self):
        self.cfg = build_config(self.mech_name, self.params)
        self.tau = to_ns(self.cfg.interval)
        self.C = to_ns(self.cfg.cost)
        self.R = to_ns(self.cfg.restore_cost)
        self.coordinated = self.cfg.protocol == "coordinated"
        regions = self.ctx.system.regions
        self.domain_regions = {rid: regions[rid] for rid in sorted(self.ctx.domain.region_ids)}
        self.pids = list(self.ctx.system.processes)
        self.cuts: list[tuple[int, dict]] = []
        self.local: dict[str, list[tuple[int, object]]] = {pid: [] for pid in self.pids}
        self.index = {pid: 0 for pid in self.pids}
        self.sent_index: dict[int, int] = {}
        self.hooks: dict[str, int] = {}
        self.recovering = False
        self.label = f"ckpt:{self.id}"
        self._n_cut = 0
        if self.cfg.protocol == "communication-induced":
            self.ctx.send_hooks.append(self._on_send)
            if self.cfg.forced_on == "receive":
                self.ctx.receive_hooks.append(self._before_receive)
        self._schedule(0)

    # scheduling
    def _offset(self, pid: str) -> int:
        return 0 if self.coordinated else to_ns(self.pids.index(pid) * self.cfg.stagger)

    def _schedule(self, progress: int) -> None:
        for key in ([None] if self.coordinated else self.pids):
            self._schedule_one(key, progress)

    def _schedule_one(self, key: Optional[str], progress: int) -> None:
        job = self.ctx.job
        hk = key or "*"
        job.remove_hook(self.hooks.pop(hk, None))
        off = 0 if key is None else self._offset(key)
        k = max(1, (progress - off) // self.tau + 1)
        pos = off + k * self.tau
        if pos <= progress:
            pos += self.tau
        if pos < job.work_ns:
            self.hooks[hk] = job.add_hook(pos, lambda p, key=key: self._due(key))

    def _due(self, key: Optional[str]) -> None:
        self.hooks.pop(key or "*", None)
        self.ctx.job.request(
            Activity("checkpoint", self.C, on_done=lambda: self._taken(key), label=self.label, on_abort=lambda: self._aborted(key))
        )

    def _aborted(self, key: Optional[str]) -> None:
        # a crash interrupted the checkpoint; retry as soon as work resumes
        if not self.recovering:
            self._schedule_one(key, self.ctx.job.progress)

    def _taken(self, key: Optional[str]) -> None:
        ctx = self.ctx
        p = ctx.sync_progress()
        procs = list(ctx.system.processes.values())
        try:
            if self.coordinated:
                self._n_cut += 1
                recs = take_checkpoint(self.cfg, procs, self.domain_regions, ctx.sim.now, index=self._n_cut, cut=self._n_cut)
                self.cuts.append((p, {r.process: r for r in recs}))
                ctx.emit(self.id, K.CHECKPOINT_TAKEN, "*", None, {"progress": to_s(p), "index": self._n_cut, "protocol": self.cfg.protocol})
            else:
                self._local(key, p, forced=False)
        except CheckpointDeferred:
            ctx.job.request(Activity("checkpoint", 0, on_done=lambda: self._taken(key), label=self.label))
            return
        self._schedule_one(key, p)

    def _local(self, pid: str, p: int, forced: bool) -> None:
        ctx = self.ctx
        self.index[pid] += 1
        [rec] = take_checkpoint(self.cfg, list(ctx.system.processes.values()), self.domain_regions, ctx.sim.now, caller=pid, index=self.index[pid])
        rec.progress_ns = p
        rec.forced = forced
        pos2 = 2 * p - 1 if forced else 2 * p + 1
        self.local[pid].append((pos2, rec))
        ctx.emit(self.id, K.CHECKPOINT_TAKEN, pid, None, {"progress": to_s(p), "index": self.index[pid], "protocol": self.cfg.protocol, "forced": forced})

    def _on_send(self, m, p: int) -> None:
        self.sent_index[m.id] = self.index[m.sender]

    def _before_receive(self, m, p: int) -> None:
        piggy = self.sent_index.get(m.id, 0)
        if piggy > self.index[m.receiver]:
            self.ctx.sync_progress()
            self._local(m.receiver, p, forced=True)
            self.index[m.receiver] = piggy
            if self.C:
                self.ctx.job.request(Activity("checkpoint", self.C, label=self.label))

    # recovery
    def on_event(self, ev, wiring):
        if ev.kind not in (K.DETECTION, K.CONTAINMENT):
            return False
        eid = ev.payload.get("error")
        if self.recovering:
            self.ctx.mark(eid, mitigated=True)
            return True
        cause = ev.seq
        if wiring is not None and wiring.contain:
            cause = self.emit(K.CONTAINMENT, ev.subject, ev.seq, error=eid, scope="process-context")
            self.ctx.mark(eid, contained=True)
        start = self.emit(K.MITIGATION_START, ev.subject, cause, error=eid)
        self.ctx.mark(eid, mitigated=True)
        self._recover(ev.subject, eid, start)
        return True

    def _begin(self) -> int:
        ctx = self.ctx
        self.recovering = True
        f = ctx.sync_progress()
        ctx.suspend(self.pids)
        ctx.job.block(f"recover:{self.id}")
        ctx.job.drop(self.label)
        for hk in list(self.hooks):
            ctx.job.remove_hook(self.hooks.pop(hk))
        return f

    def _recover(self, subject: str, eid, start: int) -> None:
        ctx = self.ctx
        self._begin()
        procs = ctx.system.processes
        if self.coordinated:
            c, recs = self.cuts[-1] if self.cuts else (0, {})
            line = {pid: recs.get(pid) for pid in self.pids}
            out = rollback_restore(line, procs, ctx.system.regions, self.cfg)
            restart = c
            info = {"restored_progress": to_s(c)}
        else:
            restart, out, info = self._recover_uncoordinated()
        lost = ctx.job.set_progress(restart)
        restored_regions = [rid for pid in self.pids for rid in procs[pid].regions]
        ctx.region_written(restored_regions)
        ctx.mitigate_errors_in(restored_regions)
        payload = {
            "error": eid,
            "lost_work": to_s(lost),
            "lost_work_processes": to_s(out.lost_work_ns),
            "restore_cost": out.restore_cost,
            **info,
        }
        ctx.job.request(
            Activity("recovery", self.R, on_done=lambda: self._recovered(subject, start, payload), while_blocked=True, label=f"recover:{self.id}"),
            front=True,
        )

    def _recover_uncoordinated(self):
        ctx = self.ctx
        positions = {pid: [pos2 for pos2, _ in self.local[pid]] for pid in self.pids}
        msgs = [Message(m.sender, 2 * s, m.receiver, 2 * r) for m, s, r in ctx.message_log.values()]
        choice = compute_recovery_line(positions, msgs, initial=-1)
        line, pos2 = {}, {}
        for pid in self.pids:
            i = choice[pid]
            if i == 0:
                line[pid], pos2[pid] = None, -1
            else:
                pos2[pid], line[pid] = self.local[pid][i - 1]
            self.local[pid] = self.local[pid][:i]
            self.index[pid] = line[pid].index if line[pid] is not None else 0
        out = rollback_restore(line, ctx.system.processes, ctx.system.regions, self.cfg)
        restart = min(out.restored.values())
        ctx.skip_pos2.update(pos2)
        ctx.message_log = {mid: v for mid, v in ctx.message_log.items() if 2 * v[2] < pos2[v[0].receiver]}
        info = {"line": {pid: to_s(out.restored[pid]) for pid in self.pids}, "restored_progress": to_s(restart)}
        return restart, out, info

    def _recovered(self, subject: str, start: int, payload: dict) -> None:
        ctx = self.ctx
        ctx.unsuspend(self.pids)
        ctx.restart_processes(self.pids)
        subjects = set(self.pids) | {rid for pid in self.pids for rid in ctx.system.processes[pid].regions}
        ctx.faults.restored(subjects)
        self.recovering = False
        ctx.job.unblock(f"recover:{self.id}")
        self._schedule(ctx.job.progress)
        self.emit(K.MITIGATION_COMPLETE, subject, start, **payload)

    def on_restart(self, pids):
        # another pattern restarted the application (e.g. reinitialization): drop stale state
        if self.recovering:
            return
        p = self.ctx.job.progress
        self.cuts = [(c, r) for c, r in self.cuts if c <= p]
        self._schedule(p)


class RollForward(Rollback):
    """Coordinated checkpoints plus a determinant log; recovery replays to the failure point."""

    mech_name = "roll-forward"

    def start(self):
        super().start()
        if not self.coordinated:
            raise PatternConfigError("roll-forward uses coordinated checkpoints")
        self.log = DeterminantLog(logging_config(self.params))
        w = self.ctx.workload
        self.nd_positions = w.nondeterministic_positions() if isinstance(w, GenericWorkload) else []
        self.ctx.nd_hooks.append(self._nd)
        if self.log.config.protocol == "optimistic":
            self.flush_ns = to_ns(self.log.config.flush_interval)
            self.ctx.sim.call_at(self.flush_ns, self._flush)

    def _nd(self, p: int) -> None:
        cost = self.log.log(p)
        if cost > 0:
            self.ctx.job.request(Activity("logging", to_ns(cost), label=f"log:{self.id}"))

    def _flush(self, timer):
        if self.ctx.job.finished:
            return
        self.log.flush()
        self.ctx.sim.call_at(self.ctx.sim.now_ns + self.flush_ns, self._flush)

    def _recover(self, subject: str, eid, start: int) -> None:
        ctx = self.ctx
        f = ctx.error_progress.get(eid, ctx.job.progress)
        self._begin()
        self.log.lose_volatile()
        c, recs = self.cuts[-1] if self.cuts else (0, {})
        rollback_restore({pid: recs.get(pid) for pid in self.pids}, ctx.system.processes, ctx.system.regions, self.cfg)
        ctx.job.set_progress(c)
        outcome = roll_forward_restore(c, f, self.log, self.nd_positions, self.cfg.restore_cost)
        ctx.replay(c, outcome.reach_ns)
        self.log.truncate_after(outcome.reach_ns)
        restored_regions = [rid for pid in self.pids for rid in ctx.system.processes[pid].regions]
        ctx.region_written(restored_regions)
        ctx.mitigate_errors_in(restored_regions)
        payload = {
            "error": eid,
            "lost_work": to_s(f - outcome.reach_ns),
            "restored_progress": to_s(c),
            "reach": to_s(outcome.reach_ns),
            "recovery_time": outcome.recovery_time,
            "time_to_failure_point": outcome.time_to_failure_point,
            "rollback_time": outcome.rollback_time,
        }
        ctx.job.request(
            Activity("recovery", to_ns(outcome.recovery_time), on_done=lambda: self._recovered(subject, start, payload), while_blocked=True, label=f"recover:{self.id}"),
            front=True,
        )


# mitigation: reconfiguration --------------------------------------------------------------


class Migration(PatternInstance):
    """Moves every process off a suspect node, then retires it."""

    def start(self):
        self.bandwidth = float(self.params.get("bandwidth", 0.0))
        self.sync_cost = float(self.params.get("sync_cost", 0.0))
        self.policy = self.params.get("policy", "spare-first")
        self.oversubscribe = bool(self.params.get("allow_oversubscribe", False))
        self.active: set[str] = set()

    def on_event(self, ev, wiring):
        ctx = self.ctx
        nid = ev.subject
        if nid in ctx.system.processes:
            nid = ctx.system.processes[nid].node
        node = ctx.system.nodes.get(nid)
        if node is None or nid in self.active or node.status not in ("healthy", "degraded") or not node.processes:
            return node is not None
        cont = self.emit(K.CONTAINMENT, nid, ev.seq, scope="node")
        start = self.emit(K.MITIGATION_START, nid, cont)
        pids = list(node.processes)
        for pid in pids:
            ctx.system.processes[pid].status = "migrating"
        cost = sum(migration_cost(ctx.system, pid, self.bandwidth, self.sync_cost) for pid in pids)
        self.active.add(nid)
        ctx.job.request(Activity("migration", to_ns(cost), on_done=lambda: self._done(nid, pids, start, cost), while_blocked=True, label=f"migrate:{self.id}"))
        return True

    def _done(self, nid: str, pids: list[str], start: int, cost: float) -> None:
        ctx = self.ctx
        self.active.discard(nid)
        node = ctx.system.nodes[nid]
        if node.status == "failed":
            return  # the fault beat the copy; the crash errors take their course
        try:
            out = restructure(ctx.system, nid, self.bandwidth, self.sync_cost, self.policy, self.oversubscribe)
        except SystemFailure as exc:
            ctx.declare_failure(nid, start, True, str(exc), None)
            return
        for pid in pids:
            if ctx.system.processes[pid].status == "migrating":
                ctx.system.processes[pid].status = "running"
        if out.retired:
            node.anomalies.clear()
            ctx.faults.retired(nid)
        moved = {pid: dst for pid, (_, dst) in out.moved.items()}
        self.emit(K.MITIGATION_COMPLETE, nid, start, moved=moved, migration_time=cost, status="retired" if out.retired else "degraded")


class Rejuvenate(PatternInstance):
    """Resets only the affected regions to clean content; progress is kept."""

    def on_event(self, ev, wiring):
        ctx = self.ctx
        rids = list(self.params.get("regions") or [])
        if not rids:
            region = ev.payload.get("region", ev.subject)
            if region not in ctx.system.regions:
                return False
            rids = [region]
        eid = ev.payload.get("error")
        start = self.emit(K.MITIGATION_START, ev.subject, ev.seq, error=eid, regions=rids)
        out = rejuvenate(ctx.system, rids, float(self.params.get("halt_cost", 0.0)))
        ctx.region_written(rids)
        ctx.mitigate_errors_in(rids)
        ctx.mark(eid, mitigated=True)
        ctx.faults.restored(rids)
        done = lambda: self.emit(K.MITIGATION_COMPLETE, ev.subject, start, error=eid, regions=rids)
        ctx.job.request(Activity("recovery", to_ns(out.cost), on_done=done, while_blocked=True, label=f"rejuvenate:{self.id}"), front=True)
        return True


class Reinitialize(PatternInstance):
    """Whole-system restart from the initial state; all progress is lost."""

    def start(self):
        self.busy = False

    def on_event(self, ev, wiring):
        ctx = self.ctx
        eid = ev.payload.get("error")
        ctx.mark(eid, mitigated=True)
        if self.busy:
            return True
        self.busy = True
        start = self.emit(K.MITIGATION_START, ev.subject, ev.seq, error=eid)
        pids = list(ctx.system.processes)
        ctx.suspend(pids)
        ctx.job.block(f"recover:{self.id}")
        out = reinitialize(ctx.system, float(self.params.get("restart_cost", 0.0)))
        lost = ctx.job.set_progress(0)
        ctx.skip_pos2.clear()
        ctx.message_log.clear()
        ctx.region_written(out.reset_regions)
        ctx.mitigate_errors_in(out.reset_regions)
        for pid in pids:
            ctx.system.processes[pid].status = "crashed"  # held down until the restart completes

        def done():
            ctx.unsuspend(pids)
            ctx.restart_processes(pids)
            ctx.faults.restored(set(pids) | set(out.reset_regions))
            ctx.job.unblock(f"recover:{self.id}")
            self.busy = False
            self.emit(K.MITIGATION_COMPLETE, ev.subject, start, error=eid, lost_work=to_s(lost))

        ctx.job.request(Activity("recovery", to_ns(out.cost), on_done=done, while_blocked=True, label=f"recover:{self.id}"), front=True)
        return True


# mitigation: redundancy and codes -------------------------------------------------------------


class Nmr(PatternInstance):
    """N replicas per protected process.

    Crashes are absorbed while a replica survives.  Value errors are masked
    by voting (the corrupted replica is re-synchronized) or, in compare
    mode, only detected.
    """

    def start(self):
        self.cfg = build_config("nmr", self.params)
        self.procs = set(self._processes())
        self.alive = {pid: [True] * self.cfg.n for pid in sorted(self.procs)}
        self.rng = self.ctx.sim.fork_stream(f"pattern.{self.id}.replica")
        if self.cfg.time_overhead > 0 and self.cfg.n > 1:
            self.ctx.add_dilation("redundancy", self.cfg.time_overhead * (self.cfg.n - 1))

    def on_event(self, ev, wiring):
        if ev.kind is not K.ERROR_MANIFESTED:
            return False
        ctx = self.ctx
        mode = ev.payload.get("mode")
        if mode in ("crash", "hang") and ev.subject in self.procs:
            alive = self.alive[ev.subject]
            live = [i for i, a in enumerate(alive) if a]
            victim = live[int(self.rng.integers(0, len(live)))]
            alive[victim] = False
            res = nmr_execute(NmrConfig(self.cfg.n, "failover"), alive=alive)
            det = self.emit(K.DETECTION, ev.subject, ev.seq, error=ev.seq, status=res.status, replica=victim, alive=res.alive)
            ctx.mark(ev.seq, detected=True)
            if res.status == SERVICE_CONTINUES:
                start = self.emit(K.MITIGATION_START, ev.subject, det, error=ev.seq)
                ctx.mark(ev.seq, mitigated=True)
                ctx.resume_process(ev.subject)
                self.emit(K.MITIGATION_COMPLETE, ev.subject, start, error=ev.seq, alive=res.alive)
            return False
        if mode == "bit-flips" and ev.subject in ctx.system.regions:
            region = ctx.system.regions[ev.subject]
            if region.owner not in self.procs or self.cfg.mode == "failover":
                return False
            outputs = [0] * self.cfg.n
            outputs[int(self.rng.integers(0, self.cfg.n))] = 1
            res = nmr_execute(self.cfg, outputs)
            det = self.emit(K.DETECTION, ev.subject, ev.seq, error=ev.seq, status=res.status, region=ev.subject, flagged=list(res.flagged))
            ctx.mark(ev.seq, detected=True)
            if res.status == CORRECTED:
                start = self.emit(K.MITIGATION_START, ev.subject, det, error=ev.seq)
                apply_bitflips(region, ev.payload["positions"])  # copy back from the majority
                ctx.region_written([region.id])
                ctx.mark(ev.seq, mitigated=True)
                self.emit(K.MITIGATION_COMPLETE, ev.subject, start, error=ev.seq)
            else:
                assert res.status == DETECTED
        return False


class SecDed(PatternInstance):
    """Per-byte SEC-DED check bits over the covered regions."""

    def start(self):
        regions = self.ctx.system.regions
        cov = self.params.get("coverage") or sorted(self.ctx.domain.region_ids)
        for rid in cov:
            if rid not in regions:
                raise CompositionError(f"instance {self.id!r}: unknown region {rid!r}")
        self.shadows = {rid: EccShadow(regions[rid].data) for rid in cov}

    def on_event(self, ev, wiring):
        rid = ev.subject
        if ev.kind is not K.ERROR_MANIFESTED or rid not in self.shadows or "positions" not in ev.payload:
            return False
        ctx = self.ctx
        region = ctx.system.regions[rid]
        touched = sorted({p // 8 for p in ev.payload["positions"]})
        results = self.shadows[rid].check(region.data, touched)
        due = [idx for idx, st, _ in results if st == DUE]
        fixed = [idx for idx, st, _ in results if st == ECC_CORRECTED]
        if due:
            ctx.mark(ev.seq, detected=True)
            self.emit(K.DETECTION, rid, ev.seq, error=ev.seq, status=DUE, region=rid, byte=due[0], fatal_if_unhandled=True)
        elif fixed:
            det = self.emit(K.DETECTION, rid, ev.seq, error=ev.seq, status="corrected", region=rid, byte=fixed[0], handled=True)
            start = self.emit(K.MITIGATION_START, rid, det, error=ev.seq)
            ctx.mark(ev.seq, detected=True, mitigated=True)
            self.emit(K.MITIGATION_COMPLETE, rid, start, error=ev.seq, corrected_bytes=fixed)
        return False

    def on_region_written(self, rids):
        for rid in rids:
            sh = self.shadows.get(rid)
            if sh is not None:
                sh.refresh(self.ctx.system.regions[rid].data)


class Abft(PatternInstance):
    """Checksummed A (row and column sums) and b (single sum); scrub and repair on demand."""

    def start(self):
        regions = self.ctx.system.regions
        self.matrix = self.params.get("matrix", "A")
        self.vector = self.params.get("vector")
        for rid in (self.matrix, self.vector):
            if rid is not None and rid not in regions:
                raise CompositionError(f"instance {self.id!r}: unknown region {rid!r}")
        self.scrub_cost = to_ns(float(self.params.get("scrub_cost", 0.0)))
        A = regions[self.matrix].data
        b = regions[self.vector].data if self.vector else None
        self.M = abft_attach(A, b, float(self.params.get("rtol", 1e-9)))

    def on_event(self, ev, wiring):
        region = ev.payload.get("region", ev.subject)
        if region not in (self.matrix, self.vector):
            return False
        ctx = self.ctx
        eid = ev.payload.get("error")
        start = self.emit(K.MITIGATION_START, region, ev.seq, error=eid)
        byte = ev.payload.get("byte")
        if region == self.matrix:
            if byte is not None:
                i, j = divmod(int(byte) // 8, self.M.A.shape[1])
                res = abft_repair_at(self.M, i, j)
            else:
                res = abft_scrub(self.M)
        else:
            res = abft_scrub_b(self.M, int(byte) // 8 if byte is not None else None)
        if res.status == "inconsistent":
            self.emit(K.FAILURE_DECLARED, region, start, detected=True, reason=f"checksum repair failed: {res.detail}")
            return True
        ctx.region_written([region])
        ctx.mark(eid, mitigated=True)
        loc = list(res.location) if res.location else None
        done = lambda: self.emit(K.MITIGATION_COMPLETE, region, start, error=eid, status=res.status, location=loc)
        if self.scrub_cost:
            ctx.job.request(Activity("recovery", self.scrub_cost, on_done=done, while_blocked=True, label=f"scrub:{self.id}"), front=True)
        else:
            done()
        return True


RUNNERS = {
    "heartbeat": Heartbeat,
    "threshold": ThresholdMonitor,
    "domain-map": DomainMap,
    "rules": RulePredictor,
    "migration": Migration,
    "rejuvenate": Rejuvenate,
    "reinitialize": Reinitialize,
    "rollback": Rollback,
    "roll-forward": RollForward,
    "nmr": Nmr,
    "secded": SecDed,
    "abft": Abft,
}


def build_instance(ctx: RunContext, spec: InstanceSpec, mech: Mechanism) -> PatternInstance:
    cls = RUNNERS.get(mech.name)
    if cls is None or not mech.runnable:
        raise CompositionError(f"instance {spec.id!r}: {mech.pattern} acts per operation and cannot be scheduled in a run")
    return cls(ctx, spec, mech)
