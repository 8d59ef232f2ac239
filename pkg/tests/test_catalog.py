import numpy as np
import pytest

from oracles import brute_force_recovery_line, ping_pong
from rdpsim.catalog.configs import (
    CheckpointConfig,
    HeartbeatConfig,
    LoggingConfig,
    NmrConfig,
    PatternConfigError,
    PredictionConfig,
    RecoveryBlockConfig,
    Rule,
    VariantModel,
)
from rdpsim.catalog.detection import (
    HeartbeatMonitor,
    first_firing_index,
    heartbeat_check,
    heartbeat_deadline,
    monitor_diagnose,
    predict_faults,
    score_predictions,
)
from rdpsim.catalog.reconfiguration import SystemFailure, reconfigure, restructure
from rdpsim.catalog.recovery import (
    CheckpointDeferred,
    CheckpointRecord,
    DeterminantLog,
    Message,
    compute_recovery_line,
    roll_forward_restore,
    rollback_restore,
    take_checkpoint,
)
from rdpsim.catalog.redundancy import (
    CORRECTED,
    DETECTED,
    DUE,
    FAILED,
    OK,
    SERVICE_CONTINUES,
    n_version_execute,
    nmr_execute,
    recovery_block_execute,
)
from rdpsim.catalog.registry import (
    REGISTRY,
    UnknownPatternError,
    ancestors,
    hierarchy_violations,
    reaches_strategy_root,
    registry_lookup,
)
from rdpsim.kernel import UnrecoverableError
from rdpsim.system import build_system

S = 10**9


# registry ------------------------------------------------------------------------------


def test_rollback_descriptor():
    d = registry_lookup("Rollback")
    assert d.level == "structural" and d.parents == ("Checkpoint Recovery",)
    assert d.capabilities == {"mitigation"}
    assert [a.name for a in ancestors("Rollback")] == ["Checkpoint Recovery", "Recovery"]


def test_fault_treatment_descriptor():
    d = registry_lookup("Fault Treatment")
    assert d.level == "strategy" and d.capabilities == {"detection", "mitigation"}


def test_unknown_pattern():
    with pytest.raises(UnknownPatternError, match="NoSuchPattern"):
        registry_lookup("NoSuchPattern")


def test_aliases_and_case():
    assert registry_lookup("nmr").name == "N-modular Redundancy"
    assert registry_lookup("rollback").name == "Rollback"


def test_hierarchy_is_consistent():
    assert hierarchy_violations() == []
    assert all(reaches_strategy_root(n) for n in REGISTRY)


# heartbeat -----------------------------------------------------------------------------


def test_heartbeat_crash_timeline():
    cfg = HeartbeatConfig(1.0, 0.5)
    t = heartbeat_deadline(cfg, 10.2)
    assert t == pytest.approx(11.5)
    assert t - 10.2 == pytest.approx(1.3)
    beats = [float(k) for k in range(1, 11)]
    assert heartbeat_check(cfg, beats, horizon=100.0) == pytest.approx(11.5)


def test_heartbeat_healthy_process():
    cfg = HeartbeatConfig(1.0, 0.5)
    assert heartbeat_check(cfg, [float(k) for k in range(1, 101)], horizon=100.0) is None


def test_heartbeat_monitor_object():
    mon = HeartbeatMonitor(HeartbeatConfig(1.0, 0.5), ["p0", "p1"])
    for k in range(1, 11):
        mon.beat("p0", float(k))
        mon.beat("p1", float(k))
    mon.beat("p1", 11.0)
    assert mon.check(11.4) == []
    assert mon.check(11.5) == ["p0"]
    assert mon.check(12.0) == []


def test_heartbeat_config_limits():
    with pytest.raises(PatternConfigError):
        HeartbeatConfig(0.0)
    with pytest.raises(PatternConfigError):
        HeartbeatConfig(1.0, -0.1)


# monitoring and prediction ------------------------------------------------------------


def test_effect_cause_out_of_range():
    r = monitor_diagnose("effect-cause", {"n0": {"temperature": 105.0}, "n1": {"temperature": 60.0}}, {"temperature": (0, 100)})
    assert r.location == ("n0",) and r.parameters == ("temperature",)


def test_effect_cause_in_range_is_silent():
    assert monitor_diagnose("effect-cause", {"n0": {"temperature": 50.0}}, {"temperature": (0, 100)}) is None


def test_cause_effect_signature():
    sigs = {"cooling-fault": {"temp_ramp": (">", 1.0), "fan_rpm": ("<", 1000.0)}}
    obs = {"n0": {"temp_ramp": 0.2, "fan_rpm": 3000.0}, "n1": {"temp_ramp": 2.5, "fan_rpm": 400.0}}
    r = monitor_diagnose("cause-effect", obs, signatures=sigs)
    assert (r.location, r.suspected) == (("n1",), "cooling-fault")
    assert monitor_diagnose("cause-effect", {"n0": obs["n0"]}, signatures=sigs) is None


def test_rule_fires_on_fifth_sample():
    rule = Rule("temperature", 75.0, 3)
    samples = [50, 50, 80, 85, 90]
    assert first_firing_index(rule, samples) == 4
    cfg = PredictionConfig((rule,))
    assert predict_faults(cfg, {"temperature": samples[:4]}) is None
    assert predict_faults(cfg, {"temperature": samples}) == rule
    assert first_firing_index(rule, [50.0] * 100) is None


def test_unmatched_prediction_is_false_positive():
    s = score_predictions([(10.0, "n0"), (50.0, "n1")], [(40.0, "n0"), (400.0, "n2")], horizon=60.0)
    assert (s.true_positives, s.false_positives, s.false_negatives) == (1, 1, 1)
    assert s.fp_rate == 0.5


def test_rule_window_must_be_positive():
    with pytest.raises(PatternConfigError):
        Rule("t", 1.0, 0)


# checkpoints -----------------------------------------------------------------------------


@pytest.fixture
def four():
    return build_system(
        {
            "nodes": [{"id": f"n{i}"} for i in range(4)],
            "processes": [{"id": f"p{i}", "node": f"n{i}"} for i in range(4)],
            "regions": [{"id": f"r{i}", "owner": f"p{i}", "role": "dynamic", "size_bytes": 8} for i in range(4)],
        }
    )


def test_coordinated_checkpoint_records_one_cut(four):
    recs = take_checkpoint(CheckpointConfig(10.0), list(four.processes.values()), four.regions, 100.0, cut=1)
    assert len(recs) == 4 and {r.time for r in recs} == {100.0} and {r.cut for r in recs} == {1}
    assert all(set(r.snapshot) == {f"r{r.process[1]}"} for r in recs)


def test_uncoordinated_checkpoint_is_local(four):
    cfg = CheckpointConfig(10.0, protocol="uncoordinated")
    recs = take_checkpoint(cfg, list(four.processes.values()), four.regions, 5.0, caller="p2")
    assert [r.process for r in recs] == ["p2"]


def test_checkpoint_during_migration_deferred(four):
    four.processes["p1"].status = "migrating"
    with pytest.raises(CheckpointDeferred):
        take_checkpoint(CheckpointConfig(10.0), list(four.processes.values()), four.regions, 5.0)


def test_checkpoint_config_limits():
    with pytest.raises(PatternConfigError):
        CheckpointConfig(0.0)
    with pytest.raises(PatternConfigError):
        CheckpointConfig(1.0, cost=-1.0)


# recovery lines -------------------------------------------------------------------------


def test_no_messages_keeps_latest_checkpoints():
    assert compute_recovery_line({"a": [1, 5], "b": [2]}, []) == {"a": 2, "b": 1}


def test_ping_pong_domino_to_initial_states():
    ckpts, msgs = ping_pong(4)
    line = compute_recovery_line(ckpts, [Message(*m) for m in msgs])
    assert line == {"P0": 0, "P1": 0} == brute_force_recovery_line(ckpts, msgs)


def test_coordinated_cut_is_unchanged():
    # every message is sent and received within one checkpoint interval
    ckpts = {"a": [10, 20], "b": [10, 20]}
    msgs = [Message("a", 3, "b", 4), Message("b", 12, "a", 15), Message("a", 21, "b", 23)]
    assert compute_recovery_line(ckpts, msgs) == {"a": 2, "b": 2}


# restore and logging ----------------------------------------------------------------------


def _one():
    s = build_system(
        {
            "nodes": [{"id": "n0"}],
            "processes": [{"id": "p0", "node": "n0"}],
            "regions": [{"id": "r", "owner": "p0", "role": "dynamic", "size_bytes": 4}],
        }
    )
    return s, s.processes["p0"], s.regions["r"]


def test_rollback_restore_lost_work():
    s, p, r = _one()
    p.progress_ns = 60 * S
    (rec,) = take_checkpoint(CheckpointConfig(60.0, restore_cost=7.0), [p], s.regions, 60.0)
    r.data[:] = 9
    p.progress_ns = 100 * S
    out = rollback_restore({"p0": rec}, s.processes, s.regions, CheckpointConfig(60.0, restore_cost=7.0))
    assert out.lost_work_ns == 40 * S and out.restore_cost == 7.0
    assert p.progress_ns == 60 * S and r.data.tolist() == [0, 0, 0, 0]


def test_rollback_to_initial_state_loses_everything():
    s, p, r = _one()
    r.data[:] = 3
    p.progress_ns = 80 * S
    out = rollback_restore({"p0": None}, s.processes, s.regions, CheckpointConfig(10.0))
    assert out.lost_work_ns == 80 * S and p.progress_ns == 0 and r.data.tolist() == [0, 0, 0, 0]


def test_restore_with_missing_region_is_unrecoverable():
    s, p, _ = _one()
    rec = CheckpointRecord("p0", 1, 5.0, 5 * S, {"gone": np.zeros(4, dtype=np.uint8)})
    with pytest.raises(UnrecoverableError):
        rollback_restore({"p0": rec}, s.processes, s.regions, CheckpointConfig(10.0))


def test_pessimistic_logging_charges_synchronously():
    log = DeterminantLog(LoggingConfig("pessimistic", log_cost=0.01))
    assert sum(log.log(k) for k in range(10)) == pytest.approx(0.1)
    assert log.durable == list(range(10))


def test_optimistic_logging_loses_unflushed():
    log = DeterminantLog(LoggingConfig("optimistic", log_cost=0.01, flush_interval=5.0))
    assert log.log(1) == 0.0 and log.log(2) == 0.0
    log.flush()
    log.log(3)
    log.log(4)
    assert log.lose_volatile() == 2
    assert log.durable == [1, 2]


def test_causal_logging_is_free_and_durable():
    log = DeterminantLog(LoggingConfig("causal"))
    assert sum(log.log(k) for k in range(5)) == 0.0
    assert log.durable == list(range(5))


def test_roll_forward_cost_against_rollback():
    log = DeterminantLog(LoggingConfig("pessimistic", replay_speedup=0.1))
    out = roll_forward_restore(0, 50 * S, log, [], restore_cost=2.0)
    assert out.recovery_time == pytest.approx(2.0 + 5.0)
    assert out.rollback_time == pytest.approx(2.0 + 50.0)
    log1 = DeterminantLog(LoggingConfig("pessimistic", replay_speedup=1.0))
    out1 = roll_forward_restore(0, 50 * S, log1, [], restore_cost=2.0)
    assert out1.recovery_time == out1.rollback_time


def test_roll_forward_stops_at_last_flushed_determinant():
    log = DeterminantLog(LoggingConfig("optimistic", flush_interval=5.0, replay_speedup=0.5))
    nd = [10 * S, 20 * S, 30 * S, 40 * S]
    log.log(nd[0])
    log.log(nd[1])
    log.flush()
    log.log(nd[2])
    log.log(nd[3])
    log.lose_volatile()
    out = roll_forward_restore(0, 45 * S, log, nd, restore_cost=1.0)
    assert out.reach_ns == 20 * S
    assert out.reexecution == pytest.approx(25.0)
    assert out.recovery_time == pytest.approx(1.0 + 0.5 * 20.0)


def test_logging_config_limits():
    with pytest.raises(PatternConfigError):
        LoggingConfig(replay_speedup=0.0)
    with pytest.raises(PatternConfigError):
        LoggingConfig("optimistic")


# redundancy --------------------------------------------------------------------------------


def test_failover_survives_two_crashes():
    r = nmr_execute(NmrConfig(3, "failover"), [7, 7, 7], [False, True, False])
    assert r.status == SERVICE_CONTINUES and r.value == 7 and r.flagged == (0, 2)
    assert nmr_execute(NmrConfig(3, "failover"), alive=[False] * 3).status == FAILED


def test_vote_masks_minority():
    r = nmr_execute(NmrConfig(3, "vote"), [5, 5, 9])
    assert (r.status, r.value, r.flagged) == (CORRECTED, 5, (2,))
    assert nmr_execute(NmrConfig(3, "vote"), [4, 4, 4]).status == OK


def test_vote_without_majority():
    assert nmr_execute(NmrConfig(3, "vote"), [5, 9, 7]).status == DUE


def test_compare_detects_only():
    assert nmr_execute(NmrConfig(2, "compare"), [1, 2]).status == DETECTED
    assert nmr_execute(NmrConfig(2, "compare"), [1, 1]).status == OK


def test_nmr_mode_constraints():
    with pytest.raises(PatternConfigError):
        NmrConfig(2, "vote")
    with pytest.raises(PatternConfigError):
        NmrConfig(1, "compare")


def _variants(bugs):
    return [VariantModel(f"v{i}", lambda x: x * x, frozenset(b), cost=float(i + 1)) for i, b in enumerate(bugs)]


def test_recovery_block_primary_ok():
    vs = {v.id: v for v in _variants([{3}, {4}])}
    cfg = RecoveryBlockConfig("v0", ("v1",), lambda x, y: y == x * x)
    r = recovery_block_execute(cfg, vs, 2)
    assert (r.value, r.served_by, r.executions) == (4, "v0", 1)


def test_recovery_block_falls_back_to_alternate():
    vs = {v.id: v for v in _variants([{3}, {4}])}
    cfg = RecoveryBlockConfig("v0", ("v1",), lambda x, y: y == x * x)
    r = recovery_block_execute(cfg, vs, 3)
    assert (r.value, r.served_by, r.executions, r.cost) == (9, "v1", 2, 3.0)


def test_recovery_block_exhausted():
    vs = {v.id: v for v in _variants([{3}, {3}])}
    cfg = RecoveryBlockConfig("v0", ("v1",), lambda x, y: y == x * x)
    assert recovery_block_execute(cfg, vs, 3).status == FAILED
    with pytest.raises(PatternConfigError):
        RecoveryBlockConfig("v0", ())


def test_n_version_disjoint_bugs_always_correct():
    vs = _variants([{1, 2}, {3, 4}, {5, 6}])
    for x in range(10):
        r = n_version_execute(vs, x)
        assert r.value == x * x and r.cost == 3.0
        assert r.status == (CORRECTED if 1 <= x <= 6 else OK)


def test_n_version_two_disagree():
    assert n_version_execute(_variants([{1}, set()]), 1).status == DUE
    assert n_version_execute(_variants([set(), set()]), 1).flagged == ()


# reconfiguration ------------------------------------------------------------------------


def _cluster():
    return build_system(
        {
            "nodes": [{"id": f"n{i}"} for i in range(4)] + [{"id": "s0", "spare": True}],
            "processes": [{"id": f"p{i}", "node": f"n{i}"} for i in range(4)],
            "regions": [{"id": f"r{i}", "owner": f"p{i}", "role": "dynamic", "size_bytes": 1000} for i in range(4)],
        }
    )


def test_restructure_onto_spare():
    s = _cluster()
    out = restructure(s, "n1", bandwidth=100.0, sync_cost=2.0)
    assert out.moved == {"p1": ("n1", "s0")} and out.cost == pytest.approx(12.0)
    assert s.nodes["n1"].status == "retired"
    running = [p for p in s.processes.values() if p.status == "running"]
    assert len(running) == 4
    assert {p.node for p in running} == {"n0", "s0", "n2", "n3"}


def test_restructure_without_survivors_fails():
    s = build_system({"nodes": [{"id": "n0"}], "processes": [{"id": "p0", "node": "n0"}]})
    with pytest.raises(SystemFailure):
        restructure(s, "n0")


def test_rejuvenate_keeps_progress():
    s = _cluster()
    s.processes["p0"].progress_ns = 5 * S
    s.regions["r0"].data[:] = 1
    out = reconfigure("rejuvenate", s, ["r0"], halt_cost=0.5)
    assert out.cost == 0.5 and s.regions["r0"].data.sum() == 0
    assert s.processes["p0"].progress_ns == 5 * S


def test_reinitialize_resets_everything():
    s = _cluster()
    for p in s.processes.values():
        p.progress_ns = 500 * S
    s.regions["r2"].data[:] = 1
    reconfigure("reinitialize", s, None)
    assert all(p.progress_ns == 0 for p in s.processes.values())
    assert all(r.data.sum() == 0 for r in s.regions.values())
