"""Property tests for the invariants the simulator must keep."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oracles import brute_force_recovery_line
from rdpsim.catalog.configs import HeartbeatConfig, LoggingConfig, NmrConfig
from rdpsim.catalog.detection import heartbeat_deadline
from rdpsim.catalog.recovery import (
    DeterminantLog,
    Message,
    compute_recovery_line,
    is_orphan,
    line_positions,
    roll_forward_restore,
)
from rdpsim.catalog.redundancy import DUE, nmr_execute
from rdpsim.codes import abft_attach, abft_scrub
from rdpsim.composer import preset, solution_from_dict, solution_to_dict, validate_solution
from rdpsim.faults import apply_bitflips
from rdpsim.runner import run_scenario
from rdpsim.scenario import scenario_from_dict
from rdpsim.system import StateRegion, random_dominant_system

S = 10**9
FAST = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def traces(draw):
    procs = [f"p{i}" for i in range(draw(st.integers(2, 4)))]
    ckpts = {p: sorted(draw(st.sets(st.integers(1, 40), max_size=4))) for p in procs}
    msgs = []
    for _ in range(draw(st.integers(0, 8))):
        s, r = draw(st.permutations(procs))[:2]
        msgs.append((s, draw(st.integers(0, 40)) + 0.5, r, draw(st.integers(0, 40)) + 0.5))
    return ckpts, msgs


@FAST
@given(traces())
def test_recovery_line_matches_enumeration_and_has_no_orphans(tr):
    ckpts, msgs = tr
    line = compute_recovery_line(ckpts, [Message(*m) for m in msgs])
    assert line == brute_force_recovery_line(ckpts, msgs)
    pos = line_positions(ckpts, line)
    assert not any(is_orphan(Message(*m), pos) for m in msgs)


@FAST
@given(
    st.integers(0, 100),
    st.integers(0, 500),
    st.sampled_from(["pessimistic", "causal"]),
    st.floats(0.01, 1.0),
    st.floats(0.0, 20.0),
    st.lists(st.integers(1, 500), max_size=10),
)
def test_roll_forward_never_slower_than_rollback(ckpt_s, span_s, proto, rho, restore, nd_s):
    log = DeterminantLog(LoggingConfig(proto, replay_speedup=rho))
    nd = sorted({(ckpt_s + x) * S for x in nd_s})
    for p in nd:
        log.log(p)
    out = roll_forward_restore(ckpt_s * S, (ckpt_s + span_s) * S, log, nd, restore)
    assert out.recovery_time <= out.rollback_time + 1e-9


@FAST
@given(st.sampled_from([3, 5, 7]), st.integers(-5, 5), st.data())
def test_vote_never_returns_a_minority_value(n, good, data):
    wrong = data.draw(st.integers(0, (n - 1) // 2))
    bad = data.draw(st.lists(st.integers(10, 20), min_size=wrong, max_size=wrong))
    outputs = data.draw(st.permutations([good] * (n - wrong) + bad))
    r = nmr_execute(NmrConfig(n, "vote"), outputs)
    assert r.value == good and len(r.flagged) == wrong
    # with no strict majority the vote abstains instead of guessing
    split = [1] * (n // 2) + [2] * (n // 2) + [3] * (n % 2)
    assert nmr_execute(NmrConfig(n, "vote"), split).status == DUE


@FAST
@given(st.floats(0.1, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 1000.0))
def test_heartbeat_latency_bounded_by_period_plus_timeout(p, t, stop):
    latency = heartbeat_deadline(HeartbeatConfig(p, t), stop) - stop
    assert t - 1e-9 <= latency <= p + t + 1e-9


@FAST
@given(st.integers(2, 10), st.integers(0, 2**32 - 1), st.data())
def test_abft_repairs_a_single_element_and_scrub_is_idempotent(m, seed, data):
    A, _ = random_dominant_system(m, np.random.default_rng(seed))
    orig = A.copy()
    M = abft_attach(A)
    i, j = data.draw(st.integers(0, m - 1)), data.draw(st.integers(0, m - 1))
    M.A[i, j] += data.draw(st.sampled_from([-1.0, 1.0])) * data.draw(st.floats(1e-3, 1e3))
    r = abft_scrub(M)
    assert r.status == "repaired" and r.location == (i, j)
    assert np.allclose(M.A, orig, rtol=1e-9, atol=1e-12)
    after = M.A.copy()
    assert abft_scrub(M).status == "ok"
    assert np.array_equal(M.A, after)


@FAST
@given(st.lists(st.floats(allow_nan=False), min_size=1, max_size=6), st.data())
def test_bitflips_are_an_involution(values, data):
    region = StateRegion.structured_from("x", "p0", "dynamic", values)
    orig = region.snapshot()
    pos = data.draw(st.sets(st.integers(0, 64 * len(values) - 1), min_size=1, max_size=5))
    apply_bitflips(region, sorted(pos))
    apply_bitflips(region, sorted(pos))
    assert np.array_equal(region.data, orig)


@st.composite
def small_scenarios(draw):
    n = draw(st.integers(1, 3))
    faults = []
    if draw(st.booleans()):
        faults.append({"id": "c", "manifestation": draw(st.sampled_from(["process-crash", "process-hang"])), "rate": draw(st.floats(0.5, 6.0))})
    kind = draw(st.sampled_from(["none", "cr", "rollback"]))
    sol = None
    if kind == "cr":
        sol = {"preset": "cr-process-failure", "patterns": [{"id": "rb", "params": {"interval": draw(st.floats(20.0, 300.0)), "cost": 1.0, "restore_cost": 2.0}}]}
    elif kind == "rollback":
        sol = {
            "targets": ["failure"],
            "state": [{"kind": "dynamic"}],
            "patterns": [{"id": "rb", "pattern": "Rollback", "params": {"interval": draw(st.floats(10.0, 200.0)), "cost": draw(st.floats(0.0, 5.0))}}],
        }
    d = {
        "horizon": 2e4,
        "system": {
            "nodes": [{"id": f"n{i}"} for i in range(n)],
            "processes": [{"id": f"p{i}", "node": f"n{i}"} for i in range(n)],
            "regions": [{"id": f"p{i}.h", "owner": f"p{i}", "role": "dynamic", "size_bytes": 16} for i in range(n)],
        },
        "workload": {"work": draw(st.floats(10.0, 2000.0)), "message_interval": draw(st.sampled_from([0, 7.0]))},
        "faults": faults,
    }
    if sol is not None:
        d["solution"] = sol
    return d, draw(st.integers(0, 10**6))


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_scenarios())
def test_time_accounting_identity(case):
    d, seed = case
    m = run_scenario(scenario_from_dict(d), seed, trace=False).metrics
    assert m.identity_holds()
    s = m.to_dict()["seconds"]
    assert min(v for v in s.values()) >= 0
    if m.outcome == "aborted":
        assert s["useful"] == 0


@FAST
@given(st.sampled_from(["cr-process-failure", "proactive-migration", "cross-layer-abft"]), st.data())
def test_validation_is_pure(name, data):
    d = solution_to_dict(preset(name))
    ids = [p["id"] for p in d["patterns"]]
    d["disabled"] = data.draw(st.lists(st.sampled_from(ids), unique=True))
    spec = solution_from_dict(d)
    before = solution_to_dict(spec)
    first = validate_solution(spec).to_dict()
    assert validate_solution(spec).to_dict() == first
    assert solution_to_dict(spec) == before
