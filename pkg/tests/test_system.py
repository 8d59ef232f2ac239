import numpy as np
import pytest

from oracles import gauss_solve
from rdpsim.system import (
    GenericWorkload,
    MessageEvent,
    ModelError,
    ProcessNotRunning,
    SolverWorkload,
    StateRegion,
    build_system,
    deliver_message,
    jacobi_step,
)


def _system(n=1, regions=()):
    return build_system(
        {
            "nodes": [{"id": f"n{i}"} for i in range(n)],
            "processes": [{"id": f"p{i}", "node": f"n{i}"} for i in range(n)],
            "regions": list(regions),
        }
    )


def test_minimal_system():
    s = _system()
    assert list(s.nodes) == ["n0"] and list(s.processes) == ["p0"] and s.regions == {}


def test_dangling_node_id():
    with pytest.raises(ModelError, match="dangling node id"):
        build_system({"nodes": [{"id": "n0"}], "processes": [{"id": "p0", "node": "nX"}]})


def test_duplicate_ids_rejected():
    with pytest.raises(ModelError, match="duplicate"):
        build_system({"nodes": [{"id": "n0"}, {"id": "n0"}], "processes": [{"id": "p0", "node": "n0"}]})


def test_four_node_system():
    s = _system(4, [{"id": f"p{i}.heap", "owner": f"p{i}", "role": "dynamic", "size_bytes": 64} for i in range(4)])
    assert all(n.status == "healthy" for n in s.nodes.values())
    assert len(s.processes) == 4
    assert s.hosts() == {f"p{i}": f"n{i}" for i in range(4)}
    assert s.process_regions("p2")[0].nbytes == 64


def test_region_roles_and_content_types():
    with pytest.raises(ModelError):
        StateRegion.opaque("r", "p0", "heap", 4)
    with pytest.raises(ModelError):
        StateRegion("r", "p0", "static", np.zeros(3, dtype=np.int32))
    r = StateRegion.structured_from("x", "p0", "dynamic", [1.0, 2.0])
    snap = r.snapshot()
    r.data[0] = 5.0
    r.restore(snap)
    assert r.data.tolist() == [1.0, 2.0]


def test_advance_to_completion():
    s = _system()
    w = GenericWorkload(s, 100.0)
    p = s.processes["p0"]
    p.progress_ns = 99 * 10**9
    delta, sent, done = w.advance(p, 5.0)
    assert delta == 1.0 and p.progress == 100.0 and done


def test_advance_crashed_process_rejected():
    s = _system()
    w = GenericWorkload(s, 100.0)
    s.processes["p0"].status = "crashed"
    with pytest.raises(ProcessNotRunning):
        w.advance(s.processes["p0"], 1.0)


def test_message_inside_window_is_sent():
    s = _system(2)
    w = GenericWorkload(s, 100.0, [MessageEvent(0, "p0", "p1", 10.0, 10.5)])
    p = s.processes["p0"]
    p.progress_ns = 9 * 10**9
    _, sent, _ = w.advance(p, 2.0)
    assert [m.id for m in sent] == [0]


def test_message_times_must_be_ordered():
    with pytest.raises(ModelError):
        MessageEvent(0, "p0", "p1", 5.0, 5.0)


def test_deliver_to_healthy_and_crashed_receiver():
    s = _system(2)
    m = MessageEvent(0, "p0", "p1", 1.0, 2.0)
    assert deliver_message(s, m) == "receive"
    s.processes["p1"].status = "crashed"
    assert deliver_message(s, m) == "dropped"


def test_receive_folding_is_deterministic():
    digests = []
    for _ in range(2):
        s = _system(2)
        w = GenericWorkload.ring(s, 50.0, 5.0, 0.5)
        for m in w.messages:
            w.apply_receive(m)
        digests.append(w.result())
    assert digests[0] == digests[1]


def _solver(A, b):
    s = _system()
    return SolverWorkload.from_arrays(s, "p0", A, b, tolerance=1e-10, max_iterations=500)


def test_jacobi_identity_one_step():
    w = _solver(np.eye(2), [3.0, 7.0])
    assert jacobi_step(w) == 0.0
    assert w.x.data.tolist() == [3.0, 7.0]


def test_jacobi_matches_direct_solve():
    A, b = [[4.0, 1.0], [1.0, 3.0]], [1.0, 2.0]
    w = _solver(A, b)
    for _ in range(200):
        if jacobi_step(w) <= 1e-10:
            break
    ref = gauss_solve(A, b)
    assert ref == pytest.approx([1 / 11, 7 / 11], abs=1e-15)
    assert np.max(np.abs(w.x.data - ref)) <= 1e-10


def test_jacobi_zero_diagonal():
    A = np.array([[0.0, 1.0], [1.0, 3.0]])
    with pytest.raises(ModelError, match="dominant"):
        SolverWorkload.from_arrays(_system(), "p0", A, [1.0, 2.0])
    with pytest.warns(RuntimeWarning):
        w = SolverWorkload.from_arrays(_system(), "p0", A, [1.0, 2.0], allow_non_dominant=True)
    with pytest.raises(ModelError, match="singular diagonal"):
        jacobi_step(w)
