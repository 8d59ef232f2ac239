import pytest

from rdpsim.domains import DomainError, StateKind, StatePattern, covers, fuse
from rdpsim.system import build_system


@pytest.fixture
def regions():
    s = build_system(
        {
            "nodes": [{"id": "n0"}, {"id": "n1"}],
            "processes": [{"id": "p0", "node": "n0"}, {"id": "p1", "node": "n1"}],
            "regions": [
                {"id": "A", "owner": "p0", "role": "static", "values": [[1.0, 0.0], [0.0, 1.0]]},
                {"id": "b", "owner": "p0", "role": "static", "values": [1.0, 2.0]},
                {"id": "x", "owner": "p0", "role": "dynamic", "values": [0.0, 0.0]},
                {"id": "rt", "owner": "p0", "role": "environment", "size_bytes": 16},
                {"id": "p1.heap", "owner": "p1", "role": "dynamic", "size_bytes": 8},
            ],
        }
    )
    return s.regions, s.hosts()


def test_fuse_full_process_domain(regions):
    regs, hosts = regions
    d = fuse(
        [StatePattern.of("static", ["A", "b"]), StatePattern.of("dynamic", ["x"]), StatePattern.of("environment", ["rt"])],
        regs,
    )
    assert d.region_ids == {"A", "b", "x", "rt"}
    assert d.nbytes == 32 + 16 + 16 + 16


def test_fuse_stateless_is_empty(regions):
    regs, _ = regions
    d = fuse([StatePattern.of("stateless")], regs)
    assert d.region_ids == frozenset() and d.stateless_only
    assert not covers(d, "A")


def test_role_mismatch_rejected(regions):
    regs, _ = regions
    with pytest.raises(DomainError, match="role dynamic"):
        fuse([StatePattern.of("static", ["x"])], regs)


def test_covers_static_domain(regions):
    regs, _ = regions
    d = fuse([StatePattern.of("static", ["A", "b"])], regs)
    assert covers(d, "A", 17)
    assert not covers(d, "x")
    with pytest.raises(DomainError, match="unknown region id"):
        covers(d, "nowhere")


def test_role_selection_and_node_scope(regions):
    regs, hosts = regions
    assert fuse([StatePattern.of("dynamic")], regs).region_ids == {"x", "p1.heap"}
    assert fuse([StatePattern.of("dynamic", scope="n1")], regs, hosts).region_ids == {"p1.heap"}
    assert fuse([StatePattern.of("dynamic", scope="p0")], regs, hosts).region_ids == {"x"}


def test_persistent_is_the_static_kind():
    assert StateKind.parse("Persistent") is StateKind.STATIC
    with pytest.raises(ValueError):
        StateKind.parse("volatile")


def test_fuse_needs_a_pattern(regions):
    with pytest.raises(DomainError):
        fuse([], regions[0])
