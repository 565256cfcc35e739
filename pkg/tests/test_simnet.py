import pytest

from egalbft.core import SlotId
from egalbft.kv import write_op
from egalbft.simnet import ClientSpec, SimConfig, simulate
from egalbft.simnet.latency import GEO4, named, symmetric, validate
from egalbft.simnet.scenario import from_mapping, load


def _writes(key, n):
    return [write_op(key, b"%d" % i) for i in range(n)]


def test_same_seed_same_trace():
    def once():
        cfg = SimConfig(seed=11, jitter=40, drop=0.02, duplicate=0.05, trace=True,
                        adversaries={2: "phantom"})
        res = simulate(cfg, [ClientSpec(home=c, ops=_writes(b"k", 4)) for c in range(4)])
        return res.trace, [s["latency"] for s in res.samples]
    assert once() == once()


def test_different_seed_changes_jittered_timing():
    def lat(seed):
        res = simulate(SimConfig(seed=seed, jitter=40), [ClientSpec(home=0, ops=_writes(b"k", 3))])
        return [s["latency"] for s in res.samples]
    assert lat(1) != lat(2)


def test_fast_path_is_three_one_way_steps():
    res = simulate(SimConfig(client_mode="colocated", trace=True),
                   [ClientSpec(home=0, ops=[write_op(b"k", b"v")])])
    assert res.latencies() == [302.0]
    commits = [e for e in res.trace if e["event"] == "commit"]
    assert {e["t"] for e in commits} == {301.0}


def test_reconciliation_adds_one_step_over_fast_path():
    # Replica 1 hears of (3,0) before (0,0); replica 2 does not, so the two
    # fast-quorum reports for (0,0) disagree and Prepare/Commit replace DepCommit.
    lat = [[0, 100, 100, 100], [100, 0, 100, 50], [100, 100, 0, 100], [100, 50, 100, 0]]
    res = simulate(SimConfig(latency=lat, client_mode="colocated", trace=True),
                   [ClientSpec(home=0, ops=[write_op(b"x", b"a")], start=50),
                    ClientSpec(home=3, ops=[write_op(b"x", b"b")], start=60)])
    first = next(s for s in res.samples if s["client"] == 0)
    assert first["latency"] == 1 + 4 * 100 + 1
    assert all(r.commit_paths["reconcile"] == 2 for r in res.replicas)
    assert any(e["event"] == "prepare" for e in res.trace)


def test_silent_coordinator_proposal_is_rebroadcast():
    res = simulate(SimConfig(adversaries={0: "silent"}),
                   [ClientSpec(home=0, ops=[write_op(b"x", b"a")])])
    outside = res.replicas[3]
    assert outside.stats["received"] and outside.agreement.stats["propose_rebroadcast"] == 1
    for r in res.correct:
        assert r.agreement.slots[SlotId(0, 0)].dp is not None


def test_horizon_exceeded_is_reported_not_raised():
    res = simulate(SimConfig(horizon=150.0), [ClientSpec(home=0, ops=_writes(b"k", 3))])
    assert res.unfinished == [0] and res.end_time <= 150.0


def test_at_most_f_adversaries():
    with pytest.raises(ValueError):
        SimConfig(adversaries={0: "crash", 1: "crash"})


def test_latency_validation():
    assert validate(symmetric(4, 10), 4)[0][1] == 10.0
    with pytest.raises(ValueError):
        validate([[0, -1], [1, 0]], 2)
    with pytest.raises(ValueError):
        validate([[0, 1]], 2)
    assert named("geo4", 4) is GEO4
    vals = [GEO4[i][j] for i in range(4) for j in range(4) if i != j]
    assert min(vals) >= 59 and max(vals) <= 127


def test_scenario_loader(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("replicas: 4\nlatency: geo4\nadversaries: {1: crash}\n"
                 "workload: {kind: micro, conflict_rate: 0.05, clients_per_site: 2, requests: 3}\n"
                 "network: {jitter: 5}\nprotocol: {cp_interval: 20, k: 5}\nseed: 7\nhorizon: 9000\n")
    scn = load(str(p))
    assert scn.config.seed == 7 and scn.config.cp_interval == 20 and scn.config.jitter == 5
    assert scn.config.adversaries == {1: "crash"}
    assert [c.home for c in scn.clients()] == [0, 1, 2, 3, 0, 1, 2, 3]
    with pytest.raises(ValueError):
        from_mapping({"replicas": 4, "colour": "blue"}, "x")
