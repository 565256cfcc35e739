"""End-to-end acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""
import os
import sys
import time

import pytest

from egalbft.config import (
    CLIENT_RETRY_TIMEOUT, COMMIT_TIMEOUT, PROPOSE_TIMEOUT, QUERY_EXEC_TIMEOUT,
    VC_COMMIT_TIMEOUT, VIEW_CHANGE_TIMEOUT, VIEW_CHANGE_TIMEOUT_CP, ReplicaConfig,
)
from egalbft.core import NoOp, SlotId
from egalbft.harness.checks import check_all, check_checkpoints
from egalbft.harness.metrics import percentile, summarize
from egalbft.harness.oracle import explore
from egalbft.harness.sweep import ADVERSARIES, CONFLICT_RATES, run_case
from egalbft.harness.workload import Micro, gen_workload
from egalbft.kv import footprint, write_op
from egalbft.simnet import ClientSpec, SimConfig, simulate
from egalbft.simnet.latency import GEO4, symmetric
from egalbft.simnet.scenario import load

SCENARIOS = os.path.join(os.path.dirname(__file__), "..", "scenarios")
SWEEP_SEEDS = 500


# -- shared sweep ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep():
    started = time.time()
    outcomes = [run_case(seed) for seed in range(SWEEP_SEEDS)]
    return outcomes, time.time() - started


def test_c01_safety_sweep(sweep):
    outcomes, seconds = sweep
    bad = [(o.seed, o.adversary, o.problems or o.unfinished) for o in outcomes if not o.ok]
    assert not bad, bad[:5]
    assert {o.adversary for o in outcomes} == {a if isinstance(a, str) else a["kind"] for a in ADVERSARIES}
    assert {o.conflict_rate for o in outcomes} == set(CONFLICT_RATES)
    assert seconds < 300, f"sweep took {seconds:.0f} s"


# -- latency ----------------------------------------------------------------------------

def test_c02_fast_path_three_steps():
    ops = gen_workload(Micro(0.0), 2, 8, 25)
    res = simulate(SimConfig(seed=2, client_mode="colocated", client_local=1.0),
                   [ClientSpec(home=c % 4, ops=ops[c]) for c in range(8)])
    assert not res.unfinished
    median = percentile(res.latencies(), 50)
    assert abs(median - 302.0) <= 5, median


def test_c03_conflicting_requests_both_fast():
    # Replica 1 prefers followers 2 and 3, replica 0 prefers 1 and 2. Both
    # followers of (1,0) report no dependency; both followers of (0,0) report
    # (1,0). Every report agrees, so neither slot needs reconciliation.
    lat = [[0, 120, 100, 120], [120, 0, 60, 60], [100, 60, 0, 100], [120, 60, 100, 0]]
    res = simulate(SimConfig(latency=lat, trace=True),
                   [ClientSpec(home=0, ops=[write_op(b"x", b"A")]),
                    ClientSpec(home=1, ops=[write_op(b"x", b"B")])])
    assert not res.unfinished and check_all(res, footprint).ok
    assert not [e for e in res.trace if e["event"] == "prepare"]
    for r in res.replicas:
        assert r.commit_paths == {"fast": 2}
        assert r.commit_log[SlotId(0, 0)].deps.covers(SlotId(1, 0))


def _geo_path_sum(site, n=4, f=1, local=1.0):
    """Client at `site` to f+1 matching replies on the fast path."""
    L = GEO4
    fq = ReplicaConfig(id=site, latency_hints=tuple(L[site])).preferred_fast_quorum()
    dp = [local + (0 if r == site else L[site][r]) for r in range(n)]
    verified = [max([dp[r]] + [dp[q] + (0 if q == r else L[q][r]) for q in fq]) for r in range(n)]
    commit = [sorted(verified[r] + (0 if r == s else L[r][s]) for r in range(n))[2 * f]
              for s in range(n)]
    replies = sorted(commit[r] + local + (0 if r == site else L[site][r]) for r in range(n))
    return replies[f]


def _geo_medians(rate):
    ops = gen_workload(Micro(rate), 1, 8, 50)
    res = simulate(SimConfig(seed=1, latency=GEO4, horizon=300_000),
                   [ClientSpec(home=c % 4, ops=ops[c]) for c in range(8)])
    assert not res.unfinished
    return [percentile(res.latencies(site), 50) for site in range(4)]


def test_c04_geo_latency_shape():
    one_way = [GEO4[i][j] for i in range(4) for j in range(4) if i != j]
    assert 59 <= min(one_way) and max(one_way) <= 127
    sums = [_geo_path_sum(s) for s in range(4)]
    low = {rate: _geo_medians(rate) for rate in (0.0, 0.02)}
    for rate, medians in low.items():
        for site in range(4):
            assert abs(medians[site] - sums[site]) <= 10, (rate, site, medians, sums)
    high = _geo_medians(1.0)
    for site in range(4):
        assert low[0.02][site] < high[site] < sums[site] + 2 * max(one_way) + 20, (site, high)


# -- linkage ----------------------------------------------------------------------------

def test_c05_dependency_linkage(sweep):
    outcomes, _ = sweep
    linkage = [(o.seed, p) for o in outcomes for p in o.problems if p["check"] == "linkage"]
    assert not linkage, linkage[:5]
    assert sum(o.linked_pairs for o in outcomes) > 10_000


# -- view change ------------------------------------------------------------------------

@pytest.mark.parametrize("adversary", [{0: {"kind": "silent", "count": 1}}, {2: "withhold"}],
                         ids=["silent", "withhold"])
def test_c06_view_change(adversary):
    res = simulate(SimConfig(adversaries=adversary),
                   [ClientSpec(home=0, ops=[write_op(b"x", b"a")])])
    assert not res.unfinished and check_all(res, footprint).ok
    stuck = SlotId(0, 0)
    homes = set()
    for r in res.correct:
        st = r.agreement.slots[stuck]
        assert isinstance(st.record.request, NoOp) and 0 <= st.view < r.n
        runs = [slot for slot, client, ts, _ in r.exec_log if (client, ts) == (0, 1)]
        assert len(runs) == 1 and runs[0] != stuck
        homes.add(runs[0])
    assert len(homes) == 1
    # the coordinator of the NoOp slot moved to the next quorum in its cycle
    assert res.replicas[0].agreement.fast_quorum == (1, 3)
    fresh = homes.pop()
    if fresh.coordinator == 0:
        for r in res.correct:
            assert tuple(r.agreement.slots[fresh].dp.msg.fast_quorum) == (1, 3)


# -- checkpoints ------------------------------------------------------------------------

def test_c07_checkpoints_and_memory_bound():
    lat = [list(row) for row in symmetric(4, 50)]
    for i in range(3):
        lat[i][3] = lat[3][i] = 90
    ops = gen_workload(Micro(0.05), 7, 10, 200)
    # replica 3 is cut off for the first 20 s and must catch up by state transfer
    cfg = SimConfig(seed=7, latency=lat, cp_interval=50, k=5, disconnect=((3, 0, 20_000),),
                    horizon=400_000)
    res = simulate(cfg, [ClientSpec(home=c % 3, ops=ops[c]) for c in range(10)])
    assert len(res.samples) == 2000 and not res.unfinished
    assert check_all(res, footprint).ok and check_checkpoints(res.replicas).ok
    logs = [r.checkpoint_log for r in res.replicas]
    assert len(logs[0]) >= 30 and logs[0] == logs[1] == logs[2]
    assert logs[3] and logs[3] == logs[0][-len(logs[3]):]
    assert res.replicas[3].checkpoints.installs >= 1
    assert max(max(r.agreement.high_water) for r in res.replicas) <= 2 * cfg.cp_interval
    assert len({r.app.state_digest() for r in res.replicas}) == 1
    assert len({tuple(r.executor.exp) for r in res.replicas}) == 1


# -- unblock ----------------------------------------------------------------------------

def test_c08_unblock_under_inflated_dependencies():
    scn = load(os.path.join(SCENARIOS, "inflate-unblock.yaml"))
    scn.config.trace = True
    res = simulate(scn.config, scn.clients())
    assert not res.unfinished and len(res.samples) == 9 * 20
    unblocked = [e for e in res.trace if e["event"] == "execute" and e.get("unblock")]
    assert unblocked
    assert check_all(res, footprint).ok


# -- oracle -----------------------------------------------------------------------------

def test_c09_bounded_oracle():
    started = time.time()
    results = [explore(bound=6, crash=crash, time_limit=100) for crash in (None, 0, 1, 2, 3)]
    seconds = time.time() - started
    assert all(r.ok for r in results), [r.violations[:1] for r in results if not r.ok]
    assert not any(r.truncated for r in results)
    assert {(0, 1), (1, 0)} <= results[0].orders
    assert seconds < 120, f"oracle took {seconds:.0f} s"


# -- liveness ---------------------------------------------------------------------------

def test_c10_liveness_under_synchrony():
    assert (PROPOSE_TIMEOUT, COMMIT_TIMEOUT, VIEW_CHANGE_TIMEOUT_CP, VC_COMMIT_TIMEOUT,
            QUERY_EXEC_TIMEOUT) == (2, 9, 5, 3, 4)
    assert VIEW_CHANGE_TIMEOUT == 3 and CLIENT_RETRY_TIMEOUT == 4
    delta = 200.0
    jitter = delta - max(max(row) for row in GEO4)
    stalled = []
    for i, adversary in enumerate(ADVERSARIES):
        for rate in (0.0, 1.0):
            ops = gen_workload(Micro(rate), i, 4, 6)
            cfg = SimConfig(seed=i, latency=GEO4, jitter=jitter, delta=delta,
                            adversaries={i % 4: adversary}, cp_interval=20 if i % 2 else 0,
                            k=5 if i % 2 else 20, horizon=120_000)
            res = simulate(cfg, [ClientSpec(home=c, ops=ops[c]) for c in range(4)])
            correct_homes = [c for c in range(4) if c not in cfg.adversaries]
            late = [c for c in res.unfinished if c in correct_homes]
            if late or not check_all(res, footprint).ok:
                stalled.append((adversary, rate, late))
    assert not stalled, stalled


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
