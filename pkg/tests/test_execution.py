import random

from hypothesis import given, settings
from hypothesis import strategies as st

from egalbft.core import CP_REQUEST, NOOP, ClientRequest, CommitRecord, DepSet, SlotId
from egalbft.execution import Executor, tarjan
from egalbft.kv import KvStore, write_op


def creq(client, ts=1, key=b"k"):
    return ClientRequest(client, ts, write_op(key, b"%d" % client))


def rec(p, c, deps=None, req=None):
    return CommitRecord(SlotId(p, c), req if req is not None else creq(10 * p + c), DepSet(deps or {}))


class Recorder(KvStore):
    def __init__(self):
        super().__init__()
        self.order = []

    def apply(self, r):
        out = super().apply(r)
        if out is not None:
            self.order.append(r.client)
        return out


def executor(n=3, k=20, hook=None):
    app = Recorder()
    return Executor(n, k, app, hook), app


def slot_of(client):
    return SlotId(client // 10, client % 10)


# -- strongly connected components -------------------------------------------

def _reach(graph):
    reach = {v: set() for v in graph}
    for v in graph:
        todo = list(graph[v])
        while todo:
            w = todo.pop()
            if w not in reach[v]:
                reach[v].add(w)
                todo.extend(graph[w])
    return reach


@settings(max_examples=200)
@given(st.integers(1, 9).flatmap(lambda n: st.lists(
    st.lists(st.integers(0, n - 1), max_size=4), min_size=n, max_size=n)))
def test_tarjan_matches_reachability_oracle(adj):
    graph = {v: sorted(set(ws)) for v, ws in enumerate(adj)}
    comps = tarjan(sorted(graph), graph.__getitem__)
    reach = _reach(graph)
    where = {v: i for i, comp in enumerate(comps) for v in comp}
    assert sorted(where) == sorted(graph)
    for u in graph:
        for v in graph:
            same = u == v or (v in reach[u] and u in reach[v])
            assert (where[u] == where[v]) == same
    # inverse topological order: every edge points to an earlier or equal component
    for u, ws in graph.items():
        for w in ws:
            assert where[w] <= where[u]


# -- ordering -------------------------------------------------------------------

def test_dependency_executes_first():
    ex, app = executor()
    ex.ingest(rec(0, 0, {1: 0}))
    assert ex.run() == []           # (1,0) not committed yet
    ex.ingest(rec(1, 0))
    ex.run()
    assert app.order == [10, 0]


def test_cycle_executes_in_slot_order_before_dependants():
    ex, app = executor()
    ex.ingest(rec(2, 0, {0: 0}))                 # C depends on A
    ex.ingest(rec(1, 0, {0: 0}))                 # B <-> A
    ex.ingest(rec(0, 0, {1: 0}))
    ex.run()
    assert app.order == [0, 10, 20]


def test_scc_sorted_by_coordinator_then_counter():
    ex, app = executor()
    ex.ingest(rec(1, 0, {0: 0}))
    ex.ingest(rec(0, 0, {1: 0}))
    ex.run()
    assert app.order == [0, 10]


def test_compact_dependency_expands_to_earlier_slots():
    ex, _ = executor(n=3)
    r = rec(0, 0, {2: 5})
    targets, beyond = ex._targets(r)
    assert targets == [SlotId(2, c) for c in range(6)] and not beyond
    ex.exp[2] = 3
    targets, _ = ex._targets(r)
    assert targets == [SlotId(2, 3), SlotId(2, 4), SlotId(2, 5)]


def test_window_of_k_slots():
    ex, _ = executor(n=2, k=2)
    ex.exp[1] = 2
    assert ex.in_window(SlotId(1, 2)) and ex.in_window(SlotId(1, 3))
    assert not ex.in_window(SlotId(1, 4))
    ex.ingest(rec(1, 2))
    ex.run()
    assert ex.exp[1] == 3 and ex.in_window(SlotId(1, 4))


def test_duplicate_request_in_two_slots_runs_once():
    ex, app = executor()
    r = creq(7)
    ex.ingest(rec(0, 0, req=r))
    ex.ingest(rec(1, 0, {0: 0}, req=r))
    events = ex.run()
    assert app.order == [7]
    assert [e.kind for e in events] == ["exec", "dup"]


def test_noop_contributes_nothing():
    ex, app = executor()
    ex.ingest(rec(0, 0, req=NOOP))
    ex.ingest(rec(0, 1, {0: 0}))
    ex.ingest(rec(1, 0, {0: 1}))
    ex.run()
    assert app.order == [1, 10]
    assert ex.exp[:2] == [2, 1]


def test_unblock_case_skips_future_dependency():
    # The root (0,0) carries a dependency far beyond the window (as a faulty
    # DepVerify might inject); everything inside the window is committed.
    ex, app = executor(n=3, k=2)
    ex.ingest(rec(0, 0, {1: 2 + 5}))
    ex.ingest(rec(1, 0, {0: 0}))
    ex.ingest(rec(1, 1, {1: 0}))
    ex.ingest(rec(2, 0, {0: 0}))
    events = ex.run()
    assert app.order == [0, 10, 11, 20]
    assert [e.unblock for e in events] == [True, True, True, False]
    assert ex.unblock_runs == 1


def test_no_unblock_while_window_slots_are_missing():
    ex, app = executor(n=2, k=2)
    ex.ingest(rec(0, 0, {1: 2 + 5}))
    assert ex.run() == [] and ex.unblock_runs == 0


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_barrier_covers_its_dependencies():
    barriers = []
    ex, app = executor(n=2, hook=barriers.append)
    ex.ingest(rec(1, 0))
    ex.ingest(rec(0, 0, {1: 0}, req=CP_REQUEST))
    ex.run()
    assert barriers == [DepSet({0: 0, 1: 0})]


def test_two_checkpoint_requests_in_one_scc_merge():
    barriers = []
    ex, _ = executor(n=2, hook=barriers.append)
    ex.ingest(rec(0, 0, {1: 0}, req=CP_REQUEST))
    ex.ingest(rec(1, 0, {0: 0}, req=CP_REQUEST))
    ex.run()
    assert barriers == [DepSet({0: 0, 1: 0})]


def test_requests_after_the_barrier_wait_for_rebuilt_graph():
    barriers = []
    ex, app = executor(n=2, hook=barriers.append)
    # A cycle: client (0,1) after the checkpoint (1,0), which depends on (0,0).
    ex.ingest(rec(0, 0))
    ex.ingest(rec(1, 0, {0: 0}, req=CP_REQUEST))
    ex.ingest(rec(0, 1, {0: 0, 1: 0}))
    ex.run()
    assert barriers == [DepSet({0: 0, 1: 0})]
    assert app.order == [0, 1]


# -- order independence -----------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_conflict_order_independent_of_commit_arrival(seed):
    rng = random.Random(seed)
    n, per = 3, 4
    records = []
    for p in range(n):
        for c in range(per):
            deps = {}
            for q in range(n):
                if rng.random() < 0.4:
                    deps[q] = rng.randrange(per)
            deps.pop(p, None)
            if c > 0:
                deps[p] = c - 1
            records.append(rec(p, c, deps))
    orders = []
    for trial in range(3):
        ex, app = executor(n=n, k=per + 1)
        shuffled = records[:]
        random.Random(seed * 7 + trial).shuffle(shuffled)
        for r in shuffled:
            ex.ingest(r)
            ex.run()
        assert len(app.order) == len(records)
        orders.append(app.order)
    by_slot = {r.slot: r for r in records}
    for order in orders[1:]:
        pos_a = {c: i for i, c in enumerate(orders[0])}
        pos_b = {c: i for i, c in enumerate(order)}
        for x in pos_a:
            for y in pos_a:
                linked = by_slot[slot_of(x)].deps.covers(slot_of(y)) or by_slot[slot_of(y)].deps.covers(slot_of(x))
                if linked:
                    assert (pos_a[x] < pos_a[y]) == (pos_b[x] < pos_b[y])
