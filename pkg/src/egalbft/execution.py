"""Dependency-graph execution of committed slots.

Only a window of k unexecuted slots per coordinator is expanded. A slot
whose dependency closure is committed and in-window runs in the normal
case; otherwise each coordinator's oldest unexecuted slot (its root) may
run in the unblock case, ignoring out-of-window dependencies, but only
the first strongly connected component of its closure.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import (
    Batch, CheckpointRequest, ClientRequest, CommitRecord, DepSet, NoOp, SlotId,
)


@dataclass
class ExecEvent:
    kind: str  # "exec" | "dup" | "noop" | "checkpoint"
    slot: SlotId = None
    client: int = -1
    timestamp: int = -1
    result: bytes = b""
    unblock: bool = False
    barrier: DepSet = None
    operation: bytes = b""


def tarjan(roots, succ):
    """Strongly connected components reachable from roots, emitted in
    inverse topological order (every SCC after the SCCs it points to).

    succ(v) must return successors in a deterministic order.
    """
    index = {}
    low = {}
    on_stack = set()
    stack = []
    out = []
    counter = 0
    for root in roots:
        if root in index:
            continue
        work = [(root, iter(succ(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if w in on_stack and index[w] < low[v]:
                    low[v] = index[w]
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


class Executor:
    """Turns CommitRecords into application calls, in a replica-independent order.

    app must offer apply(ClientRequest) -> result bytes or None (duplicate).
    checkpoint_hook(barrier) is invoked for each merged checkpoint action.
    """

    def __init__(self, n: int, k: int, app, checkpoint_hook=None):
        if k < 1:
            raise ValueError("expansion limit must be positive")
        self.n = n
        self.k = k
        self.app = app
        self.checkpoint_hook = checkpoint_hook
        self.exp = [0] * n           # oldest unexecuted counter per coordinator
        self.done = [set() for _ in range(n)]   # executed counters >= exp
        self.noop_done = [set() for _ in range(n)]
        self.last_real = [-1] * n    # largest executed non-NoOp counter below exp
        self.committed: dict = {}    # unexecuted CommitRecords
        self.unblock_runs = 0
        self.max_nodes = 0
        self.max_edges = 0

    # -- bookkeeping --------------------------------------------------------
    def is_executed(self, slot: SlotId) -> bool:
        p = slot.coordinator
        return slot.counter < self.exp[p] or slot.counter in self.done[p]

    def in_window(self, slot: SlotId) -> bool:
        return slot.counter < self.exp[slot.coordinator] + self.k

    def ingest(self, record: CommitRecord):
        if self.is_executed(record.slot) or record.slot in self.committed:
            return
        self.committed[record.slot] = record

    def _mark_executed(self, slot: SlotId, real: bool):
        p, c = slot.coordinator, slot.counter
        self.committed.pop(slot, None)
        if c < self.exp[p]:
            return
        self.done[p].add(c)
        if not real:
            self.noop_done[p].add(c)
        while self.exp[p] in self.done[p]:
            e = self.exp[p]
            self.done[p].discard(e)
            if e in self.noop_done[p]:
                self.noop_done[p].discard(e)
            else:
                self.last_real[p] = e
            self.exp[p] = e + 1

    def apply_floor(self, floor: DepSet):
        """Treat every slot covered by floor as executed (checkpoint applied
        or garbage collected)."""
        for p, c in floor:
            if c >= self.exp[p]:
                self.exp[p] = c + 1
                self.done[p] = {x for x in self.done[p] if x > c}
                self.noop_done[p] = {x for x in self.noop_done[p] if x > c}
                while self.exp[p] in self.done[p]:
                    self.done[p].discard(self.exp[p])
                    self.noop_done[p].discard(self.exp[p])
                    self.exp[p] += 1
            if c > self.last_real[p]:
                self.last_real[p] = c
        for s in [s for s in self.committed if floor.covers(s)]:
            del self.committed[s]

    # -- graph --------------------------------------------------------------
    def _targets(self, rec: CommitRecord):
        """(in-window unexecuted targets, has out-of-window dependency)."""
        out = []
        beyond = False
        me = rec.slot
        for p, c in rec.deps.items:
            lo = self.exp[p]
            hi = lo + self.k - 1
            if c > hi:
                beyond = True
                top = hi
            else:
                top = c
            done = self.done[p]
            for j in range(lo, top + 1):
                if j in done or (p == me.coordinator and j == me.counter):
                    continue
                out.append(SlotId(p, j))
        return out, beyond

    # -- scheduling ---------------------------------------------------------
    def run(self):
        """Execute everything currently executable; returns ExecEvents."""
        events = []
        while True:
            if self._normal_pass(events):
                continue
            if self._unblock_pass(events):
                continue
            return events

    def _normal_pass(self, events) -> bool:
        nodes = sorted(s for s in self.committed if self.in_window(s))
        if not nodes:
            return False
        adj = {}
        tainted = set()
        edges = 0
        for s in nodes:
            targets, beyond = self._targets(self.committed[s])
            succ = []
            for t in targets:
                if t in self.committed:
                    succ.append(t)
                else:
                    tainted.add(s)
            if beyond:
                tainted.add(s)
            adj[s] = succ
            edges += len(targets)
        self.max_nodes = max(self.max_nodes, len(nodes))
        self.max_edges = max(self.max_edges, edges)
        progress = False
        blocked = set()
        for comp in tarjan(nodes, adj.__getitem__):
            members = set(comp)
            bad = any(v in tainted for v in comp) or any(
                w in blocked for v in comp for w in adj[v] if w not in members)
            if bad:
                blocked.update(comp)
                continue
            progress = True
            if self._execute_scc(comp, events, unblock=False):
                return True  # checkpoint: rebuild the graph
        return progress

    def _unblock_pass(self, events) -> bool:
        for p in range(self.n):
            root = SlotId(p, self.exp[p])
            if root not in self.committed:
                continue
            adj = {}
            ok = True
            seen = {root}
            todo = [root]
            while todo:
                v = todo.pop()
                targets, _ = self._targets(self.committed[v])
                adj[v] = targets
                for t in targets:
                    if t not in self.committed:
                        ok = False
                        break
                    if t not in seen:
                        seen.add(t)
                        todo.append(t)
                if not ok:
                    break
            if not ok:
                continue
            first = tarjan([root], adj.__getitem__)[0]
            self.unblock_runs += 1
            self._execute_scc(first, events, unblock=True)
            return True
        return False

    def _execute_scc(self, comp, events, unblock: bool) -> bool:
        """Run one SCC; True if a checkpoint fired (caller must rebuild)."""
        members = sorted(comp)
        recs = [self.committed[s] for s in members]
        if any(isinstance(r.request, CheckpointRequest) for r in recs):
            self._checkpoint_scc(recs, events, unblock)
            return True
        for r in recs:
            self._execute_one(r, events, unblock)
        return False

    def _execute_one(self, rec: CommitRecord, events, unblock: bool):
        req = rec.request
        if isinstance(req, NoOp):
            events.append(ExecEvent("noop", rec.slot, unblock=unblock))
            self._mark_executed(rec.slot, real=False)
            return
        if isinstance(req, CheckpointRequest):
            self._mark_executed(rec.slot, real=True)
            return
        members = (req,) if isinstance(req, ClientRequest) else req.members
        for cr in members:
            result = self.app.apply(cr)
            kind = "dup" if result is None else "exec"
            events.append(ExecEvent(kind, rec.slot, cr.client, cr.timestamp,
                                    result or b"", unblock=unblock, operation=cr.operation))
        self._mark_executed(rec.slot, real=True)

    def barrier_for(self, recs) -> DepSet:
        """Merged checkpoint dependencies plus the checkpoint slots, capped at
        the expansion window and extended down to the executed prefix."""
        merged = DepSet()
        for r in recs:
            if isinstance(r.request, CheckpointRequest):
                merged = merged.merge(r.deps).merge(DepSet([(r.slot.coordinator, r.slot.counter)]))
        bound = {}
        for p in range(self.n):
            c = min(merged.get(p), self.exp[p] + self.k - 1)
            c = max(c, self.last_real[p])
            if c >= 0:
                bound[p] = c
        return DepSet(bound)

    def _checkpoint_scc(self, recs, events, unblock: bool):
        barrier = self.barrier_for(recs)
        for r in recs:
            if barrier.covers(r.slot):
                self._execute_one(r, events, unblock)
        events.append(ExecEvent("checkpoint", barrier=barrier, unblock=unblock))
        if self.checkpoint_hook is not None:
            self.checkpoint_hook(barrier)

    def pending_roots(self):
        return [SlotId(p, self.exp[p]) for p in range(self.n)]


def request_kind(req) -> str:
    if isinstance(req, NoOp):
        return "noop"
    if isinstance(req, CheckpointRequest):
        return "checkpoint"
    if isinstance(req, Batch):
        return "batch"
    return "request"
