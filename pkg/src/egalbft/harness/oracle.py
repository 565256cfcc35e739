"""Bounded exhaustive exploration of message-delivery orders.

A tiny instance (N=4, a couple of conflicting requests) is run many times.
The first `bound` deliveries are chosen exhaustively among all in-flight
messages, pruned with sleep sets: deliveries to different replicas commute,
so only one order of each such pair is explored. After the explored prefix a
timed completion phase (uniform link delay, real timers, optional crash of
one replica) runs the schedule to quiescence and the safety checks run.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

from ..config import ReplicaConfig
from ..core import ClientRequest, Submit, canonical_encode
from ..crypto import client_principal, make_scheme, replica_principal, sign_request
from ..kv import write_op
from ..replica import Arm, Cancel, Replica, Send
from ..simnet.adversary import Crash
from .checks import (
    check_commit_records, check_exclusion, check_write_orders,
)


@dataclass
class OracleResult:
    schedules: int = 0
    violations: list = field(default_factory=list)
    orders: set = field(default_factory=set)
    outcomes: set = field(default_factory=set)
    seconds: float = 0.0
    truncated: bool = False

    @property
    def ok(self):
        return not self.violations


class _World:
    def __init__(self, n, f, requests, crash, delta, latency, scheme):
        self.n = n
        self.replicas = []
        for i in range(n):
            beh = Crash(at=float("inf")) if crash == i else None
            cfg = ReplicaConfig(id=i, n=n, f=f, delta=delta)
            self.replicas.append(Replica(cfg, scheme, behavior=beh))
        self.crash = crash
        self.latency = latency
        self.pool = []           # in-flight (dest, src, env) in send order
        self.timers = {}
        self.now = 0.0
        for r in self.replicas:
            self._effects(r.me, r.step(0.0, ("start",)))
        for home, req in requests:
            self.pool.append((home, -1, Submit(req)))

    def _effects(self, r, effects):
        for e in effects:
            if isinstance(e, Send):
                self.pool.append((e.dest, r, e.env))
            elif isinstance(e, Arm):
                self.timers[(r, e.key)] = e.deadline
            elif isinstance(e, Cancel):
                self.timers.pop((r, e.key), None)

    def deliver(self, i):
        dest, src, env = self.pool.pop(i)
        self._effects(dest, self.replicas[dest].step(self.now, ("message", src, env)))

    def complete(self, want, max_events=20000):
        """Timed run to quiescence; crash (if any) takes effect now."""
        if self.crash is not None:
            self.replicas[self.crash].behavior.at = self.now
        heap = []
        seq = 0
        for dest, src, env in self.pool:
            seq += 1
            heapq.heappush(heap, (self.now + self.latency, seq, "m", dest, (src, env)))
        self.pool = []
        armed = {}
        for (r, key), deadline in self.timers.items():
            seq += 1
            armed[(r, key)] = seq
            heapq.heappush(heap, (deadline, seq, "t", r, key))
        events = 0
        live = [r for r in self.replicas if r.me != self.crash]
        while heap and events < max_events:
            t, s, kind, r, payload = heapq.heappop(heap)
            if kind == "t":
                if armed.get((r, payload)) != s:
                    continue
                del armed[(r, payload)]
            self.now = max(self.now, t)
            events += 1
            rep = self.replicas[r]
            ev = ("timer", payload) if kind == "t" else ("message", payload[0], payload[1])
            for e in rep.step(self.now, ev):
                if isinstance(e, Send):
                    seq += 1
                    heapq.heappush(heap, (self.now + self.latency, seq, "m", e.dest, (r, e.env)))
                elif isinstance(e, Arm):
                    seq += 1
                    armed[(r, e.key)] = seq
                    heapq.heappush(heap, (e.deadline, seq, "t", r, e.key))
                elif isinstance(e, Cancel):
                    armed.pop((r, e.key), None)
            if events % 64 == 0 and self._done(live, want):
                break
        return self._done(live, want)

    def _done(self, live, want):
        for r in live:
            got = {(c, ts) for _, c, ts, _ in r.exec_log}
            if not want <= got:
                return False
            if any(not st.committed for st in r.agreement.slots.values()):
                return False
        return True


def explore(bound: int = 4, crash=None, requests: int = 2, n: int = 4, f: int = 1,
            delta: float = 200.0, latency: float = 100.0, time_limit: float = 110.0,
            on_schedule=None) -> OracleResult:
    """Explore every delivery order of the first `bound` deliveries."""
    scheme = make_scheme("mac", [replica_principal(i) for i in range(n)]
                         + [client_principal(c) for c in range(requests)])
    reqs = []
    for c in range(requests):
        req = sign_request(scheme, ClientRequest(c, 1, write_op(b"x", b"v%d" % c)))
        reqs.append((c % n, req))
    # Requests homed at the crashed replica have no client retry here, so
    # only the others must execute; every slot must still be resolved.
    want = {(c, 1) for c in range(requests) if c % n != crash}
    res = OracleResult()
    started = time.time()

    def build(prefix):
        w = _World(n, f, reqs, crash, delta, latency, scheme)
        for i in prefix:
            w.deliver(i)
        return w

    def finish(prefix, w):
        res.schedules += 1
        try:
            done = w.complete(want)
        except AssertionError as e:
            res.violations.append({"schedule": list(prefix), "error": repr(e)})
            return
        live = [r for r in w.replicas if r.me != crash]
        for chk in (check_commit_records, check_write_orders, check_exclusion):
            rep = chk(live)
            if not rep.ok:
                res.violations.append({"schedule": list(prefix), "problems": rep.problems})
        order = tuple(c for _, c, _, _ in live[0].exec_log)
        res.orders.add(order)
        res.outcomes.add(("done" if done else "stuck",) + tuple(sorted(
            (s.coordinator, s.counter, type(rec.request).__name__)
            for s, rec in live[0].commit_log.items())))
        if on_schedule is not None:
            on_schedule(prefix, w)

    # Iterative DFS with sleep sets. Each frame holds the prefix, the world
    # after it and the set of transitions that need not be explored.
    stack = [([], None, [])]
    while stack:
        if time.time() - started > time_limit:
            res.truncated = True
            break
        prefix, world, sleep = stack.pop()
        if world is None:
            world = build(prefix)
        if len(prefix) >= bound or not world.pool:
            finish(prefix, world)
            continue
        pool = list(world.pool)
        sleeping = set(sleep)
        done_here = []
        children = []
        for i, item in enumerate(pool):
            sig = _sig(item)
            if sig in sleeping:
                continue
            child_sleep = [x for x in sleeping | set(done_here) if _independent_sig(x, sig)]
            children.append((prefix + [i], child_sleep))
            done_here.append(sig)
        for p, sl in reversed(children):
            stack.append((p, None, sl))
    res.seconds = time.time() - started
    return res


def _sig(item):
    """A schedule-independent name for an in-flight message."""
    dest, src, env = item
    return (dest, src, canonical_encode(env))


def _independent_sig(a, b):
    return a[0] != b[0]
