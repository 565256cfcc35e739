"""Deterministic discrete-event simulation of a replica group and its clients."""
from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field

from ..client import Accepted, ClientSession
from ..config import ReplicaConfig
from ..crypto import client_principal, make_scheme, replica_principal
from ..replica import Arm, Cancel, Replica, Send, ToClient, Trace
from .adversary import make_behavior
from .latency import symmetric, validate

_R_MSG, _R_TIMER, _C_MSG, _C_TIMER, _C_NEXT, _PROBE = range(6)


@dataclass
class ClientSpec:
    home: int
    ops: object                   # list of operations or callable(index) -> op | None
    start: float = 0.0
    retry: float = 0.0            # 0 means the default rebroadcast timeout


@dataclass
class SimConfig:
    n: int = 4
    f: int = 1
    seed: int = 0
    latency: tuple = None         # n x n one-way delays; default uniform 100 ms
    client_mode: str = "site"     # "site": client sits at its home replica's site
    client_local: float = 1.0     # "colocated": client_local to every replica
    jitter: float = 0.0
    drop: float = 0.0
    duplicate: float = 0.0
    horizon: float = 60_000.0
    drain: float = 6_000.0        # extra time after the last client finished
    delta: float = 200.0
    cp_interval: int = 0
    k: int = 20
    batch_limit: int = 1
    commit_timeout: int = 9
    retransmit_every: float = 0.0
    disconnect: tuple = ()        # (replica, start, end): all its links down
    adversaries: dict = field(default_factory=dict)
    scheme: str = "mac"
    trace: bool = False
    record_events: bool = False   # keep per-replica input logs for replay

    def __post_init__(self):
        if self.latency is None:
            self.latency = symmetric(self.n, 100.0)
        self.latency = validate(self.latency, self.n)
        if len(self.adversaries) > self.f:
            raise ValueError("at most f replicas may misbehave")
        if self.client_mode not in ("site", "colocated"):
            raise ValueError("client_mode is 'site' or 'colocated'")
        if not 0 <= self.drop < 1 or not 0 <= self.duplicate < 1:
            raise ValueError("drop/duplicate probabilities must be in [0, 1)")


@dataclass
class SimResult:
    config: SimConfig
    replicas: list
    clients: list
    samples: list
    trace: list
    end_time: float
    events: int
    unfinished: list
    event_logs: dict

    @property
    def correct(self):
        return [r for r in self.replicas if r.behavior is None]

    def latencies(self, home=None):
        return [s["latency"] for s in self.samples if home is None or s["home"] == home]

    def write_trace(self, path):
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


class Simulation:
    def __init__(self, cfg: SimConfig, clients):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        principals = [replica_principal(i) for i in range(cfg.n)]
        principals += [client_principal(c) for c in range(len(clients))]
        self.scheme = make_scheme(cfg.scheme, principals)
        self.now = 0.0
        self.heap = []
        self.seq = 0
        self.trace = []
        self.timers = {}
        self.replicas = []
        for i in range(cfg.n):
            rc = ReplicaConfig(
                id=i, n=cfg.n, f=cfg.f, delta=cfg.delta, cp_interval=cfg.cp_interval, k=cfg.k,
                batch_limit=cfg.batch_limit, latency_hints=tuple(cfg.latency[i]),
                retransmit_every=cfg.retransmit_every, commit_timeout=cfg.commit_timeout)
            beh = make_behavior(cfg.adversaries.get(i))
            self.replicas.append(Replica(rc, self.scheme, behavior=beh, tracing=cfg.trace))
        self.specs = list(clients)
        self.clients = []
        for cid, spec in enumerate(self.specs):
            s = ClientSession(cid, cfg.n, cfg.f, self.scheme, spec.home, cfg.delta)
            if spec.retry:
                s.retry = spec.retry
            self.clients.append(s)
        self.next_index = [0] * len(self.specs)
        self.finished = [False] * len(self.specs)
        self.samples = []
        self.events = 0
        self.event_logs = {i: [] for i in range(cfg.n)} if cfg.record_events else {}
        self._down = {}
        for r, start, end in cfg.disconnect:
            self._down.setdefault(r, []).append((float(start), float(end)))

    # -- scheduling -----------------------------------------------------------
    def _push(self, t, kind, target, payload):
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, target, payload))

    def _is_down(self, r, t):
        for start, end in self._down.get(r, ()):
            if start <= t < end:
                return True
        return False

    def _client_delay(self, home, r):
        c = self.cfg
        if c.client_mode == "colocated" or r == home:
            return c.client_local
        return c.client_local + c.latency[home][r]

    def _jitter(self):
        return self.rng.random() * self.cfg.jitter if self.cfg.jitter else 0.0

    def _replica_effects(self, r, effects):
        c = self.cfg
        for e in effects:
            if isinstance(e, Send):
                if self._is_down(r, self.now) or self._is_down(e.dest, self.now):
                    continue
                if c.drop and self.rng.random() < c.drop:
                    continue
                copies = 2 if c.duplicate and self.rng.random() < c.duplicate else 1
                for _ in range(copies):
                    self._push(self.now + c.latency[r][e.dest] + self._jitter(), _R_MSG, e.dest, (r, e.env))
            elif isinstance(e, ToClient):
                if self._is_down(r, self.now) or e.client >= len(self.clients):
                    continue
                home = self.specs[e.client].home
                self._push(self.now + self._client_delay(home, r) + self._jitter(), _C_MSG, e.client, (r, e.env))
            elif isinstance(e, Arm):
                gen = self.timers.get((r, e.key), 0) + 1
                self.timers[(r, e.key)] = gen
                self._push(max(e.deadline, self.now), _R_TIMER, r, (e.key, gen))
            elif isinstance(e, Cancel):
                self.timers[(r, e.key)] = self.timers.get((r, e.key), 0) + 1
            elif isinstance(e, Trace):
                self.trace.append(e.record)

    def _client_effects(self, cid, effects):
        home = self.specs[cid].home
        for e in effects:
            if isinstance(e, Send):
                if self._is_down(e.dest, self.now):
                    continue
                self._push(self.now + self._client_delay(home, e.dest) + self._jitter(), _R_MSG, e.dest, (-1 - cid, e.env))
            elif isinstance(e, Arm):
                key = ("c", cid, e.key)
                gen = self.timers.get(key, 0) + 1
                self.timers[key] = gen
                self._push(e.deadline, _C_TIMER, cid, (e.key, gen))
            elif isinstance(e, Cancel):
                key = ("c", cid, e.key)
                self.timers[key] = self.timers.get(key, 0) + 1
            elif isinstance(e, Accepted):
                self.samples.append({
                    "client": cid, "home": home, "timestamp": e.timestamp,
                    "operation": e.operation, "result": e.result,
                    "submitted": e.submitted, "accepted": e.accepted,
                    "latency": e.accepted - e.submitted})
                if self.cfg.trace:
                    self.trace.append({"t": self.now, "actor": f"client/{cid}", "event": "accept",
                                       "timestamp": e.timestamp})
                self._push(self.now, _C_NEXT, cid, None)

    def _next_op(self, cid):
        spec = self.specs[cid]
        i = self.next_index[cid]
        if callable(spec.ops):
            op = spec.ops(i)
        else:
            op = spec.ops[i] if i < len(spec.ops) else None
        if op is None:
            self.finished[cid] = True
            return
        self.next_index[cid] = i + 1
        if self.cfg.trace:
            self.trace.append({"t": self.now, "actor": f"client/{cid}", "event": "submit",
                               "timestamp": self.clients[cid].next_timestamp})
        self._client_effects(cid, self.clients[cid].submit(self.now, op))

    def _replica_step(self, r, event):
        if self.event_logs:
            self.event_logs[r].append((self.now, event))
        self._replica_effects(r, self.replicas[r].step(self.now, event))

    # -- main loop ------------------------------------------------------------
    def run(self) -> SimResult:
        c = self.cfg
        for r in range(c.n):
            self._replica_step(r, ("start",))
        for cid, spec in enumerate(self.specs):
            self._push(spec.start, _C_NEXT, cid, None)
        if not self.specs:
            self.finished = []
        deadline = c.horizon
        probing = False
        while self.heap:
            t, _, kind, target, payload = heapq.heappop(self.heap)
            if t > deadline:
                self.now = deadline
                break
            self.now = t
            self.events += 1
            if kind == _R_MSG:
                self._replica_step(target, ("message", payload[0], payload[1]))
            elif kind == _R_TIMER:
                key, gen = payload
                if self.timers.get((target, key)) == gen:
                    self._replica_step(target, ("timer", key))
            elif kind == _C_MSG:
                self._client_effects(target, self.clients[target].on_reply(self.now, payload[1]))
            elif kind == _C_TIMER:
                key, gen = payload
                if self.timers.get(("c", target, key)) == gen:
                    self._client_effects(target, self.clients[target].on_timer(self.now, key))
            elif kind == _C_NEXT:
                if self.now < c.horizon:
                    self._next_op(target)
            elif kind == _PROBE:
                if self._quiet():
                    break
                self._push(self.now + 2 * c.delta, _PROBE, -1, None)
            if all(self.finished) and not probing:
                drain_end = min(c.horizon, self.now + c.drain)
                if deadline > drain_end:
                    deadline = drain_end
                probing = True
                self._push(self.now + 2 * c.delta, _PROBE, -1, None)
        unfinished = [cid for cid, s in enumerate(self.clients) if s.busy or not self.finished[cid]]
        return SimResult(c, self.replicas, self.clients, self.samples, self.trace, self.now,
                         self.events, unfinished, self.event_logs)

    def _quiet(self) -> bool:
        """All correct, connected replicas have executed the same set."""
        live = [r for r in self.replicas
                if r.behavior is None and not self._is_down(r.me, self.now)]
        if not live:
            return True
        exps = {tuple(r.executor.exp) for r in live}
        if len(exps) != 1:
            return False
        return all(not r.executor.committed and not r.queue
                   and all(st.committed for st in r.agreement.slots.values()) for r in live)


def simulate(cfg: SimConfig, clients) -> SimResult:
    return Simulation(cfg, clients).run()
