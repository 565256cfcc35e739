"""A replica: agreement, execution and checkpointing behind one step function.

step(now, event) consumes one input event and returns the resulting effects
as data (Send, ToClient, Arm, Cancel, Trace). The simulator and the socket
daemon interpret those effects; the replica itself never does I/O.
"""
from __future__ import annotations

from collections import Counter, deque
from typing import NamedTuple

from .agreement import Agreement
from .checkpoint import CheckpointManager
from .config import ReplicaConfig
from .core import (
    Batch, Checkpoint, CheckpointFetch, CheckpointState, ClientRequest, Commit,
    DepCommit, DepVerify, Exec, NewView, Prepare, Propose, QueryExec, Reply,
    Signed, SlotId, Submit, ViewChange, client_requests,
)
from .crypto import sign_message, verify_request, verify_signed
from .execution import Executor
from .kv import KvStore


class Send(NamedTuple):
    dest: int
    env: object


class ToClient(NamedTuple):
    client: int
    env: object


class Arm(NamedTuple):
    key: tuple
    deadline: float


class Cancel(NamedTuple):
    key: tuple


class Trace(NamedTuple):
    record: dict


class Replica:
    def __init__(self, cfg: ReplicaConfig, scheme, app=None, behavior=None,
                 record_log: bool = True, tracing: bool = False):
        self.cfg = cfg
        self.me = cfg.id
        self.n = cfg.n
        self.f = cfg.f
        self.scheme = scheme
        self.tracing = tracing
        self._now = 0.0
        self._out = []
        self.app = app if app is not None else KvStore()
        self.behavior = behavior
        self.t = cfg.timeouts()
        self.agreement = Agreement(cfg, self, self.app.footprint)
        self.executor = Executor(cfg.n, cfg.k, self.app, self._checkpoint_action)
        self.checkpoints = CheckpointManager(self, self.t["query_exec"])
        self.queue = deque()
        self.pending = {}             # (client, timestamp) -> slot
        self.reply_slot = {}          # client -> slot of its last executed request
        self.record_log = record_log
        self.exec_log = []            # (slot, client, timestamp, operation) in execution order
        self.commit_paths = Counter()
        self.commit_log = {}          # slot -> CommitRecord
        self.checkpoint_log = []      # (seq, barrier, state hash)
        self.stats = Counter()
        self._running = False
        self._rerun = False
        self._last_retransmit = 0.0
        self._query_sent = {}
        self._root_since = {}
        self._started = False

    # -- event loop -----------------------------------------------------------
    @property
    def now(self) -> float:
        return self._now

    def step(self, now: float, event) -> list:
        """Process one event and return its effects.

        event is ("start",), ("message", src, envelope) or ("timer", key).
        """
        self._now = max(self._now, now)
        kind = event[0]
        if kind == "start":
            if not self._started:
                self._started = True
                self.set_timer(("tick",), self.cfg.delta)
        elif kind == "message":
            self.on_message(event[1], event[2])
        elif kind == "timer":
            self.on_timer(event[1])
        else:
            raise ValueError(f"unknown event {kind!r}")
        out, self._out = self._out, []
        return out

    def crashed(self) -> bool:
        b = self.behavior
        return b is not None and b.crashed(self, self.now)

    def sign(self, msg) -> Signed:
        if msg.sender != self.me:
            raise PermissionError(f"replica {self.me} cannot sign for {msg.sender}")
        return sign_message(self.scheme, msg)

    def verify(self, s: Signed) -> bool:
        sender = getattr(s.msg, "sender", -1)
        return 0 <= sender < self.n and verify_signed(self.scheme, s)

    def verify_request(self, req) -> bool:
        return isinstance(req, ClientRequest) and verify_request(self.scheme, req)

    def send(self, dest: int, env):
        if dest == self.me:
            return
        b = self.behavior
        if b is not None:
            env = b.outgoing(self, dest, env)
            if env is None:
                return
        self.stats["sent"] += 1
        self._out.append(Send(dest, env))

    def broadcast(self, env):
        for r in range(self.n):
            if r != self.me:
                self.send(r, env)

    def set_timer(self, key, delay):
        self._out.append(Arm(key, self._now + delay))

    def cancel_timer(self, key):
        self._out.append(Cancel(key))

    def note(self, kind, slot, dig=b"", extra=None):
        if self.tracing:
            ev = {"t": self._now, "actor": f"replica/{self.me}", "event": kind,
                  "slot": [slot.coordinator, slot.counter], "digest": dig.hex()[:16]}
            if extra is not None:
                ev["extra"] = extra if isinstance(extra, (int, str)) else list(extra)
            self._out.append(Trace(ev))

    # -- inbound --------------------------------------------------------------
    def on_message(self, src: int, env):
        if self.crashed():
            return
        self.stats["received"] += 1
        a = self.agreement
        if isinstance(env, Propose):
            a.on_propose(env)
            return
        if isinstance(env, Submit):
            self.on_submit(env.request)
            return
        if not isinstance(env, Signed):
            return
        m = env.msg
        if isinstance(m, DepVerify):
            a.on_dep_verify(env)
        elif isinstance(m, DepCommit):
            a.on_dep_commit(env)
        elif isinstance(m, Prepare):
            a.on_prepare(env)
        elif isinstance(m, Commit):
            a.on_commit(env)
        elif isinstance(m, ViewChange):
            a.on_view_change(env)
        elif isinstance(m, NewView):
            a.on_new_view(env)
        elif isinstance(m, QueryExec):
            a.on_query_exec(env)
        elif isinstance(m, Exec):
            a.on_exec(env)
        elif isinstance(m, Checkpoint):
            self.checkpoints.on_vote(env)
        elif isinstance(m, CheckpointFetch):
            self.checkpoints.on_fetch(env)
        elif isinstance(m, CheckpointState):
            self.checkpoints.on_state(env)

    def on_submit(self, req):
        if self.crashed() or not isinstance(req, ClientRequest) or not self.verify_request(req):
            return
        if self.app.is_duplicate(req):
            cached = self.app.cached_result(req.client, req.timestamp)
            if cached is not None:
                self._reply(self.reply_slot.get(req.client, SlotId(self.me, 0)), req, cached)
            return
        key = (req.client, req.timestamp)
        if key in self.pending:
            return
        self.pending[key] = None
        self.queue.append(req)
        self._drain()

    def _drain(self):
        a = self.agreement
        while self.queue and a.can_propose():
            members = []
            while self.queue and len(members) < self.cfg.batch_limit:
                r = self.queue.popleft()
                if not self.app.is_duplicate(r):
                    members.append(r)
            if not members:
                continue
            req = members[0] if len(members) == 1 else Batch(tuple(members))
            slot = a.propose_request(req)
            for r in members:
                self.pending[(r.client, r.timestamp)] = slot
        if self.queue:
            self.stats["backpressure"] += 1

    def repropose(self, req):
        for r in reversed(client_requests(req)):
            if not self.app.is_duplicate(r):
                self.queue.appendleft(r)
        self._drain()

    # -- timers ---------------------------------------------------------------
    def on_timer(self, key):
        if self.crashed():
            return
        kind = key[0]
        if kind == "tick":
            self._tick()
            self.set_timer(("tick",), self.cfg.delta)
        elif kind == "fetch":
            self.checkpoints.on_fetch_timer(key[1])
        else:
            self.agreement.on_timer(key)

    def _tick(self):
        now = self.now
        if now - self._last_retransmit >= self.t["retransmit"]:
            self._last_retransmit = now
            self.agreement.retransmit()
        wait = self.t["query_exec"]
        todo = set(self.agreement.stale_waits(wait))
        ex = self.executor
        for p in range(self.n):
            root = SlotId(p, ex.exp[p])
            blocked = (root not in ex.committed
                       and any(s.coordinator == p for s in ex.committed))
            if not blocked:
                self._root_since.pop(p, None)
                continue
            since = self._root_since.get(p)
            if since is None or since[0] != root:
                self._root_since[p] = (root, now)
            elif now - since[1] >= wait:
                todo.add(root)
        for s in sorted(todo):
            if now - self._query_sent.get(s, -1e18) >= wait:
                self._query_sent[s] = now
                self.stats["catchup_queries"] += 1
                self.agreement.query(s)
        if len(self._query_sent) > 4096:
            self._query_sent = {s: t for s, t in self._query_sent.items() if now - t < wait}

    # -- commit and execution -------------------------------------------------
    def on_commit(self, record):
        self.commit_paths[record.path] += 1
        if self.record_log:
            self.commit_log[record.slot] = record
        self.executor.ingest(record)
        self._run_executor()

    def _run_executor(self):
        if self._running:
            self._rerun = True
            return
        self._running = True
        try:
            while True:
                self._rerun = False
                for ev in self.executor.run():
                    self._on_exec_event(ev)
                if not self._rerun:
                    break
        finally:
            self._running = False

    def _on_exec_event(self, ev):
        if ev.kind == "exec":
            self.reply_slot[ev.client] = ev.slot
            self.pending.pop((ev.client, ev.timestamp), None)
            if self.record_log:
                self.exec_log.append((ev.slot, ev.client, ev.timestamp, ev.operation))
            self.stats["executed"] += 1
            if ev.unblock:
                self.stats["executed_unblock"] += 1
            self._reply(ev.slot, _Stub(ev.client, ev.timestamp), ev.result)
            if self.tracing:
                self._out.append(Trace({
                    "t": self._now, "actor": f"replica/{self.me}", "event": "execute",
                    "slot": [ev.slot.coordinator, ev.slot.counter],
                    "client": ev.client, "timestamp": ev.timestamp, "unblock": ev.unblock}))
        elif ev.kind == "dup":
            self.pending.pop((ev.client, ev.timestamp), None)
            self.stats["duplicates"] += 1

    def _reply(self, slot, req, result):
        msg = Reply(slot, self.me, req.client, req.timestamp, result)
        self._out.append(ToClient(req.client, self.sign(msg)))

    def _checkpoint_action(self, barrier):
        seq, h = self.checkpoints.take(barrier, self.app.snapshot())
        self.checkpoint_log.append((seq, barrier, h))
        self.note("checkpoint", SlotId(self.me, 0), h, seq)

    # -- checkpoint callbacks -------------------------------------------------
    def on_stable(self, seq, floor):
        self.agreement.gc(floor)
        self._drain()

    def send_checkpoint_proof(self, dest):
        for v in self.checkpoints.proof_messages():
            self.send(dest, v)

    def install_snapshot(self, seq, barrier, snapshot) -> bool:
        ex = self.executor
        for p in range(self.n):
            top = max([ex.exp[p] - 1, *ex.done[p]])
            if top > barrier.get(p):
                return False
        app = type(self.app).restore(snapshot)
        self.app = app
        ex.app = app
        ex.apply_floor(barrier)
        for key in [k for k in self.pending if app.is_duplicate(_Stub(*k))]:
            del self.pending[key]
        self.note("install", SlotId(self.me, 0), b"", seq)
        self._run_executor()
        return True


class _Stub:
    __slots__ = ("client", "timestamp")

    def __init__(self, client, timestamp):
        self.client = client
        self.timestamp = timestamp
