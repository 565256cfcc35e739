"""Per-slot agreement: fast path, reconciliation, view change and recovery.

The Agreement object is driven by its host (the replica), which supplies
signing, verification, message sending, timers and the commit sink.
"""
from __future__ import annotations

import enum
from collections import Counter

from .config import view_coordinator
from .core import (
    CP_HASH, CP_REQUEST, EMPTY_DEPS, NOOP, Batch, CertKind, Certificate,
    CheckpointRequest, ClientRequest, Commit, CommitRecord, DepCommit,
    DepPropose, DepSet, DepVerify, Exec, NewView, NoOp, Prepare, Propose,
    QueryExec, SlotId, ViewChange, dv_set_hash, request_hash,
)


class Step(enum.IntEnum):
    INIT = 0
    PROPOSED = 1
    FP_VERIFIED = 2
    FP_COMMITTED = 3
    RP_VERIFIED = 4
    RP_PREPARED = 5
    RP_COMMITTED = 6
    VIEW_CHANGE = 7
    COMMITTED = 8


class ProtocolViolation(AssertionError):
    """A correct replica was about to break a send-side invariant."""


# -- pure helpers -------------------------------------------------------------

def fpc_rule_ok(dp_deps: DepSet, dv_deps, f: int) -> bool:
    """Every entry not already implied by the DepPropose deps must be
    reported, exactly, by at least f+1 DepVerifys."""
    counts = Counter()
    for d in dv_deps:
        for p, c in d.items:
            if c > dp_deps.get(p):
                counts[(p, c)] += 1
    return all(v >= f + 1 for v in counts.values())


def union_deps(dp, dvs) -> DepSet:
    deps = dp.msg.deps if dp is not None else EMPTY_DEPS
    for dv in dvs:
        deps = deps.merge(dv.msg.deps)
    return deps


class Decision:
    """A (dp, request, dv-set) triple agreed on in one view."""

    __slots__ = ("view", "dp", "request", "dvs", "hash", "_deps")

    def __init__(self, view, dp, request, dvs):
        self.view = view
        self.dp = dp
        self.request = request
        self.dvs = tuple(sorted(dvs, key=lambda s: s.msg.sender))
        self.hash = dv_set_hash(self.dvs)
        self._deps = None

    @property
    def deps(self) -> DepSet:
        if self._deps is None:
            self._deps = union_deps(self.dp, self.dvs)
        return self._deps


class ConflictIndex:
    """Latest conflicting slot per replica, over all known requests.

    Uses the application's footprint(req) -> [(token, is_write)] so lookups
    do not scan every known request.
    """

    def __init__(self, n: int, footprint):
        self.n = n
        self.footprint = footprint
        self.writers = {}
        self.readers = {}
        self.all_max = [-1] * n
        self.cp_max = [-1] * n
        self.added = set()

    def add(self, slot: SlotId, req):
        if req is None or slot in self.added:
            return
        self.added.add(slot)
        if isinstance(req, NoOp):
            return
        p, c = slot.coordinator, slot.counter
        if c > self.all_max[p]:
            self.all_max[p] = c
        if isinstance(req, CheckpointRequest):
            if c > self.cp_max[p]:
                self.cp_max[p] = c
            return
        for tok, w in self.footprint(req):
            table = self.writers if w else self.readers
            row = table.get(tok)
            if row is None:
                row = table[tok] = {}
            if c > row.get(p, -1):
                row[p] = c

    def deps_for(self, req) -> DepSet:
        if isinstance(req, CheckpointRequest):
            return DepSet(enumerate(self.all_max))
        out = {p: c for p, c in enumerate(self.cp_max) if c >= 0}
        for tok, w in self.footprint(req):
            rows = [self.writers.get(tok)]
            if w:
                rows.append(self.readers.get(tok))
            for row in rows:
                if row:
                    for p, c in row.items():
                        if c > out.get(p, -1):
                            out[p] = c
        return DepSet(out)

    def prune(self, floor: DepSet):
        self.added = {s for s in self.added if not floor.covers(s)}
        for table in (self.writers, self.readers):
            for tok in [t for t, row in table.items()
                        if all(c <= floor.get(p) for p, c in row.items())]:
                del table[tok]


class SlotState:
    def __init__(self, slot: SlotId):
        self.slot = slot
        self.step = Step.INIT
        self.view = -1
        self.dp = None              # accepted DepPropose (Signed)
        self.request = None         # request proposed in this slot, once known
        self.dp_known = False       # the DepPropose passed the wait gate
        self.pending_dp = None      # (dp, request) waiting on the gate
        self.dv_seen = set()        # senders of any DepVerify for this slot
        self.dv_early = {}          # DepVerifys that arrived before the DepPropose
        self.dv_waiting = {}
        self.dvs = {}               # accepted DepVerifys from fast-quorum members
        self.decisions = {}         # view -> Decision
        self.dep_commits = {}       # sender -> dv hash
        self.prepares = {}          # view -> {sender: Signed}
        self.commits = {}           # view -> {sender: Signed}
        self.vcs = {}               # view -> {sender: Signed}
        self.vc_senders = set()
        self.known_views = {}
        self.cert = Certificate()
        self.aux = None
        self.own = {}               # message kind -> latest own Signed
        self.own_deps = None
        self.sent_dv = False
        self.sent_depcommit = False
        self.sent_prepare = set()
        self.sent_commit = set()
        self.vc_sent = -1           # highest view this replica sent a ViewChange for
        self.nv_sent = set()
        self.nv_pending = set()
        self.nv_installed = set()
        self.execs = {}             # (h(r), deps) -> {sender: Exec}
        self.exec_answered = set()
        self.committed = False
        self.record = None
        self.timers = set()
        self.queried = False
        self.gone = False


class _Waiter:
    __slots__ = ("pending", "callback")

    def __init__(self, pending, callback):
        self.pending = pending
        self.callback = callback


class Agreement:
    def __init__(self, cfg, host, footprint):
        self.cfg = cfg
        self.host = host
        self.me = cfg.id
        self.n = cfg.n
        self.f = cfg.f
        self.q = 2 * cfg.f + 1
        self.slots: dict = {}
        self.index = ConflictIndex(cfg.n, footprint)
        self.waiting: dict = {}
        self.wait_since: dict = {}
        self.floor = EMPTY_DEPS
        self.next_counter = 0
        self.fast_quorum = cfg.preferred_fast_quorum()
        self.own_requests: dict = {}
        self.t = cfg.timeouts()
        self.stats = Counter()
        self.live = [0] * cfg.n          # retained slot states per coordinator
        self.high_water = [0] * cfg.n

    # -- small utilities ------------------------------------------------------
    def _slot(self, slot: SlotId) -> SlotState:
        st = self.slots.get(slot)
        if st is None:
            st = self.slots[slot] = SlotState(slot)
            p = slot.coordinator
            self.live[p] += 1
            if self.live[p] > self.high_water[p]:
                self.high_water[p] = self.live[p]
        return st

    def in_window(self, slot: SlotId) -> bool:
        base = self.floor.get(slot.coordinator)
        if slot.counter <= base:
            return False
        if self.cfg.checkpointing and slot.counter > base + self.cfg.window:
            return False
        return True

    def retained(self, coordinator: int) -> int:
        return self.live[coordinator]

    def _arm(self, st: SlotState, key, delay):
        st.timers.add(key)
        self.host.set_timer(key, delay)

    def _disarm(self, st: SlotState, key):
        if key in st.timers:
            st.timers.discard(key)
            self.host.cancel_timer(key)

    def _send(self, st: SlotState, kind, msg, dests=None):
        signed = self.host.sign(msg)
        st.own[kind] = signed
        if dests is None:
            self.host.broadcast(signed)
        else:
            for d in dests:
                self.host.send(d, signed)
        return signed

    def request_ok(self, slot: SlotId, req) -> bool:
        """Validity of a request proposed for slot (checkpoint rule included)."""
        cp_slot = self.cfg.is_checkpoint_slot(slot.counter)
        if isinstance(req, CheckpointRequest):
            return cp_slot
        if cp_slot:
            return False
        if isinstance(req, ClientRequest):
            return self.host.verify_request(req)
        if isinstance(req, Batch):
            return all(isinstance(m, ClientRequest) and self.host.verify_request(m)
                       for m in req.members)
        return False

    def decided_request_ok(self, slot: SlotId, req) -> bool:
        if isinstance(req, NoOp):
            return not self.cfg.is_checkpoint_slot(slot.counter)
        return self.request_ok(slot, req)

    def valid_fast_quorum(self, fq, coordinator: int) -> bool:
        return (len(fq) == 2 * self.f and len(set(fq)) == len(fq)
                and all(0 <= r < self.n and r != coordinator for r in fq))

    # -- wait gate ------------------------------------------------------------
    def admitted(self, s: SlotId) -> bool:
        if s.counter <= self.floor.get(s.coordinator):
            return True
        st = self.slots.get(s)
        if st is None:
            return False
        return (st.dp_known or st.committed or len(st.dv_seen) > self.f
                or len(st.vc_senders) > self.f or st.vc_sent >= 0)

    def wait(self, deps, callback):
        pending = {s for s in deps if not self.admitted(s)}
        if not pending:
            callback()
            return
        w = _Waiter(pending, callback)
        now = self.host.now
        for s in pending:
            self.waiting.setdefault(s, []).append(w)
            self.wait_since.setdefault(s, now)

    def _admitted_changed(self, s: SlotId):
        if s not in self.waiting or not self.admitted(s):
            return
        ws = self.waiting.pop(s)
        self.wait_since.pop(s, None)
        for w in ws:
            w.pending.discard(s)
            if not w.pending:
                w.callback()

    def stale_waits(self, older_than: float):
        now = self.host.now
        return sorted(s for s, t in self.wait_since.items() if now - t >= older_than)

    # -- coordinator ----------------------------------------------------------
    def can_propose(self) -> bool:
        if not self.cfg.checkpointing:
            return True
        limit = self.floor.get(self.me) + self.cfg.window
        c = self.next_counter
        if self.cfg.is_checkpoint_slot(c):
            c += 1
        return c <= limit

    def propose_request(self, req):
        """Propose req in the next free slot; checkpoint requests are inserted
        first whenever the counter lands on a checkpoint slot."""
        if not self.can_propose():
            return None
        if self.cfg.is_checkpoint_slot(self.next_counter):
            self._propose(CP_REQUEST)
        return self._propose(req)

    def _propose(self, req) -> SlotId:
        slot = SlotId(self.me, self.next_counter)
        self.next_counter += 1
        deps = self.index.deps_for(req).merge(self.floor)
        beh = self.host.behavior
        if beh is not None:
            deps = beh.dp_deps(self.host, slot, deps)
        msg = DepPropose(slot, self.me, request_hash(req), deps, self.fast_quorum)
        st = self._slot(slot)
        dp = self.host.sign(msg)
        st.own["dp"] = dp
        st.dp = dp
        st.request = req
        st.dp_known = True
        st.own_deps = deps
        st.step = Step.PROPOSED
        self.index.add(slot, req)
        if not isinstance(req, CheckpointRequest):
            self.own_requests[slot] = req
        self.host.broadcast(Propose(dp, req))
        self.host.note("propose", slot, dp.digest)
        self._arm(st, ("propose", slot), self.t["propose"])
        self._arm(st, ("commit", slot), self.t["commit"])
        self._admitted_changed(slot)
        return slot

    def permute_fast_quorum(self):
        cycle = self.cfg.fast_quorum_cycle(self.me)
        i = cycle.index(tuple(self.fast_quorum)) if tuple(self.fast_quorum) in cycle else -1
        self.fast_quorum = cycle[(i + 1) % len(cycle)]
        return self.fast_quorum

    # -- DepPropose ---------------------------------------------------------
    def on_propose(self, env: Propose):
        dp = env.dp
        m = dp.msg
        if not isinstance(m, DepPropose) or not self.host.verify(dp):
            return
        slot = m.slot
        if m.coordinator != slot.coordinator or not self.in_window(slot):
            return
        if not self.valid_fast_quorum(m.fast_quorum, slot.coordinator):
            return
        if self.cfg.is_checkpoint_slot(slot.counter) != (m.request_hash == CP_HASH):
            return
        req = env.request
        if req is not None:
            if request_hash(req) != m.request_hash or not self.request_ok(slot, req):
                return
        elif m.request_hash == CP_HASH:
            req = CP_REQUEST
        st = self._slot(slot)
        if st.dp is not None:
            if st.dp.digest == dp.digest and st.request is None and req is not None:
                self._learn_request(st, req)
            return
        if st.pending_dp is not None:
            if st.pending_dp[0].digest == dp.digest and st.pending_dp[1] is None:
                st.pending_dp = (dp, req)
            return
        st.pending_dp = (dp, req)
        deps = m.deps.slots()
        if slot.counter > 0:
            deps.append(SlotId(slot.coordinator, slot.counter - 1))
        self.wait(deps, lambda: self._accept_dp(st))

    def _accept_dp(self, st: SlotState):
        if st.gone or st.pending_dp is None:
            return
        dp, req = st.pending_dp
        st.pending_dp = None
        st.dp = dp
        st.dp_known = True
        if st.step == Step.INIT:
            st.step = Step.PROPOSED
        self._admitted_changed(st.slot)
        if st.committed:
            if req is not None and st.request is None:
                st.request = req
            return
        if st.view == -1:
            if len(st.dvs) < 2 * self.f:
                self._arm(st, ("propose", st.slot), self.t["propose"])
            if ("commit", st.slot) not in st.timers:
                self._arm(st, ("commit", st.slot), self.t["commit"])
        if req is not None:
            self._learn_request(st, req)
        for dv in list(st.dv_early.values()):
            self._consider_dv(st, dv)
        st.dv_early.clear()

    def _learn_request(self, st: SlotState, req):
        st.request = req
        if st.view == -1 and self.me in st.dp.msg.fast_quorum:
            self._send_dv(st)
        self.index.add(st.slot, req)
        self._try_verify(st)

    def _send_dv(self, st: SlotState):
        if st.sent_dv or st.committed:
            return
        beh = self.host.behavior
        if beh is not None and beh.withhold_dv(self.host, st.slot):
            st.sent_dv = True
            return
        deps = self.index.deps_for(st.request).merge(self.floor)
        if beh is not None:
            deps = beh.dv_deps(self.host, st.slot, deps)
        st.sent_dv = True
        st.own_deps = deps
        dv = self._send(st, "dv", DepVerify(st.slot, self.me, st.dp.digest, deps))
        self.host.note("dv", st.slot, dv.digest)
        st.dv_seen.add(self.me)
        self._store_dv(st, dv)

    # -- DepVerify --------------------------------------------------------------
    def on_dep_verify(self, dv):
        m = dv.msg
        if not self.host.verify(dv) or not self.in_window(m.slot):
            return
        st = self._slot(m.slot)
        if m.sender in st.dv_seen:
            return
        st.dv_seen.add(m.sender)
        if len(st.dv_seen) == self.f + 1:
            self._admitted_changed(st.slot)
            if st.view == -1 and not st.committed and ("commit", st.slot) not in st.timers:
                self._arm(st, ("commit", st.slot), self.t["commit"])
        if st.committed or st.view > -1:
            return
        if st.dp is None:
            st.dv_early[m.sender] = dv
            return
        self._consider_dv(st, dv)

    def _consider_dv(self, st: SlotState, dv):
        m = dv.msg
        if m.dp_hash != st.dp.digest or m.sender not in st.dp.msg.fast_quorum:
            return
        if m.sender in st.dvs or m.sender in st.dv_waiting:
            return
        st.dv_waiting[m.sender] = dv
        self.wait(m.deps.slots(), lambda: self._store_dv(st, dv))

    def _store_dv(self, st: SlotState, dv):
        st.dv_waiting.pop(dv.msg.sender, None)
        if st.gone or st.committed or st.view > -1:
            return
        st.dvs[dv.msg.sender] = dv
        if len(st.dvs) == 2 * self.f:
            self._disarm(st, ("propose", st.slot))
            self._try_verify(st)

    def _try_verify(self, st: SlotState):
        if (st.committed or st.view != -1 or -1 in st.decisions or st.request is None
                or len(st.dvs) < 2 * self.f):
            return
        dec = Decision(-1, st.dp, st.request, st.dvs.values())
        st.decisions[-1] = dec
        if fpc_rule_ok(st.dp.msg.deps, [d.msg.deps for d in dec.dvs], self.f):
            st.step = Step.FP_VERIFIED
            st.cert = Certificate(CertKind.FPC, -1, st.dp, st.request, dec.dvs)
            if -1 in st.sent_prepare:
                self.stats["exclusion_violations"] += 1
                raise ProtocolViolation("DepCommit after Prepare in view -1")
            st.sent_depcommit = True
            st.dep_commits[self.me] = dec.hash
            dc = self._send(st, "dc", DepCommit(st.slot, self.me, dec.hash))
            self.host.note("depcommit", st.slot, dc.digest)
        else:
            self.stats["fpc_rule_failed"] += 1
            self._send_prepare(st, -1)
        self._check_dep_commits(st)
        self._check_prepares(st)
        self._check_commits(st)

    # -- DepCommit ------------------------------------------------------------
    def on_dep_commit(self, s):
        m = s.msg
        if not self.host.verify(s) or not self.in_window(m.slot):
            return
        st = self._slot(m.slot)
        if m.sender in st.dep_commits:
            return
        st.dep_commits[m.sender] = m.dv_hash
        self._check_dep_commits(st)

    def _check_dep_commits(self, st: SlotState):
        if st.committed or len(st.dep_commits) < self.q:
            return
        tally = Counter(st.dep_commits.values())
        h, count = tally.most_common(1)[0]
        if count < self.q:
            return
        dec = st.decisions.get(-1)
        if dec is not None and dec.hash == h:
            self._commit(st, dec, "fast")
        elif not st.queried:
            self._query(st)

    # -- reconciliation -------------------------------------------------------
    def _send_prepare(self, st: SlotState, view: int):
        if view in st.sent_prepare:
            raise ProtocolViolation("second Prepare in one view")
        if view == -1 and st.sent_depcommit:
            self.stats["exclusion_violations"] += 1
            raise ProtocolViolation("Prepare after DepCommit in view -1")
        dec = st.decisions[view]
        st.sent_prepare.add(view)
        if view == -1:
            st.step = Step.RP_VERIFIED
        p = self._send(st, "prepare", Prepare(view, st.slot, self.me, dec.hash))
        st.prepares.setdefault(view, {})[self.me] = p
        self.host.note("prepare", st.slot, p.digest, view)

    def on_prepare(self, s):
        m = s.msg
        if not self.host.verify(s) or not self.in_window(m.slot):
            return
        st = self._slot(m.slot)
        if m.view < st.view:
            return
        bucket = st.prepares.setdefault(m.view, {})
        if m.sender in bucket:
            return
        bucket[m.sender] = s
        self._check_prepares(st)

    def _check_prepares(self, st: SlotState):
        v = st.view
        dec = st.decisions.get(v)
        if st.committed or dec is None or v in st.sent_commit:
            return
        matching = [p for p in st.prepares.get(v, {}).values() if p.msg.dv_hash == dec.hash]
        if len(matching) < self.q:
            return
        st.step = Step.RP_PREPARED
        if st.cert.kind != CertKind.RPC or st.cert.view < v:
            prepares = tuple(sorted(matching, key=lambda p: p.msg.sender)[: self.q])
            st.cert = Certificate(CertKind.RPC, v, dec.dp, dec.request, dec.dvs, prepares)
        st.sent_commit.add(v)
        c = self._send(st, "commit", Commit(v, st.slot, self.me, dec.hash))
        st.commits.setdefault(v, {})[self.me] = c
        self._check_commits(st)

    def on_commit(self, s):
        m = s.msg
        if not self.host.verify(s) or not self.in_window(m.slot):
            return
        st = self._slot(m.slot)
        bucket = st.commits.setdefault(m.view, {})
        if m.sender in bucket:
            return
        bucket[m.sender] = s
        self._check_commits(st)

    def _check_commits(self, st: SlotState):
        # A commit quorum from an earlier view still decides the slot: every
        # later view is bound to select the same decision.
        if st.committed:
            return
        for v in sorted(st.commits, reverse=True):
            dec = st.decisions.get(v)
            if dec is None:
                continue
            n = sum(1 for c in st.commits[v].values() if c.msg.dv_hash == dec.hash)
            if n >= self.q:
                self._commit(st, dec, "reconcile" if v == -1 else "viewchange")
                return

    # -- commit ---------------------------------------------------------------
    def _commit(self, st: SlotState, dec: Decision, path: str):
        self._finish_commit(st, dec.request, dec.deps, dec.dp, path)

    def _finish_commit(self, st, request, deps, dp, path):
        if st.committed:
            return
        st.committed = True
        st.request = request
        if dp is not None and st.dp is None:
            st.dp = dp
        st.record = CommitRecord(st.slot, request, deps, path)
        st.step = Step.COMMITTED
        for key in list(st.timers):
            self._disarm(st, key)
        self.index.add(st.slot, request)
        self._admitted_changed(st.slot)
        self.stats["commit_" + path] += 1
        self.host.note("commit", st.slot, request_hash(request), path)
        self.host.on_commit(st.record)
        orig = self.own_requests.pop(st.slot, None)
        if orig is not None and isinstance(request, NoOp):
            # Several in-flight slots may fail with the same quorum; rotate once.
            used = st.dp.msg.fast_quorum if st.dp is not None else None
            if used is None or tuple(used) == tuple(self.fast_quorum):
                self.permute_fast_quorum()
            self.host.note("noop-own", st.slot, b"", self.fast_quorum)
            self.host.repropose(orig)

    # -- view change ----------------------------------------------------------
    def start_view_change(self, st: SlotState, new_view: int):
        if st.committed or st.gone or new_view <= st.vc_sent or new_view < st.view:
            return
        if st.vc_sent >= new_view:
            raise ProtocolViolation("second ViewChange in one view")
        cert = st.cert
        if cert.kind == CertKind.NONE and self.cfg.is_checkpoint_slot(st.slot.counter):
            cert = Certificate(CertKind.CRC, -1, aux=self._aux_dv(st))
        st.view = new_view
        st.step = Step.VIEW_CHANGE
        st.vc_sent = new_view
        st.known_views[self.me] = new_view
        self._disarm(st, ("commit", st.slot))
        if ("propose", st.slot) in st.timers:
            self._disarm(st, ("propose", st.slot))
            if st.dp is not None:
                self.host.broadcast(Propose(st.dp, None))
        vc = self._send(st, "vc", ViewChange(new_view, st.slot, self.me, cert))
        st.vcs.setdefault(new_view, {})[self.me] = vc
        st.vc_senders.add(self.me)
        self.stats["view_changes"] += 1
        self.host.note("viewchange", st.slot, vc.digest, new_view)
        self._arm(st, ("qe", st.slot), self.t["query_exec"])
        self._admitted_changed(st.slot)
        self._check_vcs(st)

    def _aux_dv(self, st: SlotState):
        if st.aux is None:
            deps = st.own_deps
            if deps is None:
                deps = self.index.deps_for(CP_REQUEST).merge(self.floor)
            self.index.add(st.slot, CP_REQUEST)
            st.aux = self.host.sign(DepVerify(st.slot, self.me, CP_HASH, deps))
        return st.aux

    def on_view_change(self, s):
        m = s.msg
        if not self.host.verify(s) or not self.in_window(m.slot):
            return
        st = self._slot(m.slot)
        if st.committed:
            self._answer_exec(st, m.sender)
            self._resend_votes(st, m.sender)
            return
        if not self.valid_certificate(m.cert, m.slot, m.sender):
            self.stats["bad_certificate"] += 1
            return
        bucket = st.vcs.setdefault(m.view, {})
        if m.sender in bucket:
            return
        bucket[m.sender] = s
        if m.view > st.known_views.get(m.sender, -2):
            st.known_views[m.sender] = m.view
        if m.sender not in st.vc_senders:
            st.vc_senders.add(m.sender)
            if len(st.vc_senders) == self.f + 1:
                self._admitted_changed(st.slot)
        higher = sorted((v for v in st.known_views.values() if v > st.view), reverse=True)
        if len(higher) > self.f:
            self.start_view_change(st, higher[self.f])
        self._check_vcs(st)

    def _check_vcs(self, st: SlotState):
        v = st.view
        if v < 0 or st.committed:
            return
        if len(st.vcs.get(v, ())) < self.q:
            return
        if v not in st.nv_installed and ("vc", st.slot, v) not in st.timers:
            self._disarm(st, ("qe", st.slot))
            self._arm(st, ("vc", st.slot, v), self.t["view_change"])
        if view_coordinator(st.slot.coordinator, v, self.n) == self.me and v not in st.nv_sent:
            self._try_new_view(st, v)

    def _cert_rank(self, vc):
        c = vc.msg.cert
        order = {CertKind.RPC: 0, CertKind.FPC: 1, CertKind.CRC: 2, CertKind.NONE: 3}[c.kind]
        return (order, -c.view, vc.msg.sender)

    def _try_new_view(self, st: SlotState, v: int):
        if st.gone or st.committed or v != st.view or v in st.nv_sent:
            return
        cands = sorted(st.vcs.get(v, {}).values(), key=self._cert_rank)
        cp_slot = self.cfg.is_checkpoint_slot(st.slot.counter)
        if cp_slot:
            cands = [c for c in cands if c.msg.cert.kind != CertKind.NONE]
        if len(cands) < self.q:
            return
        best = cands[0].msg.cert.kind
        if best == CertKind.CRC:
            ok = [c for c in cands if all(self.admitted(d) for d in c.msg.cert.aux.msg.deps.slots())]
            if len(ok) < self.q:
                missing = {d for c in cands for d in c.msg.cert.aux.msg.deps.slots()
                           if not self.admitted(d)}
                self.wait(sorted(missing)[:1], lambda: self._try_new_view(st, v))
                return
            chosen = ok[: self.q]
        else:
            chosen = cands[: self.q]
        dp, req, dvs = select_decision([c.msg.cert for c in chosen], cp_slot)
        chosen = tuple(sorted(chosen, key=lambda c: c.msg.sender))
        nv = NewView(v, st.slot, self.me, dp, req, tuple(dvs), chosen)
        beh = self.host.behavior
        if beh is not None:
            nv = beh.new_view(self.host, nv)
        st.nv_sent.add(v)
        signed = self._send(st, "nv", nv)
        self.host.note("newview", st.slot, signed.digest, v)
        self.on_new_view(signed)

    def on_new_view(self, s):
        m = s.msg
        if not self.host.verify(s) or not self.in_window(m.slot) or m.view < 0:
            return
        if m.coordinator != view_coordinator(m.slot.coordinator, m.view, self.n):
            return
        st = self._slot(m.slot)
        if st.committed or m.view < st.view or m.view in st.nv_installed or m.view in st.nv_pending:
            return
        cp_slot = self.cfg.is_checkpoint_slot(m.slot.counter)
        senders = set()
        for vc in m.vcs:
            vm = vc.msg
            if (not isinstance(vm, ViewChange) or vm.slot != m.slot or vm.view != m.view
                    or vm.sender in senders or not self.host.verify(vc)
                    or not self.valid_certificate(vm.cert, vm.slot, vm.sender)
                    or (cp_slot and vm.cert.kind == CertKind.NONE)):
                self.stats["newview_rejected"] += 1
                return
            senders.add(vm.sender)
        if len(senders) < self.q:
            self.stats["newview_rejected"] += 1
            return
        dp, req, dvs = select_decision([vc.msg.cert for vc in m.vcs], cp_slot)
        same = ((dp is None and m.dp is None) or (dp is not None and m.dp is not None
                                                 and dp.digest == m.dp.digest))
        same = same and m.request is not None and request_hash(m.request) == request_hash(req)
        same = same and dv_set_hash(dvs) == dv_set_hash(m.dvs) and len(dvs) == len(m.dvs)
        if not same:
            self.stats["newview_rejected"] += 1
            self.host.note("newview-reject", m.slot, s.digest, m.view)
            return
        dec = Decision(m.view, m.dp, m.request, m.dvs)
        st.nv_pending.add(m.view)
        self.wait(dec.deps.slots(), lambda: self._install(st, dec))

    def _install(self, st: SlotState, dec: Decision):
        v = dec.view
        st.nv_pending.discard(v)
        if st.gone or st.committed or v < st.view or v in st.nv_installed:
            return
        st.view = v
        st.decisions[v] = dec
        st.nv_installed.add(v)
        st.step = Step.RP_VERIFIED
        self._disarm(st, ("vc", st.slot, v))
        self._disarm(st, ("qe", st.slot))
        self._arm(st, ("commit", st.slot), self.t["vc_commit"])
        if st.request is None and not isinstance(dec.request, NoOp):
            st.request = dec.request
        self.index.add(st.slot, dec.request)
        if v not in st.sent_prepare:
            self._send_prepare(st, v)
        self._check_prepares(st)
        self._check_commits(st)

    # -- certificates ---------------------------------------------------------
    def _valid_dp(self, dp, slot):
        m = dp.msg
        return (isinstance(m, DepPropose) and m.slot == slot and m.coordinator == slot.coordinator
                and self.valid_fast_quorum(m.fast_quorum, slot.coordinator) and self.host.verify(dp))

    def _valid_dvs(self, dvs, slot, dp_hash, members, count):
        senders = set()
        for dv in dvs:
            m = dv.msg
            if (not isinstance(m, DepVerify) or m.slot != slot or m.dp_hash != dp_hash
                    or m.sender in senders or (members is not None and m.sender not in members)
                    or not self.host.verify(dv)):
                return False
            senders.add(m.sender)
        return len(senders) == count

    def _valid_prepares(self, prepares, slot, view, h):
        senders = set()
        for p in prepares:
            m = p.msg
            if (not isinstance(m, Prepare) or m.slot != slot or m.view != view or m.dv_hash != h
                    or m.sender in senders or not self.host.verify(p)):
                return False
            senders.add(m.sender)
        return len(senders) >= self.q

    def valid_certificate(self, cert: Certificate, slot: SlotId, sender: int) -> bool:
        """Pure check of a ViewChange certificate; same answer on every replica."""
        kind = cert.kind
        if kind == CertKind.NONE:
            return cert.dp is None and cert.request is None and not cert.dvs and cert.aux is None
        if kind == CertKind.CRC:
            a = cert.aux
            return (a is not None and self.cfg.is_checkpoint_slot(slot.counter)
                    and isinstance(a.msg, DepVerify) and a.msg.slot == slot
                    and a.msg.sender == sender and a.msg.dp_hash == CP_HASH and self.host.verify(a))
        if cert.request is None:
            return False
        if cert.dp is not None:
            dp = cert.dp
            if not self._valid_dp(dp, slot) or request_hash(cert.request) != dp.msg.request_hash:
                return False
            if not self.request_ok(slot, cert.request):
                return False
            if not self._valid_dvs(cert.dvs, slot, dp.digest, dp.msg.fast_quorum, 2 * self.f):
                return False
            if kind == CertKind.FPC:
                return cert.view == -1 and not cert.prepares and fpc_rule_ok(
                    dp.msg.deps, [d.msg.deps for d in cert.dvs], self.f)
        elif kind == CertKind.RPC:
            if isinstance(cert.request, NoOp):
                if cert.dvs or self.cfg.is_checkpoint_slot(slot.counter):
                    return False
            elif isinstance(cert.request, CheckpointRequest):
                if not self.cfg.is_checkpoint_slot(slot.counter):
                    return False
                if not self._valid_dvs(cert.dvs, slot, CP_HASH, None, len(cert.dvs)) or len(cert.dvs) < self.q:
                    return False
            else:
                return False
        else:
            return False
        if kind != CertKind.RPC:
            return False
        return self._valid_prepares(cert.prepares, slot, cert.view, dv_set_hash(cert.dvs))

    # -- recovery -------------------------------------------------------------
    def _query(self, st: SlotState):
        st.queried = True
        self.host.broadcast(self.host.sign(QueryExec(st.slot, self.me)))

    def query(self, slot: SlotId):
        self.host.broadcast(self.host.sign(QueryExec(slot, self.me)))

    def _answer_exec(self, st: SlotState, dest: int):
        if dest in st.exec_answered or dest == self.me:
            return
        st.exec_answered.add(dest)
        rec = st.record
        dp = st.dp if rec.request is not NOOP and not isinstance(rec.request, NoOp) else None
        self.host.send(dest, self.host.sign(Exec(st.slot, self.me, dp, rec.request, rec.deps)))

    def on_query_exec(self, s):
        m = s.msg
        if not self.host.verify(s):
            return
        if m.slot.counter <= self.floor.get(m.slot.coordinator):
            self.host.send_checkpoint_proof(m.sender)
            return
        st = self.slots.get(m.slot)
        if st is not None and st.committed:
            st.exec_answered.discard(m.sender)
            self._answer_exec(st, m.sender)
            self._resend_votes(st, m.sender)

    def _resend_votes(self, st: SlotState, dest: int):
        """Hand a lagging peer this replica's own commit-phase votes; a lost
        vote otherwise strands peers whose view coordinator has crashed."""
        for kind in ("dc", "commit"):
            s = st.own.get(kind)
            if s is not None and dest != self.me:
                self.host.send(dest, s)

    def on_exec(self, s):
        m = s.msg
        if not self.host.verify(s) or not self.in_window(m.slot):
            return
        st = self._slot(m.slot)
        if st.committed:
            return
        if not self.decided_request_ok(m.slot, m.request):
            return
        key = (request_hash(m.request), m.deps)
        bucket = st.execs.setdefault(key, {})
        bucket[m.sender] = s
        if len(bucket) > self.f:
            self._finish_commit(st, m.request, m.deps, m.dp, "exec")

    # -- timers ---------------------------------------------------------------
    def on_timer(self, key):
        kind, slot = key[0], key[1]
        st = self.slots.get(slot)
        if st is None or key not in st.timers:
            return
        st.timers.discard(key)
        if st.committed:
            return
        if kind == "propose":
            if len(st.dvs) < 2 * self.f and st.dp is not None:
                self.stats["propose_rebroadcast"] += 1
                self.host.broadcast(Propose(st.dp, None))
        elif kind == "commit":
            self.start_view_change(st, st.view + 1)
        elif kind == "vc":
            if st.view == key[2] and key[2] not in st.nv_installed:
                self.start_view_change(st, key[2] + 1)
        elif kind == "qe":
            self._query(st)
            self._arm(st, ("qe", slot), self.t["query_exec"])

    def retransmit(self):
        """Re-send this replica's latest messages for slots still open."""
        for slot, st in sorted(self.slots.items()):
            if st.committed:
                continue
            for kind in ("dp", "dv", "dc", "prepare", "commit", "vc", "nv"):
                s = st.own.get(kind)
                if s is None:
                    continue
                if kind == "dp":
                    if st.view == -1:
                        self.host.broadcast(Propose(s, st.request))
                elif kind in ("dv", "dc") and st.view > -1:
                    continue
                else:
                    self.host.broadcast(s)

    # -- garbage collection ---------------------------------------------------
    def gc(self, floor: DepSet):
        self.floor = self.floor.merge(floor)
        for slot in [s for s in self.slots if self.floor.covers(s)]:
            st = self.slots.pop(slot)
            self.live[slot.coordinator] -= 1
            st.gone = True
            for key in list(st.timers):
                self._disarm(st, key)
            self.own_requests.pop(slot, None)
        self.index.prune(self.floor)
        if self.next_counter <= self.floor.get(self.me):
            self.next_counter = self.floor.get(self.me) + 1
        for s in [s for s in self.waiting if self.floor.covers(s)]:
            self._admitted_changed(s)


def select_decision(certs, cp_slot: bool):
    """The view-change selection rule: RPC (highest view) > FPC > CRC > NoOp."""
    rpcs = [c for c in certs if c.kind == CertKind.RPC]
    if rpcs:
        best = max(rpcs, key=lambda c: c.view)
        same = [c for c in rpcs if c.view == best.view]
        best = min(same, key=lambda c: dv_set_hash(c.dvs))
        return best.dp, best.request, best.dvs
    fpcs = [c for c in certs if c.kind == CertKind.FPC]
    if fpcs:
        best = min(fpcs, key=lambda c: dv_set_hash(c.dvs))
        return best.dp, best.request, best.dvs
    if cp_slot:
        auxes = [c.aux for c in certs if c.kind == CertKind.CRC]
        return None, CP_REQUEST, tuple(sorted(auxes, key=lambda a: a.msg.sender))
    return None, NOOP, ()
