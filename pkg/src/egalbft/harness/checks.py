"""Post-run correctness checks over the correct replicas of a simulation."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..core import client_requests
from ..kv import WRITE, parse_op


@dataclass
class Report:
    ok: bool = True
    problems: list = field(default_factory=list)

    def fail(self, kind, detail):
        self.ok = False
        self.problems.append({"check": kind, "detail": detail})

    def merge(self, other: "Report"):
        for p in other.problems:
            self.fail(p["check"], p["detail"])
        return self

    def __str__(self):
        if self.ok:
            return "pass"
        return "; ".join(f"{p['check']}: {p['detail']}" for p in self.problems[:5])


def correct_replicas(replicas):
    return [r for r in replicas if r.behavior is None]


def check_commit_records(replicas) -> Report:
    """Every slot committed by two correct replicas has identical content."""
    rep = Report()
    seen = {}
    for r in correct_replicas(replicas):
        for slot, rec in r.commit_log.items():
            enc = rec.encode()
            other = seen.get(slot)
            if other is None:
                seen[slot] = (r.me, enc)
            elif other[1] != enc:
                rep.fail("commit-records", f"slot {slot!r} differs between replica {other[0]} and {r.me}")
    if not rep.ok:
        rep.problems.sort(key=lambda p: p["detail"])
    return rep


def key_histories(replica):
    """key -> (write sequence, {read id: writes before it})."""
    out = {}
    for slot, client, ts, op in replica.exec_log:
        o = parse_op(op)
        writes, reads = out.setdefault(o.key, ([], {}))
        if o.kind == WRITE:
            writes.append((slot, client, ts))
        else:
            reads[(client, ts)] = len(writes)
    return out


def _common_order(a, b):
    sb = set(b)
    sa = set(a)
    return [x for x in a if x in sb] == [x for x in b if x in sa]


def check_write_orders(replicas) -> Report:
    """Conflicting requests execute in the same relative order everywhere.

    Replicas that installed a snapshot hold only a suffix of the log, so only
    the common part is compared.
    """
    rep = Report()
    rs = correct_replicas(replicas)
    hist = {r.me: key_histories(r) for r in rs if not r.checkpoints.installs}
    ids = sorted(hist)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            for key in sorted(set(hist[a]) & set(hist[b])):
                wa, ra = hist[a][key]
                wb, rb = hist[b][key]
                if not _common_order(wa, wb):
                    rep.fail("write-order", f"key {key!r}: replicas {a} and {b} disagree")
                    continue
                n = min(len(wa), len(wb))
                if wa[:n] != wb[:n]:
                    rep.fail("write-order", f"key {key!r}: replicas {a} and {b} diverge in prefix")
                for rid in set(ra) & set(rb):
                    if ra[rid] != rb[rid]:
                        rep.fail("read-position", f"key {key!r} read {rid}: {ra[rid]} vs {rb[rid]} writes before")
    lagging = [r for r in rs if r.checkpoints.installs]
    for r in lagging:
        mine = key_histories(r)
        for other in ids:
            for key in set(mine) & set(hist[other]):
                if not _common_order(mine[key][0], hist[other][key][0]):
                    rep.fail("write-order", f"key {key!r}: bootstrapped replica {r.me} disagrees with {other}")
    for r in rs:
        seq = {}
        for slot, client, ts, op in r.exec_log:
            seq.setdefault(client, []).append(ts)
        for client, tss in seq.items():
            if tss != sorted(tss):
                rep.fail("client-order", f"replica {r.me} executed client {client} out of order")
    return rep


def check_state_digests(replicas) -> Report:
    """Correct replicas that executed the same slots hold the same state."""
    rep = Report()
    groups = {}
    for r in correct_replicas(replicas):
        ex = r.executor
        point = (tuple(ex.exp), tuple(tuple(sorted(d)) for d in ex.done))
        groups.setdefault(point, []).append(r)
    for (exp, _), rs in groups.items():
        digests = {r.app.state_digest() for r in rs}
        if len(digests) > 1:
            rep.fail("state-digest", f"replicas {[r.me for r in rs]} at {list(exp)} hold different states")
    if len(groups) > 1:
        points = sorted(list(p[0]) for p in groups)
        rep.fail("drain", f"correct replicas stopped at different points: {points}")
    return rep


def check_checkpoints(replicas) -> Report:
    """Every correct replica recorded the same (seq, barrier, state hash)."""
    rep = Report()
    ref = {}
    for r in correct_replicas(replicas):
        for seq, barrier, h in r.checkpoint_log:
            prev = ref.get(seq)
            if prev is None:
                ref[seq] = (r.me, barrier, h)
            elif (prev[1], prev[2]) != (barrier, h):
                rep.fail("checkpoint", f"seq {seq}: replica {r.me} {barrier!r} vs replica {prev[0]} {prev[1]!r}")
    return rep


def check_exclusion(replicas) -> Report:
    rep = Report()
    for r in replicas:
        if r.behavior is None and r.agreement.stats["exclusion_violations"]:
            rep.fail("fp-rp-exclusion", f"replica {r.me}")
    return rep


def committed_requests(replicas):
    """slot -> CommitRecord over all correct replicas."""
    out = {}
    for r in correct_replicas(replicas):
        for slot, rec in r.commit_log.items():
            out.setdefault(slot, rec)
    return out


def check_linkage(replicas, footprint) -> Report:
    """Every pair of committed conflicting requests is linked by a dependency
    of one on the other (a dependency (p, c) also covers (p, j) for j < c)."""
    rep = Report()
    recs = committed_requests(replicas)
    by_token = {}
    for slot, rec in sorted(recs.items()):
        if not client_requests(rec.request):
            continue
        for tok, w in footprint(rec.request):
            by_token.setdefault(tok, []).append((slot, w))
    checked = set()
    for tok, entries in by_token.items():
        for i, (a, wa) in enumerate(entries):
            for b, wb in entries[i + 1:]:
                if not (wa or wb) or a == b or (a, b) in checked:
                    continue
                checked.add((a, b))
                if not (recs[a].deps.covers(b) or recs[b].deps.covers(a)):
                    rep.fail("linkage", f"{a!r} and {b!r} share {tok!r} but neither depends on the other")
    rep.pairs = len(checked)
    return rep


def check_all(result, footprint) -> Report:
    rs = result.replicas
    rep = Report()
    for chk in (check_commit_records, check_write_orders, check_state_digests,
                check_checkpoints, check_exclusion):
        rep.merge(chk(rs))
    link = check_linkage(rs, footprint)
    rep.merge(link)
    rep.pairs = link.pairs
    return rep
