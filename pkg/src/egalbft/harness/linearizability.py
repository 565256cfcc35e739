"""Single-register linearizability checking of per-key client histories.

Each key is checked independently with the Wing-Gong search (with Lowe's
memoisation of (linearized set, register value) pairs). An operation whose
reply never arrived is treated as possibly taking effect at any time after
its invocation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..kv import READ, WRITE, Value, decode_result, parse_op


@dataclass(frozen=True)
class Operation:
    client: int
    key: bytes
    kind: int
    value: bytes = None          # written value, or value returned by a read (None = absent)
    call: float = 0.0
    ret: float = math.inf


@dataclass
class Verdict:
    ok: bool = True
    keys: int = 0
    operations: int = 0
    violations: list = field(default_factory=list)


def history_from_samples(samples, pending=()):
    """Turn accepted-request samples (and optional in-flight writes given as
    (client, operation, submitted)) into Operations."""
    out = []
    for s in samples:
        op = parse_op(s["operation"])
        if op.kind == WRITE:
            out.append(Operation(s["client"], op.key, WRITE, op.value, s["submitted"], s["accepted"]))
        else:
            res = decode_result(s["result"])
            val = res.value if isinstance(res, Value) else None
            out.append(Operation(s["client"], op.key, READ, val, s["submitted"], s["accepted"]))
    for client, operation, submitted in pending:
        op = parse_op(operation)
        if op.kind == WRITE:
            out.append(Operation(client, op.key, WRITE, op.value, submitted, math.inf))
    return out


def check_linearizability(history, initial=None) -> Verdict:
    by_key = {}
    for op in history:
        by_key.setdefault(op.key, []).append(op)
    v = Verdict(keys=len(by_key), operations=len(history))
    for key in sorted(by_key):
        bad = _check_key(by_key[key], initial)
        if bad is not None:
            v.ok = False
            v.violations.append({"key": key, "operation": bad})
    return v


def _check_key(ops, initial):
    """None if linearizable, else the operation whose return could not be
    justified."""
    # Event list: calls before returns at equal times, so touching
    # operations count as concurrent.
    events = []
    for i, op in enumerate(ops):
        events.append((op.call, 0, i))
        events.append((op.ret, 1, i))
    events.sort()
    m = len(events)
    kind = [e[1] for e in events]
    opid = [e[2] for e in events]
    match = [0] * m                  # call event -> its return event
    where = {}
    for j, (_, k, i) in enumerate(events):
        if k == 0:
            where[i] = j
        else:
            match[where[i]] = j
    head = m                         # sentinel before the first event
    nxt = [j + 1 if j + 1 < m else None for j in range(m)] + [0 if m else None]
    prv = [head] + list(range(m - 1)) + [None]

    def unlink(j):
        p, q = prv[j], nxt[j]
        nxt[p] = q
        if q is not None:
            prv[q] = p

    def relink(j):
        p, q = prv[j], nxt[j]
        nxt[p] = j
        if q is not None:
            prv[q] = j

    state = initial
    linearized = 0
    cache = set()
    stack = []
    entry = nxt[head]
    while nxt[head] is not None:
        if entry is None:
            return None
        i = opid[entry]
        if kind[entry] == 0:
            op = ops[i]
            if op.kind == WRITE:
                ok, new = True, op.value
            else:
                ok, new = op.value == state, state
            mask = linearized | (1 << i)
            if ok and (mask, new) not in cache:
                cache.add((mask, new))
                stack.append((entry, state))
                state = new
                linearized = mask
                unlink(entry)
                unlink(match[entry])
                entry = nxt[head]
            else:
                entry = nxt[entry]
        else:
            if ops[i].ret == math.inf:
                return None          # every completed operation is linearized
            if not stack:
                return ops[i]
            j, state = stack.pop()
            linearized &= ~(1 << opid[j])
            relink(match[j])
            relink(j)
            entry = nxt[j]
    return None
