"""Byzantine behaviours. Each one wraps an otherwise honest replica and only
ever alters or drops that replica's own messages, signed with its own key."""
from __future__ import annotations

from ..core import (
    EMPTY_DEPS, NOOP, CheckpointRequest, Commit, DepCommit, DepPropose, DepSet,
    NewView, NoOp, Propose, Signed, digest,
)


class Behavior:
    """Honest defaults for every hook."""

    name = "honest"

    def crashed(self, host, now) -> bool:
        return False

    def outgoing(self, host, dest, env):
        return env

    def dp_deps(self, host, slot, deps):
        return deps

    def dv_deps(self, host, slot, deps):
        return deps

    def withhold_dv(self, host, slot) -> bool:
        return False

    def new_view(self, host, nv):
        return nv

    def checkpoint_hash(self, host, seq, state_hash):
        return state_hash


class Crash(Behavior):
    name = "crash"

    def __init__(self, at: float = 0.0):
        self.at = float(at)

    def crashed(self, host, now):
        return now >= self.at


class EquivocateDepPropose(Behavior):
    """Sends a second, conflicting DepPropose for its own slots to every
    other follower."""

    name = "equivocate"

    def __init__(self):
        self.alt = {}

    def outgoing(self, host, dest, env):
        if not isinstance(env, Propose) or env.dp.msg.coordinator != host.me or dest % 2 == 0:
            return env
        m = env.dp.msg
        alt = self.alt.get(m.slot)
        if alt is None:
            cycle = host.cfg.fast_quorum_cycle(host.me)
            fq = cycle[(cycle.index(m.fast_quorum) + 1) % len(cycle)] if m.fast_quorum in cycle else cycle[0]
            deps = EMPTY_DEPS if m.deps else DepSet({(host.me + 1) % host.n: 0})
            alt = host.sign(DepPropose(m.slot, host.me, m.request_hash, deps, fq))
            self.alt[m.slot] = alt
        return Propose(alt, env.request)


class WithholdDepVerify(Behavior):
    name = "withhold"

    def withhold_dv(self, host, slot):
        return True


class PhantomDeps(Behavior):
    """Adds dependencies on slots nobody ever proposed."""

    name = "phantom"

    def _phantom(self, host, deps):
        victim = (host.me + 1) % host.n
        base = host.agreement.floor.get(victim)
        return deps.merge(DepSet({victim: base + 1 + host.cfg.k + 7}))

    def dp_deps(self, host, slot, deps):
        return self._phantom(host, deps)

    def dv_deps(self, host, slot, deps):
        return self._phantom(host, deps)


class InflateDeps(Behavior):
    """Reports a dependency on the latest known slot of every replica."""

    name = "inflate"

    def dv_deps(self, host, slot, deps):
        top = {}
        for s, st in host.agreement.slots.items():
            if st.dp_known and s != slot and s.counter > top.get(s.coordinator, -1):
                top[s.coordinator] = s.counter
        return deps.merge(DepSet(top))


class SilentCoordinator(Behavior):
    """For its first `count` client slots, sends DepPropose and request only
    to one follower outside the fast quorum."""

    name = "silent"

    def __init__(self, count: int = 1):
        self.count = int(count)
        self.silenced = []

    def outgoing(self, host, dest, env):
        if not isinstance(env, Propose) or env.dp.msg.coordinator != host.me:
            return env
        m = env.dp.msg
        if m.slot not in self.silenced:
            if (env.request is None or isinstance(env.request, CheckpointRequest)
                    or len(self.silenced) >= self.count):
                return env
            self.silenced.append(m.slot)
        outside = [r for r in range(host.n) if r != host.me and r not in m.fast_quorum]
        return env if dest == outside[0] and env.request is not None else None


class DivergentCheckpointVote(Behavior):
    name = "divergent-checkpoint"

    def checkpoint_hash(self, host, seq, state_hash):
        return digest(b"not-the-state" + state_hash)


class BadNewView(Behavior):
    """Withholds its DepCommits and Commits so that view changes happen, and
    as view coordinator always proposes a NoOp regardless of certificates."""

    name = "bad-newview"

    def outgoing(self, host, dest, env):
        if isinstance(env, Signed) and isinstance(env.msg, (DepCommit, Commit)):
            return None
        return env

    def new_view(self, host, nv):
        if isinstance(nv.request, NoOp):
            return nv
        return NewView(nv.view, nv.slot, nv.coordinator, None, NOOP, (), nv.vcs)


CATALOG = {
    "honest": Behavior,
    "crash": Crash,
    "equivocate": EquivocateDepPropose,
    "withhold": WithholdDepVerify,
    "phantom": PhantomDeps,
    "inflate": InflateDeps,
    "silent": SilentCoordinator,
    "divergent-checkpoint": DivergentCheckpointVote,
    "bad-newview": BadNewView,
}


def make_behavior(choice):
    """choice: a catalog name or {"kind": name, **params}."""
    if choice is None:
        return None
    if isinstance(choice, Behavior):
        return choice
    if isinstance(choice, str):
        choice = {"kind": choice}
    params = dict(choice)
    kind = params.pop("kind")
    if kind not in CATALOG:
        raise ValueError(f"unknown adversary {kind!r}; known: {sorted(CATALOG)}")
    return CATALOG[kind](**params)
