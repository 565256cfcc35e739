"""Replica configuration and protocol timer constants (times in ms)."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .core import check_group

# Multiples of the synchrony bound delta.
PROPOSE_TIMEOUT = 2
COMMIT_TIMEOUT = 9
VIEW_CHANGE_TIMEOUT = 3
VIEW_CHANGE_TIMEOUT_CP = 5
VC_COMMIT_TIMEOUT = 3
QUERY_EXEC_TIMEOUT = 4
CLIENT_RETRY_TIMEOUT = 4


@dataclass
class ReplicaConfig:
    id: int
    n: int = 4
    f: int = 1
    delta: float = 200.0
    cp_interval: int = 0       # 0 disables checkpointing
    k: int = 20
    batch_limit: int = 1
    latency_hints: tuple = ()  # one-way delay to every replica, by id
    retransmit_every: float = 0.0  # 0 means 5*delta
    commit_timeout: int = COMMIT_TIMEOUT

    def __post_init__(self):
        check_group(self.n, self.f)
        if not 0 <= self.id < self.n:
            raise ValueError(f"replica id {self.id} outside [0, {self.n})")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.cp_interval and self.cp_interval < self.k:
            raise ValueError("cp_interval must be at least k")
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be at least 1")
        if not self.latency_hints:
            self.latency_hints = tuple(0.0 for _ in range(self.n))

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    @property
    def weak(self) -> int:
        return self.f + 1

    @property
    def checkpointing(self) -> bool:
        return self.cp_interval > 0

    @property
    def window(self) -> int:
        """Ordering window per coordinator beyond the stable floor."""
        return 2 * self.cp_interval if self.cp_interval else 0

    def timeouts(self) -> dict:
        d = self.delta
        return {
            "propose": PROPOSE_TIMEOUT * d,
            "commit": self.commit_timeout * d,
            "view_change": (VIEW_CHANGE_TIMEOUT_CP if self.checkpointing else VIEW_CHANGE_TIMEOUT) * d,
            "vc_commit": VC_COMMIT_TIMEOUT * d,
            "query_exec": QUERY_EXEC_TIMEOUT * d,
            "retransmit": self.retransmit_every or 5 * d,
        }

    def is_checkpoint_slot(self, counter: int) -> bool:
        return self.cp_interval > 0 and counter % self.cp_interval == 0

    def fast_quorum_cycle(self, coordinator: int):
        """All 2f-subsets of the other replicas in lexicographic order."""
        others = [r for r in range(self.n) if r != coordinator]
        return [tuple(c) for c in combinations(others, 2 * self.f)]

    def preferred_fast_quorum(self) -> tuple:
        """The 2f followers with the lowest configured delay (ties by id)."""
        others = sorted((r for r in range(self.n) if r != self.id),
                        key=lambda r: (self.latency_hints[r], r))
        return tuple(sorted(others[: 2 * self.f]))


def view_coordinator(slot_coordinator: int, view: int, n: int) -> int:
    return (slot_coordinator + max(0, view)) % n
