"""The seeded safety sweep: one adversary per run, varied conflict rates."""
from __future__ import annotations

from dataclasses import dataclass

from ..kv import footprint
from ..simnet.engine import ClientSpec, SimConfig, simulate
from .checks import check_all
from .workload import Micro, gen_workload

ADVERSARIES = (
    {"kind": "crash", "at": 300}, "equivocate", "withhold", "phantom", "inflate",
    "silent", "divergent-checkpoint", "bad-newview",
)
CONFLICT_RATES = (0.0, 0.02, 0.05, 1.0)


@dataclass
class CaseOutcome:
    seed: int
    adversary: str
    conflict_rate: float
    ok: bool
    unfinished: list
    problems: list
    linked_pairs: int
    accepted: int


def sweep_case(seed: int, requests: int = 8):
    """Deterministic (SimConfig, clients) for one sweep seed."""
    adv = ADVERSARIES[seed % len(ADVERSARIES)]
    rate = CONFLICT_RATES[(seed // len(ADVERSARIES)) % len(CONFLICT_RATES)]
    flavour = (seed // (len(ADVERSARIES) * len(CONFLICT_RATES))) % 3
    checkpointing = seed % 2 == 1
    cfg = SimConfig(
        seed=seed, adversaries={seed % 4: adv}, jitter=20.0,
        drop=0.01 if flavour == 2 else 0.0, duplicate=0.02 if flavour == 1 else 0.0,
        cp_interval=20 if checkpointing else 0, k=5 if checkpointing else 20,
        horizon=60_000.0)
    ops = gen_workload(Micro(rate), seed, 4, requests)
    return cfg, [ClientSpec(home=c, ops=ops[c]) for c in range(4)]


def run_case(seed: int, requests: int = 8) -> CaseOutcome:
    cfg, clients = sweep_case(seed, requests)
    res = simulate(cfg, clients)
    rep = check_all(res, footprint)
    adv = next(iter(cfg.adversaries.values()))
    name = adv if isinstance(adv, str) else adv["kind"]
    return CaseOutcome(seed, name, sweep_rate(seed), rep.ok and not res.unfinished,
                       res.unfinished, rep.problems, getattr(rep, "pairs", 0), len(res.samples))


def sweep_rate(seed: int) -> float:
    return CONFLICT_RATES[(seed // len(ADVERSARIES)) % len(CONFLICT_RATES)]
