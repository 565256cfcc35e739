"""Workload generators: conflict-rate micro benchmark and a Zipfian key mix."""
from __future__ import annotations

import bisect
import random
from dataclasses import dataclass

from ..kv import read_op, write_op

HOT_KEY = b"hot"


@dataclass
class Micro:
    conflict_rate: float = 0.0
    payload_bytes: int = 8

    def __post_init__(self):
        if not 0 <= self.conflict_rate <= 1:
            raise ValueError("conflict rate must lie in [0, 1]")


@dataclass
class Zipf:
    read_ratio: float = 0.5
    key_count: int = 1000
    exponent: float = 0.99
    value_bytes: int = 1024

    def __post_init__(self):
        if not 0 <= self.read_ratio <= 1:
            raise ValueError("read ratio must lie in [0, 1]")
        if self.key_count < 1:
            raise ValueError("need at least one key")


def _rng(seed, client):
    return random.Random(f"workload/{seed}/{client}")


def micro_stream(w: Micro, seed: int, client: int, count: int):
    rng = _rng(seed, client)
    value = bytes(w.payload_bytes)
    out = []
    for i in range(count):
        if rng.random() < w.conflict_rate:
            key = HOT_KEY
        else:
            key = b"c%d-%d" % (client, i)
        out.append(write_op(key, value))
    return out


class ZipfSampler:
    """Inverse-CDF sampling over ranks 1..n with weight 1/rank^s."""

    def __init__(self, n: int, s: float):
        acc = 0.0
        self.cdf = []
        for rank in range(1, n + 1):
            acc += 1.0 / rank ** s
            self.cdf.append(acc)
        self.total = acc

    def sample(self, rng) -> int:
        return bisect.bisect_left(self.cdf, rng.random() * self.total)


def zipf_stream(w: Zipf, seed: int, client: int, count: int):
    rng = _rng(seed, client)
    sampler = ZipfSampler(w.key_count, w.exponent)
    out = []
    for i in range(count):
        key = b"key%d" % sampler.sample(rng)
        if rng.random() < w.read_ratio:
            out.append(read_op(key))
        else:
            out.append(write_op(key, bytes([i % 251]) * w.value_bytes))
    return out


def gen_workload(w, seed: int, clients: int, per_client: int):
    """One operation list per client, deterministic in seed."""
    make = micro_stream if isinstance(w, Micro) else zipf_stream
    return [make(w, seed, c, per_client) for c in range(clients)]


def from_dict(d: dict):
    d = dict(d or {})
    kind = d.pop("kind", "micro")
    if kind == "micro":
        return Micro(**d)
    if kind == "zipf":
        return Zipf(**d)
    raise ValueError(f"unknown workload kind {kind!r}")
