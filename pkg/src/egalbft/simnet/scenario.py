"""YAML scenario files.

A scenario names the group size, latency matrix, adversaries, workload, seed
and horizon. Everything else has defaults::

    replicas: 4                      # or {n: 4, f: 1}
    latency: geo4                    # geo4, uniform:<ms>, or an n x n list
    adversaries: {3: inflate}        # id -> name or {kind: name, ...params}
    workload: {kind: micro, conflict_rate: 0.02, clients_per_site: 1, requests: 50,
               sites: [0, 1, 2]}         # sites defaults to every replica
    seed: 7
    horizon: 60000
    network: {jitter: 0, drop: 0, duplicate: 0, client_mode: site, disconnect: []}
    protocol: {delta: 200, cp_interval: 0, k: 20, batch_limit: 1}
    peers:                           # only for socket daemons
      - {id: 0, address: "127.0.0.1:7000"}
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import yaml

from ..harness.workload import Micro, from_dict, gen_workload
from .engine import ClientSpec, SimConfig
from .latency import named

_TOP = {"replicas", "latency", "adversaries", "workload", "seed", "horizon",
        "network", "protocol", "peers", "name"}
_NETWORK = {"jitter", "drop", "duplicate", "client_mode", "client_local", "disconnect",
            "retransmit_every", "drain"}
_PROTOCOL = {"delta", "cp_interval", "k", "batch_limit", "commit_timeout", "scheme"}


@dataclass
class Scenario:
    name: str
    config: SimConfig
    workload: object
    clients_per_site: int = 1
    requests: int = 20
    peers: list = field(default_factory=list)
    sites: tuple = ()

    def clients(self):
        sites = self.sites or tuple(range(self.config.n))
        streams = gen_workload(self.workload, self.config.seed, len(sites) * self.clients_per_site,
                               self.requests)
        return [ClientSpec(home=sites[i % len(sites)], ops=ops) for i, ops in enumerate(streams)]

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, config=replace(self.config, seed=seed))


def _unknown(section, got, allowed):
    extra = set(got) - allowed
    if extra:
        raise ValueError(f"unknown {section} keys: {sorted(extra)}")


def from_mapping(d: dict, name: str = "scenario") -> Scenario:
    d = dict(d or {})
    _unknown("scenario", d, _TOP)
    reps = d.get("replicas", 4)
    if isinstance(reps, dict):
        n, f = int(reps["n"]), int(reps.get("f", (int(reps["n"]) - 1) // 3))
    else:
        n, f = int(reps), (int(reps) - 1) // 3
    lat = d.get("latency", "uniform:100")
    matrix = named(lat, n) if isinstance(lat, str) else lat
    adv = {int(k): v for k, v in (d.get("adversaries") or {}).items()}
    net = dict(d.get("network") or {})
    _unknown("network", net, _NETWORK)
    proto = dict(d.get("protocol") or {})
    _unknown("protocol", proto, _PROTOCOL)
    if "disconnect" in net:
        net["disconnect"] = tuple(tuple(x) for x in net["disconnect"])
    cfg = SimConfig(n=n, f=f, seed=int(d.get("seed", 0)), latency=matrix,
                    horizon=float(d.get("horizon", 60_000)), adversaries=adv, **net, **proto)
    wl = dict(d.get("workload") or {})
    per_site = int(wl.pop("clients_per_site", 1))
    requests = int(wl.pop("requests", 20))
    sites = tuple(int(x) for x in wl.pop("sites", ()))
    if any(not 0 <= x < n for x in sites):
        raise ValueError(f"client sites must name replicas 0..{n - 1}")
    workload = from_dict(wl) if wl else Micro()
    return Scenario(d.get("name", name), cfg, workload, per_site, requests,
                    list(d.get("peers") or []), sites)


def load(path) -> Scenario:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return from_mapping(data, name=str(path))
