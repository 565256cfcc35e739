"""Command line front-end.

    egalbft run     --scenario FILE [--seed N] [--out DIR] [--format csv|jsonl]
    egalbft sweep   [--scenario FILE] [--seeds A..B] [--out DIR] [--format ...]
    egalbft oracle  [--bound K] [--crash R] [--out DIR]
    egalbft check   --scenario FILE [--seed N]
    egalbft report  --scenario FILE [--seeds A..B] [--out DIR] [--format ...]
    egalbft cluster --n 4 [--base-port 7000] --out FILE
    egalbft serve   --config FILE --id I
    egalbft client  --config FILE [--id C] [--home R] OP...
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys

import yaml

from ..kv import decode_result, footprint, read_op, write_op
from ..simnet.engine import simulate
from ..simnet.scenario import load
from .checks import check_all
from .linearizability import check_linearizability, history_from_samples
from .metrics import render_figures, sample_records, summarize, write_csv, write_jsonl


def parse_seeds(text: str):
    """'5' -> [5]; 'A..B' or 'A-B' -> A..B inclusive; 'a,b,c' -> list."""
    text = text.strip()
    if "," in text:
        return [int(x) for x in text.split(",") if x]
    for sep in ("..", "-", ":"):
        if sep in text[1:]:
            a, b = text.split(sep, 1)
            a, b = int(a), int(b)
            if b < a:
                raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
            return list(range(a, b + 1))
    return [int(text)]


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _emit(records, out, stem, fmt):
    path = os.path.join(out, f"{stem}.{fmt}")
    if fmt == "csv" and records and "sites" in records[0]:
        write_csv(records, path)
    elif fmt == "csv":
        _write_plain_csv(records, path)
    else:
        write_jsonl(records, path)
    return path


def _write_plain_csv(records, path):
    import csv
    fields = []
    for r in records:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in records:
            w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})


def _run_one(scn, seed=None, trace=False):
    if seed is not None:
        scn = scn.with_seed(seed)
    scn.config.trace = trace
    return scn, simulate(scn.config, scn.clients())


def _verdict(res):
    rep = check_all(res, footprint)
    lin = check_linearizability(history_from_samples(res.samples))
    problems = list(rep.problems)
    for v in lin.violations:
        problems.append({"check": "linearizability", "detail": f"key {v['key']!r}: {v['operation']}"})
    if res.unfinished:
        problems.append({"check": "timeouts", "detail": f"clients {res.unfinished} not done by the horizon"})
    return not problems, problems


def cmd_run(args):
    scn = load(args.scenario)
    scn, res = _run_one(scn, args.seed, trace=True)
    out = _out_dir(args.out)
    ok, problems = _verdict(res)
    summary = summarize(res, label=os.path.basename(scn.name))
    summary["ok"] = ok
    res.write_trace(os.path.join(out, "trace.jsonl"))
    _emit([summary], out, "summary", args.format)
    _emit(sample_records(res, summary["label"]), out, "samples", args.format)
    render_figures([summary], {summary["label"]: res.latencies()}, out)
    print(f"seed {res.config.seed}: {len(res.samples)} accepted, p50 {summary['p50']} ms, "
          f"p90 {summary['p90']} ms, paths {summary['paths']}, {'ok' if ok else 'FAILED'}")
    for p in problems[:10]:
        print(f"  {p['check']}: {p['detail']}")
    return 0 if ok else 1


def cmd_sweep(args):
    out = _out_dir(args.out)
    rows = []
    failed = 0
    if args.scenario:
        scn = load(args.scenario)
        for seed in args.seeds:
            _, res = _run_one(scn, seed)
            ok, problems = _verdict(res)
            rows.append({"seed": seed, "ok": ok, "accepted": len(res.samples),
                         "problems": [p["check"] for p in problems]})
            failed += not ok
    else:
        from .sweep import run_case
        for seed in args.seeds:
            o = run_case(seed)
            rows.append({"seed": seed, "adversary": o.adversary, "conflict_rate": o.conflict_rate,
                         "ok": o.ok, "accepted": o.accepted, "linked_pairs": o.linked_pairs,
                         "problems": [p["check"] for p in o.problems]})
            failed += not o.ok
    for r in rows:
        if not r["ok"]:
            print(f"seed {r['seed']} FAILED: {r['problems']}")
    path = _emit(rows, out, "sweep", args.format)
    print(f"{len(rows) - failed}/{len(rows)} seeds passed; results in {path}")
    return 0 if failed == 0 else 1


def cmd_oracle(args):
    from .oracle import explore
    res = explore(bound=args.bound, crash=args.crash, time_limit=args.time_limit)
    print(f"bound {args.bound}: {res.schedules} schedules in {res.seconds:.1f}s, "
          f"{len(res.violations)} violations, orders {sorted(res.orders)}"
          + (" (time limit hit)" if res.truncated else ""))
    if res.violations:
        first = min(res.violations, key=lambda v: len(v["schedule"]))
        print("shortest counterexample schedule:", first["schedule"])
        if args.out:
            with open(os.path.join(_out_dir(args.out), "counterexample.json"), "w") as fh:
                json.dump(first, fh, default=str, indent=1)
    return 0 if res.ok and not res.truncated else 1


def cmd_check(args):
    scn = load(args.scenario)
    _, res = _run_one(scn, args.seed)
    ok, problems = _verdict(res)
    print(f"seed {res.config.seed}: {'pass' if ok else 'FAIL'}")
    for p in problems:
        print(f"  {p['check']}: {p['detail']}")
    return 0 if ok else 1


def cmd_report(args):
    scn = load(args.scenario)
    out = _out_dir(args.out)
    summaries, samples, lat = [], [], {}
    for seed in args.seeds:
        _, res = _run_one(scn, seed)
        s = summarize(res, label=f"seed{seed}")
        summaries.append(s)
        samples.extend(sample_records(res, s["label"]))
        lat[s["label"]] = res.latencies()
    _emit(summaries, out, "summary", args.format)
    _emit(samples, out, "samples", args.format)
    figs = render_figures(summaries, lat, out)
    for s in summaries:
        sites = ", ".join(f"site {r['site']}: p50 {r['p50']:.1f} p90 {r['p90']:.1f}" for r in s["sites"])
        print(f"{s['label']}: {sites}; fast share {s['fast_share']}")
    print("figures:", ", ".join(figs))
    return 0


def cmd_cluster(args):
    from ..transport import local_cluster
    peers, ctab, _ = local_cluster(args.n, clients=args.clients, base_port=args.base_port,
                                   seed=args.key_seed.encode())
    doc = {"n": args.n, "f": (args.n - 1) // 3, "delta": args.delta, "key_seed": args.key_seed,
           "peers": peers, "clients": ctab}
    with open(args.out, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    print(f"wrote {args.out}")
    return 0


def _cluster_scheme(doc, owned):
    from ..crypto import Ed25519Scheme
    from ..transport import scheme_from_tables
    full = Ed25519Scheme.deterministic(owned, doc["key_seed"].encode())
    return scheme_from_tables(doc["peers"], doc.get("clients", ()), full.private)


def cmd_serve(args):
    from ..config import ReplicaConfig
    from ..crypto import replica_principal
    from ..transport import ReplicaDaemon
    with open(args.config) as fh:
        doc = yaml.safe_load(fh)
    me = args.id
    scheme = _cluster_scheme(doc, [replica_principal(me)])
    cfg = ReplicaConfig(id=me, n=doc["n"], f=doc["f"], delta=float(doc.get("delta", 200)))
    listen = next(p["address"] for p in doc["peers"] if p["id"] == me)

    async def main():
        d = ReplicaDaemon(cfg, scheme, listen, doc["peers"])
        await d.start()
        d.connect_peers()
        logging.info("replica %d listening on %s", me, listen)
        await asyncio.Event().wait()

    logging.basicConfig(level=logging.INFO)
    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return 0


def cmd_client(args):
    from ..client import ClientSession
    from ..crypto import client_principal
    from ..transport import ClientConnection
    with open(args.config) as fh:
        doc = yaml.safe_load(fh)
    scheme = _cluster_scheme(doc, [client_principal(args.id)])
    ops = []
    for text in args.ops:
        verb, _, rest = text.partition(":")
        if verb == "get":
            ops.append(read_op(rest.encode()))
        elif verb == "put":
            k, _, v = rest.partition("=")
            ops.append(write_op(k.encode(), v.encode()))
        else:
            raise SystemExit(f"operation {text!r} is neither get:KEY nor put:KEY=VALUE")

    async def main():
        c = ClientConnection(ClientSession(args.id, doc["n"], doc["f"], scheme, args.home,
                                           float(doc.get("delta", 200))), doc["peers"])
        await c.connect()
        try:
            for text, op in zip(args.ops, ops):
                acc = await c.execute(op, args.timeout)
                print(f"{text} -> {decode_result(acc.result)} ({acc.accepted - acc.submitted:.1f} ms)")
        finally:
            await c.close()

    asyncio.run(main())
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="egalbft", description="Leaderless BFT replication toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=False, seeds=False):
        sp.add_argument("--scenario", required=scenario_required, help="YAML scenario file")
        if seeds:
            sp.add_argument("--seeds", type=parse_seeds, default=parse_seeds("0..9"),
                            help="seed list: N, A..B or a,b,c")
        else:
            sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    common(sub.add_parser("run", help="simulate one scenario"), scenario_required=True)
    common(sub.add_parser("sweep", help="many seeds; the built-in safety sweep without --scenario"),
           seeds=True)
    sp = sub.add_parser("oracle", help="bounded exhaustive interleaving check")
    sp.add_argument("--bound", type=int, default=4)
    sp.add_argument("--crash", type=int, default=None)
    sp.add_argument("--time-limit", type=float, default=110.0)
    sp.add_argument("--out", default=None)
    sp = sub.add_parser("check", help="simulate and run every correctness checker")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--seed", type=int, default=None)
    common(sub.add_parser("report", help="metrics and figures over seeds"), scenario_required=True,
           seeds=True)
    sp = sub.add_parser("cluster", help="write a localhost peer table")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--clients", type=int, default=1)
    sp.add_argument("--base-port", type=int, default=7000)
    sp.add_argument("--delta", type=float, default=200.0)
    sp.add_argument("--key-seed", default="egalbft-local")
    sp.add_argument("--out", required=True)
    sp = sub.add_parser("serve", help="run one replica daemon")
    sp.add_argument("--config", required=True)
    sp.add_argument("--id", type=int, required=True)
    sp = sub.add_parser("client", help="submit operations (get:KEY, put:KEY=VALUE)")
    sp.add_argument("--config", required=True)
    sp.add_argument("--id", type=int, default=0)
    sp.add_argument("--home", type=int, default=0)
    sp.add_argument("--timeout", type=float, default=10.0)
    sp.add_argument("ops", nargs="+")
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "oracle": cmd_oracle, "check": cmd_check,
            "report": cmd_report, "cluster": cmd_cluster, "serve": cmd_serve, "client": cmd_client}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
