"""Metric aggregation over simulation results and their CSV/JSONL/figure output."""
from __future__ import annotations

import csv
import json
import math
import os

from ..core import client_requests
from .checks import correct_replicas

PATH_ORDER = ("fast", "reconcile", "viewchange", "exec")


def percentile(samples, p: float):
    """Nearest-rank percentile: the smallest sample with at least p% of the
    samples at or below it."""
    if not samples:
        return None
    if not 0 < p <= 100:
        raise ValueError("percentile must lie in (0, 100]")
    xs = sorted(samples)
    rank = max(1, math.ceil(p / 100 * len(xs)))
    return xs[rank - 1]


def slot_paths(replicas):
    """slot -> (path, is_client_slot). A slot counts under the quickest path
    any correct replica committed it by."""
    out = {}
    for r in correct_replicas(replicas):
        for slot, rec in r.commit_log.items():
            prev = out.get(slot)
            rank = PATH_ORDER.index(rec.path) if rec.path in PATH_ORDER else len(PATH_ORDER)
            if prev is None or rank < prev[0]:
                out[slot] = (rank, rec.path, bool(client_requests(rec.request)),
                             type(rec.request).__name__)
    return {s: v[1:] for s, v in out.items()}


def summarize(result, label: str = "") -> dict:
    """One flat record of the headline numbers of a run."""
    samples = result.samples
    rows = []
    homes = sorted({s["home"] for s in samples})
    for h in homes:
        lat = result.latencies(h)
        rows.append({"site": h, "count": len(lat), "p50": percentile(lat, 50),
                     "p90": percentile(lat, 90)})
    paths = {p: 0 for p in PATH_ORDER}
    noops = 0
    for path, is_client, kind in slot_paths(result.replicas).values():
        if kind == "NoOp":
            noops += 1
        if is_client:
            paths[path] = paths.get(path, 0) + 1
    total = sum(paths.values())
    first = min((s["submitted"] for s in samples), default=0.0)
    last = max((s["accepted"] for s in samples), default=0.0)
    span = (last - first) / 1000.0
    high_water = max((max(r.agreement.high_water) for r in correct_replicas(result.replicas)),
                     default=0)
    all_lat = result.latencies()
    return {
        "label": label,
        "seed": result.config.seed,
        "accepted": len(samples),
        "timeouts": len(result.unfinished),
        "throughput": len(samples) / span if span > 0 else 0.0,
        "p50": percentile(all_lat, 50),
        "p90": percentile(all_lat, 90),
        "sites": rows,
        "paths": paths,
        "fast_share": paths["fast"] / total if total else None,
        "noop_slots": noops,
        "slot_high_water": high_water,
        "sim_end": result.end_time,
    }


def flat_rows(summaries):
    """One row per (run, site) for the comma-separated output."""
    out = []
    for s in summaries:
        for site in s["sites"] or [{"site": None, "count": 0, "p50": None, "p90": None}]:
            row = {k: v for k, v in s.items() if k not in ("sites", "paths")}
            row.update({f"path_{p}": c for p, c in s["paths"].items()})
            row.update({"site": site["site"], "site_count": site["count"],
                        "site_p50": site["p50"], "site_p90": site["p90"]})
            out.append(row)
    return out


def write_csv(summaries, path):
    rows = flat_rows(summaries)
    fields = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def write_jsonl(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, bytes):
        return x.hex()
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    return str(x)


def sample_records(result, label=""):
    return [{"label": label, "seed": result.config.seed, "client": s["client"],
             "home": s["home"], "timestamp": s["timestamp"], "submitted": s["submitted"],
             "accepted": s["accepted"], "latency": s["latency"]} for s in result.samples]


def render_figures(summaries, samples_by_label, out_dir):
    """Latency CDFs per run and per-site p50/p90 bars. Returns the file paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, lat in samples_by_label.items():
        if not lat:
            continue
        xs = sorted(lat)
        ys = [(i + 1) / len(xs) for i in range(len(xs))]
        ax.step(xs, ys, where="post", label=label or "run")
    ax.set_xlabel("response time (ms)")
    ax.set_ylabel("fraction of requests")
    ax.grid(alpha=0.3)
    if samples_by_label:
        ax.legend(fontsize="small")
    fig.tight_layout()
    p = os.path.join(out_dir, "latency_cdf.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(1, len(summaries))
    for i, s in enumerate(summaries):
        sites = [r["site"] for r in s["sites"]]
        xs = [x + i * width for x in range(len(sites))]
        ax.bar(xs, [r["p50"] for r in s["sites"]], width, label=f"{s['label']} p50")
        ax.scatter(xs, [r["p90"] for r in s["sites"]], marker="_", s=200, color="black")
    ax.set_xlabel("client site (home replica)")
    ax.set_ylabel("response time (ms); bar p50, tick p90")
    ax.grid(alpha=0.3, axis="y")
    if summaries:
        ax.legend(fontsize="small")
    fig.tight_layout()
    p = os.path.join(out_dir, "site_percentiles.png")
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
