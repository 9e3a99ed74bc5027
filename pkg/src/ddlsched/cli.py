"""Experiment runner: trace generation, single simulation runs, and report
comparison tables."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from collections import Counter

from .engine import DeadlockError, run_sim
from .model import ClusterConfig, CostModel, DEFAULT_COST_MODEL, DEFAULT_GPU_MEMORY
from .placement import parse_placement
from .scheduling import parse_scheduler
from .workload import TraceFormatError, generate_trace, load_trace, save_trace, trace_config_from_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIM_FAILURE = 3


def _atomic_write(path: str, content: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(content)
    os.replace(tmp, path)


def load_cluster_config(path: str | None) -> ClusterConfig:
    """Cluster JSON (all fields optional): n_servers, gpus_per_server,
    gpu_memory_gb, cost_model{a,b,eta}. Defaults to 16 servers x 4 GPUs,
    16 GB each, with the fitted 10 GbE cost model."""
    if path is None:
        return ClusterConfig(n_servers=16, gpus_per_server=4)
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    cm = DEFAULT_COST_MODEL
    if "cost_model" in data:
        raw = data["cost_model"]
        cm = CostModel(
            a=raw.get("a", DEFAULT_COST_MODEL.a),
            b=raw.get("b", DEFAULT_COST_MODEL.b),
            eta=raw.get("eta", DEFAULT_COST_MODEL.eta),
        )
    return ClusterConfig(
        n_servers=data.get("n_servers", 16),
        gpus_per_server=data.get("gpus_per_server", 4),
        gpu_memory=data.get("gpu_memory_gb", DEFAULT_GPU_MEMORY / 1e9) * 1e9,
        cost_model=cm,
    )


def cmd_generate(args: argparse.Namespace) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        cfg = trace_config_from_dict(data)
    except (OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: bad trace config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
    trace = generate_trace(cfg)
    save_trace(trace, args.out)
    hist = Counter(s.n_gpus for s in trace)
    print(f"wrote {len(trace)} jobs to {args.out} (seed {cfg.seed})")
    print("gpus/job histogram: " + ", ".join(f"{n}x{c}" for n, c in sorted(hist.items())))
    iters = [s.iterations for s in trace]
    print(f"iterations: min {min(iters)}, max {max(iters)}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    try:
        trace = load_trace(args.trace)
        config = load_cluster_config(args.cluster)
        placement = parse_placement(args.placement, seed=args.seed)
        scheduler = parse_scheduler(args.scheduler)
    except (OSError, TraceFormatError, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_sim(config, trace, placement, scheduler, seed=args.seed)
    except DeadlockError as e:
        print(f"simulation failed: {e}", file=sys.stderr)
        return EXIT_SIM_FAILURE

    prefix = args.out
    _atomic_write(prefix + ".json", report.to_json())
    jobs_rows = ["job_id,arrival_s,finish_s,jct_s"]
    jobs_rows += [
        f"{r.job_id},{r.arrival_s},{r.finish_s},{r.jct_s}" for r in report.jobs
    ]
    _atomic_write(prefix + "_jobs.csv", "\n".join(jobs_rows) + "\n")
    cdf_rows = ["cdf_x_s,cdf_p"]
    cdf_rows += [f"{x},{p}" for x, p in report.cdf_points()]
    _atomic_write(prefix + "_cdf.csv", "\n".join(cdf_rows) + "\n")

    agg = report.aggregates()
    print(f"{placement.name} + {scheduler.name}: "
          f"avg JCT {agg['avg_jct_s']:.1f} s, median {agg['median_jct_s']:.1f} s, "
          f"p95 {agg['p95_jct_s']:.1f} s, GPU util {agg['avg_gpu_utilization']:.2%}")
    print(f"wrote {prefix}.json, {prefix}_jobs.csv, {prefix}_cdf.csv")
    return EXIT_OK


COMPARE_COLUMNS = ["Average GPU Util.", "Average JCT(s)", "Median JCT(s)", "95th JCT(s)"]


def cmd_compare(args: argparse.Namespace) -> int:
    rows = []
    hashes = set()
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                rep = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: cannot read report {path}: {e}", file=sys.stderr)
            return EXIT_CONFIG
        hashes.add(rep.get("trace_hash"))
        agg = rep["aggregates"]
        rows.append(
            {
                "Method": f"{rep['placement']}+{rep['scheduler']}",
                "Average GPU Util.": f"{agg['avg_gpu_utilization']:.2%}",
                "Average JCT(s)": f"{agg['avg_jct_s']:.1f}",
                "Median JCT(s)": f"{agg['median_jct_s']:.1f}",
                "95th JCT(s)": f"{agg['p95_jct_s']:.1f}",
            }
        )
    if len(hashes) > 1:
        print("warning: reports come from different traces", file=sys.stderr)

    header = ["Method"] + COMPARE_COLUMNS
    widths = [max(len(h), max(len(r[h]) for r in rows)) for h in header]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(r[h].ljust(w) for h, w in zip(header, widths)))

    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddlsched",
        description="Simulate contention-aware scheduling of distributed training jobs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a synthetic job trace")
    p_gen.add_argument("config", help="trace config JSON")
    p_gen.add_argument("out", help="output trace JSON path")
    p_gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("trace", help="trace JSON path")
    p_run.add_argument("--cluster", default=None, help="cluster config JSON (default: 16x4, 16 GB)")
    p_run.add_argument("--placement", default="lwf:1", help="lwf:<kappa> | ff | ls | rand")
    p_run.add_argument("--scheduler", default="ada-srsf", help="ada-srsf | srsf:<n>")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default="report", help="output path prefix")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate metrics from report files")
    p_cmp.add_argument("reports", nargs="+", help="report JSON paths")
    p_cmp.add_argument("--csv", default=None, help="also write the table as CSV")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
