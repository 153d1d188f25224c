"""Command-line harness: single runs, seeded suites, and figure data.

Exit codes are part of the contract: 0 for a clean run, 1 for anything
wrong with the configuration or inputs, 2 when a run finished but an
invariant check failed.  Violation reports come with the shortest time
horizon that still reproduces the failure, found by re-running the
deterministic simulation with a bisected duration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import scenarios as scn
from .errors import ConfigError
from .invariants import check_all
from .simnet import Scenario, run_scenario, trace_bytes

SUMMARY_COLUMNS = [
    "scenario",
    "seed",
    "commits",
    "mean_latency_ms",
    "steps_per_commit",
    "agg_verifies_per_nv",
    "revocations",
    "chain_quality",
    "violations",
]


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if getattr(args, "piggyback", None) is not None:
        sc = replace(sc, piggyback=args.piggyback == "on")
    if getattr(args, "verify_mode", None) is not None:
        sc = replace(sc, verify_mode=args.verify_mode)
    if getattr(args, "seed", None) is not None:
        sc = scn.with_seed(sc, args.seed)
    return scn.validate(sc)


def _metrics_doc(sc: Scenario, metrics: dict, violations: list[str]) -> dict:
    return {
        "scenario": sc.name,
        "seed": sc.seed,
        "n": sc.n,
        "verify_mode": sc.verify_mode,
        "piggyback": sc.piggyback,
        **metrics,
        "violation_detail": violations,
    }


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def shrink_horizon(sc: Scenario) -> int | None:
    """Smallest duration at which this scenario still fails a check.

    Starvation is excluded while shrinking: a truncated run always has
    requests in flight, so the check is only meaningful at full length.
    """

    def fails(duration: int) -> bool:
        probe = replace(sc, duration=duration, gst=min(sc.gst, duration))
        violations, _ = check_all(run_scenario(probe), starvation_slack=sc.duration + 1)
        return bool(violations)

    if not fails(sc.duration):
        return None
    lo, hi = 1, sc.duration
    while lo < hi:
        mid = (lo + hi) // 2
        if fails(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def _execute(sc: Scenario, out_dir: str, keep_trace: bool) -> tuple[dict, list[str]]:
    sim = run_scenario(sc)
    violations, metrics = check_all(sim)
    os.makedirs(out_dir, exist_ok=True)
    if keep_trace:
        with open(os.path.join(out_dir, "trace.jsonl"), "wb") as fh:
            fh.write(trace_bytes(sim.records))
    _write_json(
        os.path.join(out_dir, "metrics.json"), _metrics_doc(sc, metrics, violations)
    )
    return metrics, violations


def cmd_run(args) -> int:
    sc = _apply_overrides(scn.resolve(args.scenario), args)
    out_dir = args.out or f"{sc.name}-s{sc.seed}"
    metrics, violations = _execute(sc, out_dir, keep_trace=True)
    print(f"{sc.name} seed={sc.seed}: {metrics['commits']} commits, "
          f"{len(violations)} violations")
    if not violations:
        return 0
    report = {
        "scenario": sc.name,
        "seed": sc.seed,
        "violations": violations,
        "min_failing_duration": None,
    }
    non_starvation = [v for v in violations if not v.startswith("starvation")]
    if non_starvation:
        report["min_failing_duration"] = shrink_horizon(sc)
    report_path = os.path.join(out_dir, "report.json")
    _write_json(report_path, report)
    for v in violations:
        print(f"  {v}", file=sys.stderr)
    print(f"report: {report_path}", file=sys.stderr)
    return 2


def _suite_job(payload: tuple[Scenario, str, bool]) -> tuple[str, int, dict, int]:
    sc, out_dir, keep_trace = payload
    metrics, violations = _execute(sc, out_dir, keep_trace)
    return sc.name, sc.seed, metrics, len(violations)


def cmd_suite(args) -> int:
    spec = scn.load_suite(args.suite)
    out_root = args.out or "suite-out"
    jobs = []
    for base in spec.scenarios:
        for seed in spec.seeds:
            sc = _apply_overrides(scn.with_seed(base, seed), args)
            jobs.append((sc, os.path.join(out_root, f"{sc.name}-s{seed}"),
                         args.keep_traces))
    os.makedirs(out_root, exist_ok=True)
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_suite_job, jobs, chunksize=8))
    else:
        results = [_suite_job(job) for job in jobs]
    results.sort(key=lambda r: (r[0], r[1]))
    summary_path = os.path.join(out_root, "summary.csv")
    total_violations = 0
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for name, seed, metrics, nviol in results:
            total_violations += nviol
            writer.writerow(
                [name, seed] + [metrics[c] for c in SUMMARY_COLUMNS[2:-1]] + [nviol]
            )
    print(f"{len(results)} runs, {total_violations} violations -> {summary_path}")
    return 2 if total_violations else 0


def cmd_figure(args) -> int:
    if args.metric != "verifies":
        raise ConfigError(f"unknown figure metric {args.metric!r}")
    rows: dict[int, dict[str, list[float]]] = {}
    for entry in sorted(os.listdir(args.suite_out)):
        path = os.path.join(args.suite_out, entry, "metrics.json")
        if not os.path.isfile(path):
            continue
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        value = doc.get("agg_verifies_per_nv", 0.0)
        if value:
            rows.setdefault(doc["n"], {}).setdefault(doc["verify_mode"], []).append(
                value
            )
    complete = {
        n: modes for n, modes in rows.items()
        if modes.get("linear") and modes.get("quadratic")
    }
    if not complete:
        print(
            f"no runs with both verify modes under {args.suite_out!r}",
            file=sys.stderr,
        )
        return 1
    out_path = args.out or os.path.join(args.suite_out, "figure_verifies.csv")
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "linear", "quadratic", "ratio"])
        for n in sorted(complete):
            lin = sum(complete[n]["linear"]) / len(complete[n]["linear"])
            quad = sum(complete[n]["quadratic"]) / len(complete[n]["quadratic"])
            writer.writerow(
                [n, round(lin, 3), round(quad, 3), round(quad / lin, 3)]
            )
    print(f"figure data -> {out_path}")
    return 0


def cmd_list(_args) -> int:
    for name in sorted(scn.BUILTIN):
        sc = scn.BUILTIN[name]
        byz = ",".join(f"{i}:{s}" for i, s in sorted(sc.byzantine.items())) or "-"
        print(f"{name:24s} n={sc.n:<3d} byzantine={byz}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twostepbft",
        description="Run two-step replication scenarios and check their claims.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario, write trace and metrics")
    run.add_argument("scenario", help="built-in scenario name or file path")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--piggyback", choices=["on", "off"], default=None)
    run.add_argument("--verify-mode", choices=["linear", "quadratic"], default=None)
    run.set_defaults(fn=cmd_run)

    suite = sub.add_parser("suite", help="run a scenario x seed grid")
    suite.add_argument("suite", help="suite file path")
    suite.add_argument("--out", default=None, help="output directory")
    suite.add_argument("--parallel", type=int, default=1)
    suite.add_argument("--piggyback", choices=["on", "off"], default=None)
    suite.add_argument("--verify-mode", choices=["linear", "quadratic"], default=None)
    suite.add_argument("--keep-traces", action="store_true")
    suite.set_defaults(fn=cmd_suite)

    figure = sub.add_parser("figure", help="derive plot-ready CSV from suite output")
    figure.add_argument("metric", help="only 'verifies' is defined")
    figure.add_argument("--suite-out", required=True)
    figure.add_argument("--out", default=None, help="CSV path")
    figure.set_defaults(fn=cmd_figure)

    listing = sub.add_parser("list", help="list built-in scenarios")
    listing.set_defaults(fn=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
