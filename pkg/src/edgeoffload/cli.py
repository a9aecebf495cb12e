"""Command-line entry point: ``edgeoffload run | oracle-check | validate-trace``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, solver
from .harness import ExperimentConfig
from .scenario import ConfigError, ScenarioConfig, generate_instance
from .uncertainty import METRICS, TraceError, load_trace


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _str_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def build_config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
    overrides = {
        "n_users_sweep": args.n_users,
        "tau_sweep": args.tau,
        "metric": args.metric,
        "iterations": args.iterations,
        "master_seed": args.seed,
        "algorithms": args.algorithms,
        "trace_path": args.trace,
        "output_dir": args.out,
        "format": args.format,
        "workers": args.workers,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.strict_eq10:
        base["strict_eq10"] = True
    if args.timing:
        base["timing"] = True
    if args.offloaded_delay:
        base["delay_average"] = "offloaded"
    return ExperimentConfig.from_json(base)


def cmd_run(args) -> int:
    cfg = build_config(args)
    harness.check_output_dir(cfg.output_dir)
    t0 = time.perf_counter()
    result = harness.run_experiment(cfg)
    paths = harness.emit(result)
    print(f"{len(result.rows)} rows in {time.perf_counter() - t0:.1f} s")
    print(f"{'algorithm':<10} {'N':>5} {'tau':>5} {'delay_ms':>10} {'accuracy':>9} {'offloaded':>10}")
    for rec in result.summary:
        print(
            f"{rec['algorithm']:<10} {rec['n_users']:>5} {rec['tau']:>5.2f} "
            f"{rec['mean_delay_ms_mean']:>10.3f} {rec['accuracy_mean']:>9.4f} {rec['offload_count_mean']:>10.2f}"
        )
    for p in paths:
        print(f"wrote {p}")
    failed = sum(r.error is not None for r in result.rows)
    if failed:
        print(f"{failed} solver runs failed; see log", file=sys.stderr)
    return 0


def cmd_oracle_check(args) -> int:
    scen = ScenarioConfig(n_users=args.n_users, n_servers=args.n_servers, master_seed=args.seed)
    gaps, violations = [], []
    for it in range(args.count):
        inst = generate_instance(scen, None, it)
        oracle = solver.exhaustive(inst)
        g = solver.goa(inst, args.tau)
        others = [g, solver.dmin(inst), solver.edge_all(inst), solver.local_all(inst)]
        others.append(solver.random_k(inst, g.offload_count, np.random.default_rng([args.seed, it])))
        for rep in others:
            if oracle.objective > rep.objective:
                violations.append((it, rep.algorithm, oracle.objective, rep.objective))
        gaps.append(g.objective / oracle.objective - 1.0 if oracle.objective > 0 else 0.0)
    gaps = np.array(gaps)
    print(f"instances: {args.count}  N={args.n_users}  M={args.n_servers}  tau={args.tau}")
    print(f"goa optimal on {np.mean(gaps <= 1e-12):.1%} of instances")
    q = np.quantile(gaps, [0.0, 0.5, 0.9, 0.99, 1.0])
    print("goa/oracle - 1: min {:.3g}  median {:.3g}  p90 {:.3g}  p99 {:.3g}  max {:.3g}".format(*q))
    for it, name, o, v in violations:
        print(f"VIOLATION iteration {it}: oracle {o!r} > {name} {v!r}")
    print(f"dominance violations: {len(violations)}")
    return 1 if violations else 0


def cmd_validate_trace(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            trace = load_trace(args.path)
        except TraceError as e:
            print(f"{args.path}: {e}", file=sys.stderr)
            return 1
    for w in caught:
        print(f"warning: {w.message}")
    alpha = trace.alphas(args.metric)
    slm = np.mean([r.slm_correct for r in trace.records])
    llm = np.mean([r.llm_correct for r in trace.records])
    print(f"{args.path}: {len(trace)} records, {len(caught)} warnings")
    print(f"{args.metric} uncertainty: mean {alpha.mean():.4f}  min {alpha.min():.4f}  max {alpha.max():.4f}")
    print(f"accuracy: slm {slm:.4f}  llm {llm:.4f}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgeoffload", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo sweep over N and tau")
    run.add_argument("--config", help="JSON experiment config; flags override its values")
    run.add_argument("--n-users", type=_int_list, help="comma-separated N values")
    run.add_argument("--tau", type=_float_list, help="comma-separated tau values")
    run.add_argument("--metric", choices=sorted(METRICS))
    run.add_argument("--iterations", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--algorithms", type=_str_list, help=f"subset of {','.join(harness.ALGORITHMS)}")
    run.add_argument("--trace", help="JSONL uncertainty trace (default: synthetic model)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--workers", type=int)
    run.add_argument("--strict-eq10", action="store_true", help="count the local term once per server")
    run.add_argument("--timing", action="store_true", help="record solver wall times (output no longer reproducible)")
    run.add_argument("--offloaded-delay", action="store_true", help="average delay over offloaded users only")
    run.set_defaults(func=cmd_run)

    oc = sub.add_parser("oracle-check", help="compare solvers against exhaustive search on small instances")
    oc.add_argument("--count", type=int, default=200)
    oc.add_argument("--n-users", type=int, default=6)
    oc.add_argument("--n-servers", type=int, default=2)
    oc.add_argument("--tau", type=float, default=0.6)
    oc.add_argument("--seed", type=int, default=0)
    oc.set_defaults(func=cmd_oracle_check)

    vt = sub.add_parser("validate-trace", help="lint an uncertainty trace file")
    vt.add_argument("path")
    vt.add_argument("--metric", choices=sorted(METRICS), default="margin")
    vt.set_defaults(func=cmd_validate_trace)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TraceError, solver.SolverError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
