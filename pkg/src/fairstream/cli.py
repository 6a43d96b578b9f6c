"""Command-line interface.

Verbs:
  gen    write an instance JSON from a named generator
  run    run one engine on an instance, write the full run report
  eval   recompute the metrics row for a stored run report
  suite  run an adversarial lower-bound family and check its floor
  bench  compute the offline hindsight benchmark for an instance

Exit status is nonzero whenever an invariant fails: infeasible
allocation, infeasible dual certificate, a suite below its floor, or a
benchmark that is not (1 + 1e-4)-proportionally fair.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import engine, harness, metrics
from .model import (
    Allocation,
    DualCertificate,
    load_instance,
    save_instance,
)


def _parse_params(raw: str) -> dict:
    if not raw:
        return {}
    return json.loads(raw)


def _parse_pred(raw: str) -> harness.PredictionSpec:
    """Either "perfect" or comma-separated k=v pairs, e.g.
    "mode=uniform_log,c=2,d=2.5,seed=3"."""
    if raw == "perfect":
        return harness.PredictionSpec()
    fields: dict = {}
    for part in raw.split(","):
        key, _, value = part.partition("=")
        key = key.strip()
        if key == "mode":
            fields["mode"] = value.strip()
        elif key in ("c", "d"):
            fields[key] = float(value)
        elif key == "seed":
            fields["seed"] = int(value)
        else:
            raise ValueError(f"unknown prediction field {key!r}")
    return harness.PredictionSpec(**fields)


def _cmd_gen(args) -> int:
    spec = _parse_params(args.params)
    spec["family"] = args.family
    _, instance = harness.resolve_source(spec)
    save_instance(instance, args.out)
    print(f"wrote {args.out}: N={instance.num_agents} T={instance.num_rounds} "
          f"L={instance.batch_size} B={instance.budget}")
    return 0


def _cmd_run(args) -> int:
    instance = load_instance(args.instance)
    alpha = None if args.alpha == "auto" else float(args.alpha)
    pred = _parse_pred(args.pred)
    report = harness.run_cell(instance, args.algo, alpha, pred,
                              instance_id=args.instance,
                              with_benchmark=not args.no_benchmark)
    if args.format == "json":
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    else:
        harness.emit_tables([report], "csv", args.out)
    ok = harness.passes_invariants(report)
    status = "ok" if ok else "INVARIANT FAILURE"
    print(f"{args.algo} on {args.instance}: pf={report.pf_value:.6g} "
          f"alpha={report.alpha:.6g} nsw={report.nsw:.6g} [{status}]")
    for w in report.warnings:
        print(f"  warning: {w}")
    return 0 if ok else 1


def _cmd_eval(args) -> int:
    instance = load_instance(args.instance)
    with open(args.report) as fh:
        stored = json.load(fh)
    alloc = Allocation(np.asarray(stored["alloc"]["set_aside"], dtype=float),
                       np.asarray(stored["alloc"]["greedy"], dtype=float))
    cert = DualCertificate(q=float(stored["certificate"]["q"]),
                           p=np.asarray(stored["certificate"]["p"], dtype=float))
    pf = metrics.evaluate_pf(instance, alloc)
    feasible, bound = metrics.verify_certificate(instance, alloc, cert)
    nsw = metrics.nash_welfare(instance, alloc)
    bench = metrics.offline_pf_benchmark(instance)
    row = {
        "instance_id": args.instance,
        "algorithm": stored.get("algorithm", "?"),
        "alpha": stored.get("alpha"),
        "pf": pf.pf_value,
        "nsw": nsw,
        "nsw_ratio": metrics.nsw_ratio_report(instance, alloc, bench),
        "dual_bound": bound,
        "key_invariant_residual": stored.get("residuals", {}).get("key_invariant"),
    }
    columns = list(row.keys())
    if args.format == "json":
        with open(args.out, "w") as fh:
            json.dump(row, fh, indent=1)
    else:
        harness._write_csv([row], columns, args.out)
    ok = feasible and pf.pf_value <= bound + metrics.EPS_KKT * instance.budget + 1e-9
    print(f"eval {args.report}: pf={pf.pf_value:.6g} bound={bound:.6g} "
          f"dual_feasible={feasible}")
    return 0 if ok else 1


def _cmd_suite(args) -> int:
    params = _parse_params(args.params)
    report = harness.lower_bound_suite(args.family, **params)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    print(f"suite {args.family} {report.params}: floor={report.floor:.6g} "
          f"max_ratio={report.max_ratio:.6g} passed={report.passed}")
    return 0 if report.passed else 1


def _cmd_bench(args) -> int:
    instance = load_instance(args.instance)
    bench = metrics.offline_pf_benchmark(instance)
    payload = {
        "allocation": bench.allocation.tolist(),
        "nsw": bench.nsw,
        "pf_self_check": bench.pf_self_check,
        "gap": bench.gap,
        "iterations": bench.iterations,
        "degenerate": bench.degenerate,
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=1)
    ok = bench.degenerate or bench.pf_self_check <= 1.0 + 1e-4
    print(f"bench {args.instance}: nsw={bench.nsw:.6g} pf={bench.pf_self_check:.8f} "
          f"iters={bench.iterations}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairstream",
                                     description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance file")
    p.add_argument("--family", required=True, choices=sorted(harness.GENERATOR_FAMILIES))
    p.add_argument("--params", default="{}", help="generator kwargs as JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("run", help="run an engine on an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--algo", required=True, choices=["binary", "single", "batched"])
    p.add_argument("--alpha", default="auto", help="target level or 'auto' for certified")
    p.add_argument("--pred", default="perfect",
                   help="'perfect' or mode=..,c=..,d=..,seed=..")
    p.add_argument("--seed", type=int, default=0, help="prediction seed shortcut")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="json", choices=["csv", "json"])
    p.add_argument("--no-benchmark", action="store_true",
                   help="skip the offline benchmark (faster)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="recompute metrics for a stored run report")
    p.add_argument("--instance", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("suite", help="run an adversarial lower-bound family")
    p.add_argument("--family", required=True,
                   choices=["binary", "geometric", "prediction_hardness"])
    p.add_argument("--params", default="{}", help="family params as JSON")
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("bench", help="offline hindsight benchmark")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "pred", None) is not None and args.pred != "perfect" \
            and "seed=" not in args.pred and args.seed:
        args.pred = f"{args.pred},seed={args.seed}"
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
