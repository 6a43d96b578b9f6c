#!/usr/bin/env python3
"""Run the three adversarial lower-bound suites and print their floors.

Usage: python scripts/run_lower_bounds.py [--out DIR]
"""

import argparse
import json
import os

from fairstream.harness import lower_bound_suite


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="", help="directory for JSON suite reports")
    args = parser.parse_args()

    suites = [
        ("binary", {"n": 4}),
        ("binary", {"n": 6}),
        ("binary", {"n": 8}),
        ("geometric", {"t": 8, "b": 1, "m": 1e3}),
        ("prediction_hardness", {"b": 1, "t_prime": 6}),
    ]
    failures = 0
    for family, params in suites:
        report = lower_bound_suite(family, **params)
        tag = "PASS" if report.passed else "FAIL"
        print(f"[{tag}] {family} {params}: max ratio {report.max_ratio:.4f} "
              f">= floor {report.floor:.4f}")
        for entry in report.entries:
            print(f"       variant {entry.variant}: alg NSW {entry.alg_nsw:.6g}, "
                  f"comparator NSW {entry.comparator_nsw:.6g}, ratio {entry.nsw_ratio:.4f}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            name = f"{family}_" + "_".join(f"{k}{v:g}" for k, v in params.items()) + ".json"
            with open(os.path.join(args.out, name), "w") as fh:
                json.dump(report.to_dict(), fh, indent=1)
        failures += not report.passed
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
