"""Populate the acceptance results directory, cheapest experiments first.

Usage: python scripts/run_acceptance_experiments.py [--only NAME ...]

Respects SEQREASON_RESULTS, SEQREASON_FRESH, SEQREASON_FULL and
SEQREASON_WORKERS. Already finished experiments are skipped.
"""
from __future__ import annotations

import argparse
import logging
import time

from seqreason.harness import acceptance


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", action="append", help="run only these plan entries")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    plan = list(acceptance.PLAN)
    if acceptance.full_enabled():
        plan += [("full vanilla suite", lambda: acceptance.full_suite("vanilla")),
                 ("full frozen-conv suite", lambda: acceptance.full_suite("frozen-conv"))]
    for name, fn in plan:
        if args.only and name not in args.only:
            continue
        t0 = time.time()
        fn()
        print(f"{name}: done in {time.time() - t0:.0f} s", flush=True)


if __name__ == "__main__":
    main()
